"""Synthetic multi-label data sampled from known causal DAGs.

Used by the test-suite and the benchmarks to check structure recovery
against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataKind, MultiLabelDataset


@dataclass(frozen=True)
class SyntheticDag:
    dataset: MultiLabelDataset
    # parents[v] lists the parents of variable v, in dataset indexing
    parents: tuple[tuple[int, ...], ...]

    def pc(self, var: int) -> set[int]:
        children = {c for c, ps in enumerate(self.parents) if var in ps}
        return set(self.parents[var]) | children


def _random_parents(n_nodes: int, rng, edge_prob: float, max_parents: int):
    parents = []
    for j in range(n_nodes):
        cands = [i for i in range(j) if rng.random() < edge_prob]
        if len(cands) > max_parents:
            cands = sorted(rng.choice(cands, size=max_parents, replace=False).tolist())
        parents.append(tuple(cands))
    return parents


def _assemble(values: np.ndarray, parents, label_nodes, kind: DataKind) -> SyntheticDag:
    """Reorder topologically sampled columns so features come first."""
    n_nodes = values.shape[1]
    label_nodes = list(label_nodes)
    feature_nodes = [v for v in range(n_nodes) if v not in set(label_nodes)]
    order = feature_nodes + label_nodes
    where = {node: pos for pos, node in enumerate(order)}
    new_parents = tuple(tuple(sorted(where[p] for p in parents[node])) for node in order)
    m = len(feature_nodes)
    feats = values[:, feature_nodes]
    ds = MultiLabelDataset(
        features=feats.astype(np.int64) if kind is DataKind.DISCRETE else feats,
        labels=values[:, label_nodes].astype(np.int64),
        feature_names=tuple(f"f{i}" for i in range(m)),
        label_names=tuple(f"y{i}" for i in range(len(label_nodes))),
        data_kind=kind,
    )
    return SyntheticDag(ds, new_parents)


def _pick_labels(n_nodes, n_labels, rng, parents):
    # prefer nodes with at least one neighbour so labels have something to find
    linked = [v for v in range(n_nodes)
              if parents[v] or any(v in ps for ps in parents)]
    pool = linked if len(linked) >= n_labels else list(range(n_nodes))
    return sorted(rng.choice(pool, size=n_labels, replace=False).tolist())


def linear_gaussian_dag(n_nodes: int = 20, n_labels: int = 6, n_rows: int = 5000,
                        seed: int = 0, edge_prob: float = 0.2,
                        max_parents: int = 3) -> SyntheticDag:
    """Linear-Gaussian DAG whose label nodes are thresholded to 0/1.

    A label's children see its binary value, so the labels are genuine nodes
    of the sampled model.
    """
    rng = np.random.default_rng(seed)
    parents = _random_parents(n_nodes, rng, edge_prob, max_parents)
    labels = set(_pick_labels(n_nodes, n_labels, rng, parents))
    values = np.zeros((n_rows, n_nodes))
    for j in range(n_nodes):
        latent = rng.normal(size=n_rows)
        for p in parents[j]:
            w = rng.uniform(0.6, 1.2) * rng.choice((-1.0, 1.0))
            src = values[:, p] - 0.5 if p in labels else values[:, p]
            scale = 2.0 if p in labels else 1.0
            latent += w * scale * src / max(1.0, np.sqrt(len(parents[j])) * 0.75)
        if j in labels:
            values[:, j] = (latent > np.median(latent)).astype(float)
        else:
            values[:, j] = latent / latent.std()
    return _assemble(values, parents, sorted(labels), DataKind.CONTINUOUS)


def discrete_dag(n_nodes: int = 20, n_labels: int = 5, n_rows: int = 3000, seed: int = 0,
                 edge_prob: float = 0.2, max_parents: int = 2,
                 max_card: int = 3) -> SyntheticDag:
    """Random Bayesian network with strong, peaked conditional tables."""
    rng = np.random.default_rng(seed)
    parents = _random_parents(n_nodes, rng, edge_prob, max_parents)
    labels = set(_pick_labels(n_nodes, n_labels, rng, parents))
    cards = [2 if v in labels else int(rng.integers(2, max_card + 1)) for v in range(n_nodes)]
    values = np.zeros((n_rows, n_nodes), dtype=np.int64)
    for j in range(n_nodes):
        r = cards[j]
        ps = parents[j]
        n_configs = int(np.prod([cards[p] for p in ps])) if ps else 1
        # each parent configuration gets its own favoured value
        tables = rng.dirichlet(np.full(r, 0.6), size=n_configs)
        favoured = np.arange(n_configs) % r
        tables = 0.35 * tables
        tables[np.arange(n_configs), favoured] += 0.65
        config = np.zeros(n_rows, dtype=np.int64)
        for p in ps:
            config = config * cards[p] + values[:, p]
        u = rng.random(n_rows)[:, None]
        values[:, j] = (u > np.cumsum(tables[config], axis=1)).sum(axis=1).clip(max=r - 1)
    return _assemble(values, parents, sorted(labels), DataKind.DISCRETE)


def masked_parent_dag(n_rows: int = 10_000, seed: int = 0) -> SyntheticDag:
    """Five binary nodes where feature E reaches label C only through label D.

    Features A, B, E; labels C, D.  Edges: A->C, B->C, D->C, E->D.  Given D,
    E carries no information about C, so a learner that conditions on D
    discards E even though E and C are strongly associated marginally.
    """
    rng = np.random.default_rng(seed)

    def flip(base, noise):
        return np.where(rng.random(n_rows) < noise, 1 - base, base)

    a = (rng.random(n_rows) < 0.5).astype(np.int64)
    b = (rng.random(n_rows) < 0.5).astype(np.int64)
    e = (rng.random(n_rows) < 0.5).astype(np.int64)
    d = flip(e, 0.15)
    score = a + b + 2 * d
    c = (rng.random(n_rows) < np.array([0.1, 0.3, 0.5, 0.7, 0.9])[score]).astype(np.int64)
    values = np.column_stack([a, b, e, c, d])
    # column order: A B E | C D
    parents = ((), (), (), (0, 1, 4), (2,))
    ds = MultiLabelDataset(
        features=values[:, :3],
        labels=values[:, 3:],
        feature_names=("A", "B", "E"),
        label_names=("C", "D"),
        data_kind=DataKind.DISCRETE,
    )
    return SyntheticDag(ds, parents)
