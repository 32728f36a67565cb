"""Conditional-independence tests evaluated on a single client's rows.

Discrete data uses the G-squared likelihood-ratio test, continuous data
Fisher's z-transform of the partial correlation.  Queries are answered in
batches; a :class:`CiCache` memoizes results so repeated requests are free.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .dataset import DataKind

CLAMP_EPS = 1e-7
RIDGE_EPS = 1e-10
# a precision-matrix diagonal above this marks the correlation block singular
SINGULAR_LIMIT = 1e12
RELIABILITY_FACTOR = 5


@dataclass(frozen=True)
class CiQuery:
    """Test ``target`` against ``other`` given the conditioning set ``cond``."""

    target: int
    other: int
    cond: tuple[int, ...] = ()

    def __post_init__(self):
        cond = tuple(sorted(set(int(c) for c in self.cond)))
        object.__setattr__(self, "cond", cond)
        if self.target == self.other:
            raise ValueError(f"target and other are both {self.target}")
        if self.target in cond or self.other in cond:
            raise ValueError(f"conditioning set {cond} contains a tested variable")

    @property
    def key(self) -> tuple[int, int, tuple[int, ...]]:
        a, b = sorted((self.target, self.other))
        return a, b, self.cond

    def to_dict(self) -> dict:
        return {"target": self.target, "other": self.other, "cond": list(self.cond)}


@dataclass(frozen=True)
class CiResult:
    statistic: float
    correlation: float
    p_value: float
    reliable: bool = True
    degenerate: bool = False
    error: str | None = None


def _degenerate(error: str | None = None) -> CiResult:
    return CiResult(0.0, 0.0, 1.0, reliable=error is None, degenerate=True, error=error)


def _unreliable() -> CiResult:
    return CiResult(0.0, 0.0, 1.0, reliable=False)


class ShardView:
    """Read-only access to one client's ``rows x variables`` matrix.

    Sufficient statistics (observed category codes, the correlation matrix)
    are built lazily once per shard.
    """

    def __init__(self, data: np.ndarray, kind: DataKind):
        self.data = data
        self.kind = DataKind(kind)
        self._lock = threading.Lock()
        self._codes = None
        self._cards = None
        self._corr = None
        self._constant = None

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_vars(self) -> int:
        return self.data.shape[1]

    def _discrete_stats(self):
        with self._lock:
            if self._codes is None:
                codes = np.empty(self.data.shape, dtype=np.int64)
                cards = np.empty(self.n_vars, dtype=np.int64)
                for j in range(self.n_vars):
                    uniq, inv = np.unique(self.data[:, j], return_inverse=True)
                    codes[:, j] = inv
                    cards[j] = len(uniq)
                self._codes, self._cards = codes, cards
        return self._codes, self._cards

    @property
    def codes(self) -> np.ndarray:
        return self._discrete_stats()[0]

    @property
    def cardinalities(self) -> np.ndarray:
        """Number of distinct values each variable takes within this shard."""
        return self._discrete_stats()[1]

    def _continuous_stats(self):
        with self._lock:
            if self._corr is None:
                x = np.asarray(self.data, dtype=np.float64)
                centered = x - x.mean(axis=0)
                cov = centered.T @ centered
                std = np.sqrt(np.diag(cov))
                constant = std <= 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0)) * math.sqrt(len(x))
                std[constant] = 1.0
                corr = cov / np.outer(std, std)
                corr[constant, :] = 0.0
                corr[:, constant] = 0.0
                np.fill_diagonal(corr, 1.0)
                self._corr, self._constant = corr, constant
        return self._corr, self._constant

    @property
    def correlation_matrix(self) -> np.ndarray:
        return self._continuous_stats()[0]

    @property
    def constant(self) -> np.ndarray:
        if self.kind is DataKind.DISCRETE:
            return self.cardinalities <= 1
        return self._continuous_stats()[1]


# -- G-squared ---------------------------------------------------------------


def g2_test(view: ShardView, q: CiQuery) -> CiResult:
    """G-squared test of ``q`` on discrete data.

    Degrees of freedom use the category counts observed in this shard; empty
    cells contribute nothing to the statistic.
    """
    if view.kind is not DataKind.DISCRETE:
        raise TypeError("g2_test needs discrete data")
    x, y, cond = q.key
    codes, cards = view.codes, view.cardinalities
    rx, ry = int(cards[x]), int(cards[y])
    df = (rx - 1) * (ry - 1)
    for c in cond:
        df *= int(cards[c])
    if df == 0:
        return _degenerate()
    n = view.n_rows

    if cond:
        strata = np.zeros(n, dtype=np.int64)
        n_strata = 1
        for c in cond:
            strata = strata * cards[c] + codes[:, c]
            n_strata *= int(cards[c])
        if n_strata > n:
            _, strata = np.unique(strata, return_inverse=True)
            n_strata = int(strata.max()) + 1
    else:
        strata = np.zeros(n, dtype=np.int64)
        n_strata = 1
    cell = (strata * rx + codes[:, x]) * ry + codes[:, y]
    s_xyz = np.bincount(cell, minlength=n_strata * rx * ry).reshape(n_strata, rx, ry)
    s_xz = s_xyz.sum(axis=2)
    s_yz = s_xyz.sum(axis=1)
    s_z = s_xz.sum(axis=1)

    nz = s_xyz > 0
    num = s_xyz * s_z[:, None, None]
    den = s_xz[:, :, None] * s_yz[:, None, :]
    g2 = 2.0 * float(np.sum(s_xyz[nz] * np.log(num[nz] / den[nz])))
    g2 = max(g2, 0.0)
    p = float(special.chdtrc(df, g2))
    strength = g2 / (2.0 * n * math.log(min(rx, ry)))
    return CiResult(
        statistic=g2,
        correlation=min(max(strength, 0.0), 1.0),
        p_value=min(max(p, 0.0), 1.0),
        reliable=n >= RELIABILITY_FACTOR * df,
    )


# -- Fisher's z ---------------------------------------------------------------


def _partial_from_blocks(blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial correlation of the first two variables of each correlation block.

    Returns ``(r, degenerate)``; singular blocks get a ridge retry, then r=0.
    """
    k = blocks.shape[-1]
    try:
        prec = np.linalg.inv(blocks)
    except np.linalg.LinAlgError:
        prec = np.empty_like(blocks)
        for b in range(len(blocks)):
            try:
                prec[b] = np.linalg.inv(blocks[b])
            except np.linalg.LinAlgError:
                prec[b] = np.inf
    diag = np.diagonal(prec, axis1=1, axis2=2)
    bad = (~np.isfinite(prec).all(axis=(1, 2)) | (diag.max(axis=1) > SINGULAR_LIMIT)
           | (diag[:, :2] <= 0).any(axis=1))
    degenerate = np.zeros(len(blocks), dtype=bool)
    for b in np.nonzero(bad)[0]:
        try:
            retry = np.linalg.inv(blocks[b] + RIDGE_EPS * np.eye(k))
        except np.linalg.LinAlgError:
            retry = None
        if retry is None or not np.isfinite(retry).all() \
                or np.diag(retry).max() > SINGULAR_LIMIT or (np.diag(retry)[:2] <= 0).any():
            prec[b] = np.eye(k)
            degenerate[b] = True
        else:
            prec[b] = retry
    r = -prec[:, 0, 1] / np.sqrt(prec[:, 0, 0] * prec[:, 1, 1])
    r[degenerate] = 0.0
    return r, degenerate


def _partial_correlations(view: ShardView, index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    corr = view.correlation_matrix
    if index.shape[1] == 2:
        return corr[index[:, 0], index[:, 1]].copy(), np.zeros(len(index), dtype=bool)
    blocks = corr[index[:, :, None], index[:, None, :]]
    return _partial_from_blocks(blocks)


def partial_correlation(view: ShardView, i: int, j: int, cond=()) -> float:
    """Partial correlation of variables ``i`` and ``j`` given ``cond``.

    Read off the precision matrix of the correlation block; returns 0.0 when
    the block stays singular after a ridge retry.
    """
    index = np.array([[i, j, *sorted(cond)]], dtype=np.int64)
    r, _ = _partial_correlations(view, index)
    return float(r[0])


def _fisher_batch(view: ShardView, queries: list[CiQuery]) -> list[CiResult]:
    out: list[CiResult | None] = [None] * len(queries)
    m = view.n_rows
    constant = view.constant
    by_size: dict[int, list[int]] = {}
    for pos, q in enumerate(queries):
        by_size.setdefault(len(q.cond), []).append(pos)
    for k, positions in sorted(by_size.items()):
        dof = m - k - 3
        if dof <= 0:
            for pos in positions:
                out[pos] = _unreliable()
            continue
        index = np.array(
            [[*queries[pos].key[:2], *queries[pos].cond] for pos in positions], dtype=np.int64
        )
        r, degenerate = _partial_correlations(view, index)
        degenerate |= constant[index[:, :2]].any(axis=1)
        r = np.clip(r, -1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS)
        z = 0.5 * math.sqrt(dof) * np.log((1.0 + r) / (1.0 - r))
        p = 2.0 * special.ndtr(-np.abs(z))
        for n, pos in enumerate(positions):
            if degenerate[n]:
                out[pos] = _degenerate()
            else:
                out[pos] = CiResult(float(z[n]), float(r[n]), min(float(p[n]), 1.0))
    return out


def fishers_z_test(view: ShardView, q: CiQuery) -> CiResult:
    """Fisher's z test of ``q``; binary labels enter as 0/1 numeric columns."""
    if view.kind is not DataKind.CONTINUOUS:
        raise TypeError("fishers_z_test needs continuous data")
    return _fisher_batch(view, [q])[0]


def _g2_batch(view: ShardView, queries: list[CiQuery]) -> list[CiResult]:
    return [g2_test(view, q) for q in queries]


def compute_batch(view: ShardView, queries: list[CiQuery]) -> list[CiResult]:
    """Evaluate ``queries`` without any caching; bad queries yield error results."""
    if not queries:
        return []
    n_vars = view.n_vars
    valid = []
    out: list[CiResult | None] = [None] * len(queries)
    for pos, q in enumerate(queries):
        if max(q.target, q.other, *q.cond) >= n_vars or min(q.target, q.other, *q.cond) < 0:
            out[pos] = _degenerate(f"variable index out of range in {q}")
        else:
            valid.append(pos)
    kernel = _g2_batch if view.kind is DataKind.DISCRETE else _fisher_batch
    try:
        results = kernel(view, [queries[p] for p in valid])
    except Exception:
        results = []
        for p in valid:
            try:
                results.extend(kernel(view, [queries[p]]))
            except Exception as exc:  # one bad query must not sink the batch
                results.append(_degenerate(f"{type(exc).__name__}: {exc}"))
    for p, res in zip(valid, results):
        out[p] = res
    return out


class CiCache:
    """Thread-safe memo of CI results keyed by the unordered tested pair."""

    def __init__(self):
        self._store: dict[tuple, CiResult] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, q: CiQuery) -> bool:
        return q.key in self._store

    def get(self, q: CiQuery) -> CiResult | None:
        with self._lock:
            res = self._store.get(q.key)
            if res is None:
                self.misses += 1
            else:
                self.hits += 1
            return res

    def put(self, q: CiQuery, result: CiResult) -> None:
        with self._lock:
            self._store[q.key] = result

    def stats(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "entries": len(self._store)}


def run_batch(view: ShardView, queries: list[CiQuery], cache: CiCache | None = None,
              batch_size: int = 100, executor: Executor | None = None) -> list[CiResult]:
    """Answer ``queries`` positionally, consulting and filling ``cache``.

    Misses are evaluated in chunks of ``batch_size``; chunks are spread over
    ``executor`` when one is given. A query repeated inside the batch is
    computed once and counted as a cache hit for its later occurrences.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    results: list[CiResult | None] = [None] * len(queries)
    todo: list[CiQuery] = []
    slots: list[list[int]] = []
    if cache is None:
        todo = list(queries)
        slots = [[pos] for pos in range(len(queries))]
    else:
        pending: dict[tuple, int] = {}
        for pos, q in enumerate(queries):
            slot = pending.get(q.key)
            if slot is not None:
                with cache._lock:
                    cache.hits += 1
                slots[slot].append(pos)
                continue
            hit = cache.get(q)
            if hit is not None:
                results[pos] = hit
                continue
            pending[q.key] = len(todo)
            todo.append(q)
            slots.append([pos])

    chunks = [todo[i:i + batch_size] for i in range(0, len(todo), batch_size)]
    if executor is not None and len(chunks) > 1:
        computed = list(executor.map(lambda ch: compute_batch(view, ch), chunks))
    else:
        computed = [compute_batch(view, ch) for ch in chunks]
    flat = [res for chunk in computed for res in chunk]
    for q, res, positions in zip(todo, flat, slots):
        if cache is not None:
            cache.put(q, res)
        for pos in positions:
            results[pos] = res
    return results
