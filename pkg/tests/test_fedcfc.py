import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from oracle import oracle_for
from fedcmfs.dataset import ClientShard, PartitionPlan, partition_clients
from fedcmfs.federation import FederationHandle
from fedcmfs.fedcfl import CandidateSet, fedcfl, sort_ascending
from fedcmfs.fedcfc import FedCmfsParams, SelectionResult, fedcfc, run_fedcmfs
from fedcmfs.fedcfr import fedcfr
from fedcmfs.synthetic import discrete_dag, linear_gaussian_dag


def pooled(ds, **kw):
    return FederationHandle.from_shards(ds, [ClientShard(0, tuple(range(ds.n_samples)))], **kw)


def grandchild_dataset(n=6000, seed=0):
    """Y -> C <- S, C -> X, S -> X: X looks like a neighbour of Y unless S is known."""
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, n)
    s = r.standard_normal(n)
    c = 1.5 * y + s + r.standard_normal(n)
    x = c + 2.5 * s + 0.7 * r.standard_normal(n)
    return make_dataset(np.column_stack([c, s, x]), y)


def test_symmetry_removes_grandchild():
    ds = grandchild_dataset()
    shards = partition_clients(ds, PartitionPlan(3, 0.4, 0.6, 0))
    with FederationHandle.from_shards(ds, shards) as h:
        pc = fedcfl(h, [3])
        assert set(pc[3].variables) == {0, 2}
        assert sort_ascending(pc[3].entries)[0].variable == 2
        assert 3 not in fedcfl(h, [2])[2]
        out = fedcfc(h, pc, k2=0.3)
    assert out[3].variables == [0]
    assert oracle_for(ds).select()[3] == [0]


def test_symmetric_feature_is_kept():
    ds = grandchild_dataset()
    with pooled(ds) as h:
        pc = CandidateSet(3, [e for e in fedcfl(h, [3])[3].entries if e.variable == 0])
        assert fedcfc(h, {3: pc}, k2=1.0)[3].variables == [0]


def test_empty_pc_costs_nothing(rng):
    ds = make_dataset(rng.standard_normal((80, 3)), rng.integers(0, 2, 80))
    with pooled(ds) as h:
        out = fedcfc(h, {3: CandidateSet(3)}, k2=0.3)
        assert h.rounds == 0
    assert len(out[3]) == 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 500), discrete=st.booleans(), k2=st.sampled_from([0.1, 0.3, 1.0]))
def test_only_audited_features_drop(seed, discrete, k2):
    gen = discrete_dag if discrete else linear_gaussian_dag
    ds = gen(n_nodes=12, n_labels=3, n_rows=800, seed=seed).dataset
    with pooled(ds) as h:
        pc_sr, _ = fedcfr(h, fedcfl(h, ds.label_ids), 0.3)
        out = fedcfc(h, pc_sr, k2)
    for label, pc in pc_sr.items():
        kept = set(out[label].variables)
        assert kept <= set(pc.variables)
        audited = {e.variable for e in sort_ascending(pc.entries)[:int(np.ceil(k2 * len(pc)))]}
        assert set(pc.variables) - audited <= kept


def test_k2_range(rng):
    ds = make_dataset(rng.standard_normal((40, 2)), rng.integers(0, 2, 40))
    with pooled(ds) as h:
        with pytest.raises(ValueError):
            fedcfc(h, {}, 0)


@pytest.mark.parametrize("kwargs", [dict(alpha=0), dict(k1=0), dict(k2=1.5), dict(max_cond=0)])
def test_params_validated(kwargs):
    with pytest.raises(ValueError):
        FedCmfsParams(**kwargs)


def test_chd_like_smoke():
    ds = linear_gaussian_dag(n_nodes=55, n_labels=6, n_rows=555, seed=49, edge_prob=0.06).dataset
    assert (ds.n_samples, ds.n_features, ds.n_labels) == (555, 49, 6)
    res = run_fedcmfs(ds, PartitionPlan(3, 0.4, 0.6, 0))
    assert res.selected
    assert res.selected == sorted({f for v in res.per_label_pc.values() for f in v})
    assert all(f < ds.n_features for f in res.selected)
    assert res.stats["ci_tests_total"] == sum(res.stats["ci_tests_per_client"])


def test_result_round_trip():
    ds = discrete_dag(n_nodes=12, n_labels=3, n_rows=1000, seed=3).dataset
    res = run_fedcmfs(ds, PartitionPlan(3, 0.4, 0.6, 2))
    back = SelectionResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert back.canonical_bytes() == res.canonical_bytes()
    assert back.stats == res.stats
    assert "stats" not in res.canonical()
    with pytest.raises(ValueError):
        SelectionResult.from_dict({**res.to_dict(), "schema_version": 99})


def test_pipeline_deterministic_across_threads():
    ds = linear_gaussian_dag(n_nodes=18, n_labels=4, n_rows=2000, seed=8).dataset
    plan = PartitionPlan(3, 0.4, 0.6, 4)
    a = run_fedcmfs(ds, plan)
    b = run_fedcmfs(ds, plan, n_workers=4, batch_size=5)
    assert a.canonical_bytes() == b.canonical_bytes()


def test_provenance_fields():
    ds = discrete_dag(n_nodes=10, n_labels=2, n_rows=600, seed=0).dataset
    res = run_fedcmfs(ds, PartitionPlan(3, 0.4, 0.6, 6), FedCmfsParams(k1=0.2))
    prov = res.provenance
    assert prov["seed"] == 6 and prov["n_clients"] == 3 and prov["k1"] == 0.2
    assert prov["alpha"] == 0.05 and prov["max_cond"] == 3
    assert len(prov["client_weights"]) == 3
    assert "wall_seconds" in res.stats
