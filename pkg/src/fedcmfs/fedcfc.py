"""Symmetry correction of label PC sets and the end-to-end selection pipeline."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import TextIO

from .dataset import MultiLabelDataset, PartitionPlan, partition_clients
from .federation import FederationHandle
from .fedcfl import DEFAULT_ALPHA, DEFAULT_MAX_COND, CandidateSet, fedcfl, sort_ascending
from .fedcfr import Witness, fedcfr

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FedCmfsParams:
    alpha: float = DEFAULT_ALPHA
    k1: float = 0.3
    k2: float = 0.3
    max_cond: int = DEFAULT_MAX_COND
    fedcfr_pseudocode_variant: bool = False
    # send each backward sweep as one round instead of one test per round
    prefetch: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        for name in ("k1", "k2"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1] (typically (0, 0.3]), got {value}")
        if self.max_cond < 1:
            raise ValueError(f"max_cond must be >= 1, got {self.max_cond}")


@dataclass
class SelectionResult:
    per_label_pc: dict[int, list[int]]
    selected: list[int]
    provenance: dict
    witnesses: list[dict] = field(default_factory=list)
    # run statistics: CI-test counts, cache use, timing; excluded from canonical()
    stats: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Everything that must not depend on caching, batching or threads."""
        return {
            "schema_version": SCHEMA_VERSION,
            "per_label_pc": {str(k): v for k, v in sorted(self.per_label_pc.items())},
            "selected": self.selected,
            "witnesses": self.witnesses,
            "provenance": self.provenance,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical(), sort_keys=True).encode()

    def to_dict(self) -> dict:
        out = self.canonical()
        out["stats"] = self.stats
        return out

    @classmethod
    def from_dict(cls, d: dict) -> SelectionResult:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('schema_version')}")
        return cls(
            per_label_pc={int(k): list(v) for k, v in d["per_label_pc"].items()},
            selected=list(d["selected"]),
            provenance=d["provenance"],
            witnesses=list(d.get("witnesses", [])),
            stats=d.get("stats", {}),
        )


def fedcfc(handle: FederationHandle, pc_sr: dict[int, CandidateSet], k2: float,
           max_cond: int = DEFAULT_MAX_COND, alpha: float = DEFAULT_ALPHA,
           prefetch: bool = True) -> dict[int, CandidateSet]:
    """Drop the weakest ``k2`` share of each PC set unless the symmetric check confirms it.

    A feature ``F`` stays in ``PC(Y)`` only if ``Y`` shows up in the PC set
    learned for ``F`` itself.
    """
    if not 0 < k2 <= 1:
        raise ValueError(f"k2 must be in (0, 1], got {k2}")
    out = {}
    for label in sorted(pc_sr):
        pc = pc_sr[label].copy()
        weakest = sort_ascending(pc.entries)[:math.ceil(k2 * len(pc))]
        for entry in weakest:
            f = entry.variable
            pc_f = fedcfl(handle, [f], alpha, max_cond, prefetch)[f]
            if label not in pc_f:
                pc.remove(f)
        out[label] = pc
    return out


def run_on_handle(handle: FederationHandle, labels: list[int],
                  params: FedCmfsParams) -> tuple[dict[int, CandidateSet], list[Witness]]:
    pc = fedcfl(handle, labels, params.alpha, params.max_cond, params.prefetch)
    pc_sr, witnesses = fedcfr(handle, pc, params.k1, params.max_cond, params.alpha,
                              params.fedcfr_pseudocode_variant, params.prefetch)
    pc_final = fedcfc(handle, pc_sr, params.k2, params.max_cond, params.alpha, params.prefetch)
    return pc_final, witnesses


def run_fedcmfs(dataset: MultiLabelDataset, plan: PartitionPlan,
                params: FedCmfsParams | None = None, *, cache_enabled: bool = True,
                batch_size: int = 100, n_workers: int = 1,
                trace: TextIO | None = None) -> SelectionResult:
    """Partition ``dataset`` over simulated clients and select causal features."""
    params = params or FedCmfsParams()
    start = time.perf_counter()
    shards = partition_clients(dataset, plan)
    with FederationHandle.from_shards(dataset, shards, cache_enabled=cache_enabled,
                                      batch_size=batch_size, n_workers=n_workers,
                                      trace=trace) as handle:
        final, witnesses = run_on_handle(handle, dataset.label_ids, params)
        per_label = {label: pc.variables for label, pc in final.items()}
        selected = sorted({f for vs in per_label.values() for f in vs})
        provenance = {
            "seed": plan.seed,
            "n_clients": plan.n_clients,
            "fraction_range": [plan.fraction_low, plan.fraction_high],
            "client_weights": [sh.weight for sh in shards],
            "n_samples": dataset.n_samples,
            "n_features": dataset.n_features,
            "n_labels": dataset.n_labels,
            "data_kind": dataset.data_kind.value,
            **asdict(params),
        }
        stats = {
            "ci_tests_per_client": handle.test_counter,
            "ci_tests_total": sum(handle.test_counter),
            "rounds": handle.rounds,
            "cache_enabled": cache_enabled,
            "cache": [c.cache.stats() if c.cache is not None else None
                      for c in handle.clients],
            "batch_size": batch_size,
            "n_workers": n_workers,
            "wall_seconds": time.perf_counter() - start,
        }
    return SelectionResult(
        per_label_pc=per_label,
        selected=selected,
        provenance=provenance,
        witnesses=[w.to_dict() for w in witnesses],
        stats=stats,
    )
