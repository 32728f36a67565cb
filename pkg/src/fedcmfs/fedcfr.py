"""Recover features that label-label dependence hid from a label's PC set.

When another label ``Y_j`` sits in ``PC(Y_i)``, a true parent of ``Y_i`` can
look independent of it once ``Y_j`` is conditioned on.  Such a feature is
re-admitted when some set ``S`` containing ``Y_j`` separates it from ``Y_i``
while ``S - {Y_j}`` does not.  Labels are then dropped from every PC set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from .citest import CiQuery
from .federation import FederationHandle, decide_independent
from .fedcfl import DEFAULT_ALPHA, DEFAULT_MAX_COND, CandidateSet, sort_descending, \
    CorrelationEntry


@dataclass(frozen=True)
class Witness:
    """The pair of tests that justified re-admitting ``added_feature``."""

    label: int
    masking_label: int
    added_feature: int
    separating_set: tuple[int, ...]
    p_with: float
    p_without: float

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "masking_label": self.masking_label,
            "added_feature": self.added_feature,
            "S": list(self.separating_set),
            "p_S": self.p_with,
            "p_S_minus_label": self.p_without,
        }


def identify_candidates(handle: FederationHandle, label: int, pc: CandidateSet, k1: float,
                        alpha: float = DEFAULT_ALPHA,
                        pseudocode_variant: bool = False) -> CandidateSet:
    """Discarded features still associated with ``label``, strongest ``k1`` share.

    With ``pseudocode_variant`` the features judged *independent* are kept
    instead, for sensitivity runs.
    """
    if not 0 < k1 <= 1:
        raise ValueError(f"k1 must be in (0, 1], got {k1}")
    if not any(handle.is_label(v) for v in pc.variables):
        return CandidateSet(label)
    features = [f for f in range(handle.n_features) if f not in pc]
    aggs = handle.ask([CiQuery(label, f) for f in features])
    kept = [
        CorrelationEntry(f, agg.weighted_c, agg.weighted_p)
        for f, agg in zip(features, aggs)
        if decide_independent(agg, alpha) == pseudocode_variant
    ]
    kept = sort_descending(kept)
    return CandidateSet(label, kept[:math.ceil(k1 * len(kept))])


def retrieve_missed(handle: FederationHandle, label: int, pc: CandidateSet,
                    candidates: CandidateSet, max_cond: int = DEFAULT_MAX_COND,
                    alpha: float = DEFAULT_ALPHA,
                    prefetch: bool = True) -> tuple[CandidateSet, list[Witness]]:
    """Add certified candidates to ``pc`` and strip every label from it."""
    pc = pc.copy()
    witnesses = []
    masking_labels = sorted(v for v in pc.variables if handle.is_label(v))
    for yj in masking_labels:
        # S ranges over the membership at the start of this label's pass
        rest = sorted(v for v in pc.variables if v != yj)
        extras = [extra for size in range(min(max_cond - 1, len(rest)) + 1)
                  for extra in combinations(rest, size)]
        for cand in candidates.entries:
            x = cand.variable
            if x in pc:
                continue
            pairs = [(CiQuery(x, label, (yj, *extra)), CiQuery(x, label, extra))
                     for extra in extras]
            if prefetch:
                aggs = handle.ask([q for pair in pairs for q in pair])
                answers = iter(zip(aggs[::2], aggs[1::2]))
            else:
                answers = (tuple(handle.ask(list(pair))) for pair in pairs)
            for (with_q, _), (with_yj, without_yj) in zip(pairs, answers):
                if decide_independent(with_yj, alpha) and \
                        not decide_independent(without_yj, alpha):
                    pc.entries.append(cand)
                    witnesses.append(Witness(label, yj, x, with_q.cond, with_yj.weighted_p,
                                             without_yj.weighted_p))
                    break
        pc.remove(yj)
    return pc, witnesses


def fedcfr(handle: FederationHandle, pc_map: dict[int, CandidateSet], k1: float,
           max_cond: int = DEFAULT_MAX_COND, alpha: float = DEFAULT_ALPHA,
           pseudocode_variant: bool = False, prefetch: bool = True
           ) -> tuple[dict[int, CandidateSet], list[Witness]]:
    out = {}
    witnesses: list[Witness] = []
    for label in sorted(pc_map):
        pc = pc_map[label]
        if not any(handle.is_label(v) for v in pc.variables):
            out[label] = pc.copy()
            continue
        cands = identify_candidates(handle, label, pc, k1, alpha, pseudocode_variant)
        out[label], found = retrieve_missed(handle, label, pc, cands, max_cond, alpha,
                                             prefetch)
        witnesses.extend(found)
    return out, witnesses
