"""Federated parent/child learning for a target variable (HITON-PC style).

Phase I screens every other variable against the target with an empty
conditioning set in one batched round.  Phase II admits the survivors in
order of association strength and, after each admission, drops any member
that some subset of the remaining members renders independent of the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .citest import CiQuery
from .federation import FederationHandle, decide_independent

DEFAULT_ALPHA = 0.05
DEFAULT_MAX_COND = 3


@dataclass(frozen=True)
class CorrelationEntry:
    variable: int
    c: float
    p: float

    @property
    def strength(self) -> float:
        return abs(self.c)


@dataclass
class CandidateSet:
    target: int
    entries: list[CorrelationEntry] = field(default_factory=list)

    @property
    def variables(self) -> list[int]:
        return [e.variable for e in self.entries]

    def __contains__(self, var: int) -> bool:
        return any(e.variable == var for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, var: int) -> CorrelationEntry:
        for e in self.entries:
            if e.variable == var:
                return e
        raise KeyError(var)

    def remove(self, var: int) -> None:
        self.entries = [e for e in self.entries if e.variable != var]

    def copy(self) -> CandidateSet:
        return CandidateSet(self.target, list(self.entries))


def sort_descending(entries) -> list[CorrelationEntry]:
    """Strongest association first; equal strengths by ascending variable index."""
    return sorted(entries, key=lambda e: (-e.strength, e.variable))


def sort_ascending(entries) -> list[CorrelationEntry]:
    return sorted(entries, key=lambda e: (e.strength, e.variable))


def conditioning_sets(members, max_size: int):
    """Subsets of ``members`` by increasing size, lexicographic within a size."""
    members = sorted(members)
    for size in range(min(max_size, len(members)) + 1):
        yield from combinations(members, size)


def phase1_screen(handle: FederationHandle, targets, alpha: float = DEFAULT_ALPHA
                  ) -> dict[int, CandidateSet]:
    targets = list(targets)
    queries = [CiQuery(t, v) for t in targets for v in range(handle.n_vars) if v != t]
    aggs = iter(handle.ask(queries))
    out = {}
    for t in targets:
        kept = []
        for v in range(handle.n_vars):
            if v == t:
                continue
            agg = next(aggs)
            if not decide_independent(agg, alpha):
                kept.append(CorrelationEntry(v, agg.weighted_c, agg.weighted_p))
        out[t] = CandidateSet(t, sort_descending(kept))
    return out


def phase2_forward_backward(handle: FederationHandle, m_i: CandidateSet,
                            max_cond: int = DEFAULT_MAX_COND, alpha: float = DEFAULT_ALPHA,
                            prefetch: bool = True) -> CandidateSet:
    """Forward-backward pass over the screened candidates of one target.

    With ``prefetch`` every test a sweep could need is sent in one round and
    the removals are then replayed in order; the outcome is the same as
    asking one test at a time, at the price of some tests past a removal.
    """
    if max_cond < 1:
        raise ValueError("max_cond must be >= 1")
    target = m_i.target
    cpc = CandidateSet(target)
    for entry in m_i.entries:
        cpc.entries.append(entry)
        members = cpc.variables
        verdicts: dict[tuple, bool] = {}
        if prefetch:
            plan = [(vk, cs) for vk in members
                    for cs in conditioning_sets([v for v in members if v != vk], max_cond)]
            aggs = handle.ask([CiQuery(target, vk, cs) for vk, cs in plan])
            verdicts = {key: decide_independent(agg, alpha) for key, agg in zip(plan, aggs)}
        for vk in members:
            if vk not in cpc:
                continue
            others = [v for v in cpc.variables if v != vk]
            for cs in conditioning_sets(others, max_cond):
                independent = verdicts.get((vk, cs))
                if independent is None:
                    agg = handle.ask([CiQuery(target, vk, cs)])[0]
                    independent = decide_independent(agg, alpha)
                if independent:
                    cpc.remove(vk)
                    break
    return cpc


def fedcfl(handle: FederationHandle, targets, alpha: float = DEFAULT_ALPHA,
           max_cond: int = DEFAULT_MAX_COND, prefetch: bool = True) -> dict[int, CandidateSet]:
    """Candidate parent/child set of every target, learned over the federation."""
    screened = phase1_screen(handle, targets, alpha)
    return {t: phase2_forward_backward(handle, m_i, max_cond, alpha, prefetch)
            for t, m_i in screened.items()}
