"""In-process client/server exchange of CI-test requests and results.

The server only ever sees ``(query, C, P, reliable)`` tuples and client
weights; raw rows stay inside :class:`Client`.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TextIO

from .citest import CiCache, CiQuery, CiResult, ShardView, run_batch
from .dataset import ClientShard, MultiLabelDataset


class ProtocolError(RuntimeError):
    """Responses that do not line up with their request (an implementation bug)."""


@dataclass(frozen=True)
class TestRequest:
    __test__ = False

    request_id: int
    queries: tuple[CiQuery, ...]


@dataclass(frozen=True)
class TestResponse:
    __test__ = False

    request_id: int
    client_id: int
    results: tuple[CiResult, ...]


@dataclass(frozen=True)
class AggregateResult:
    weighted_p: float
    weighted_c: float
    any_unreliable: bool


class Client:
    def __init__(self, shard: ClientShard, view: ShardView, cache_enabled: bool = True):
        self.shard = shard
        self.view = view
        self.cache = CiCache() if cache_enabled else None
        self.n_tests = 0

    @property
    def client_id(self) -> int:
        return self.shard.client_id

    @property
    def weight(self) -> int:
        return self.shard.weight

    def answer(self, request: TestRequest, batch_size: int = 100, executor=None) -> TestResponse:
        before = self.cache.misses if self.cache is not None else 0
        results = run_batch(self.view, list(request.queries), self.cache,
                            batch_size=batch_size, executor=executor)
        if self.cache is None:
            self.n_tests += len(request.queries)
        else:
            self.n_tests += self.cache.misses - before
        return TestResponse(request.request_id, self.client_id, tuple(results))


class FederationHandle:
    """Server-side view of the federation: the clients plus run settings."""

    def __init__(self, clients: list[Client], batch_size: int = 100, n_workers: int = 1,
                 trace: TextIO | None = None, n_features: int | None = None):
        if not clients:
            raise ValueError("a federation needs at least one client")
        self.clients = clients
        self.n_vars = clients[0].view.n_vars
        # variables at or beyond this index are labels
        self.n_features = self.n_vars if n_features is None else n_features
        self.batch_size = batch_size
        self.n_workers = n_workers
        self.trace = trace
        self.rounds = 0
        self._next_id = 0
        self._executor = ThreadPoolExecutor(n_workers) if n_workers > 1 else None
        if self.total_weight <= 0:
            raise ValueError("total client weight must be positive")

    @classmethod
    def from_shards(cls, ds: MultiLabelDataset, shards: list[ClientShard],
                    cache_enabled: bool = True, **kwargs) -> FederationHandle:
        clients = [
            Client(sh, ShardView(ds.data[list(sh.row_indices)], ds.data_kind), cache_enabled)
            for sh in shards
        ]
        return cls(clients, n_features=ds.n_features, **kwargs)

    def is_label(self, var: int) -> bool:
        return var >= self.n_features

    @property
    def total_weight(self) -> int:
        return sum(c.weight for c in self.clients)

    @property
    def test_counter(self) -> list[int]:
        return [c.n_tests for c in self.clients]

    def new_request(self, queries) -> TestRequest:
        req = TestRequest(self._next_id, tuple(queries))
        self._next_id += 1
        return req

    def ask(self, queries: list[CiQuery]) -> list[AggregateResult]:
        """One server round: broadcast ``queries`` and aggregate every position."""
        if not queries:
            return []
        responses = broadcast(self, self.new_request(queries))
        return [aggregate(self, responses, pos) for pos in range(len(queries))]

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _trace_request(stream: TextIO, request: TestRequest) -> None:
    for q in request.queries:
        stream.write(json.dumps({"request_id": request.request_id, "client_id": None,
                                 "query": q.to_dict()}) + "\n")


def _trace_response(stream: TextIO, request: TestRequest, response: TestResponse) -> None:
    for q, res in zip(request.queries, response.results):
        stream.write(json.dumps({
            "request_id": response.request_id, "client_id": response.client_id,
            "query": q.to_dict(), "C": res.correlation, "P": res.p_value,
            "reliable": res.reliable,
        }) + "\n")


def broadcast(handle: FederationHandle, request: TestRequest) -> list[TestResponse]:
    """Send ``request`` to every client and collect one response from each."""
    handle.rounds += 1
    if handle.trace is not None:
        _trace_request(handle.trace, request)
    responses = [
        client.answer(request, handle.batch_size, handle._executor)
        for client in handle.clients
    ]
    if handle.trace is not None:
        for resp in responses:
            _trace_response(handle.trace, request, resp)
    return responses


def weighted_mean(values: list[float], weights: list[int]) -> float:
    # anchored on the first value so equal inputs come back bit-exact
    base = values[0]
    total = sum(weights)
    return base + sum(w * (v - base) for v, w in zip(values, weights)) / total


def aggregate(handle: FederationHandle, responses: list[TestResponse],
              position: int) -> AggregateResult:
    """Sample-size weighted mean of the client p-values and correlation values."""
    if len(responses) != len(handle.clients):
        raise ProtocolError(f"expected {len(handle.clients)} responses, got {len(responses)}")
    ids = {r.request_id for r in responses}
    if len(ids) != 1:
        raise ProtocolError(f"responses mix request ids {sorted(ids)}")
    sizes = sorted({len(r.results) for r in responses})
    if len(sizes) != 1 or not 0 <= position < sizes[0]:
        raise ProtocolError(f"position {position} invalid for responses of sizes {sizes}")
    weights = []
    for client, resp in zip(handle.clients, responses):
        if client.client_id != resp.client_id:
            raise ProtocolError("responses are not in client order")
        weights.append(client.weight)
    results = [r.results[position] for r in responses]
    wp = weighted_mean([r.p_value for r in results], weights)
    wc = weighted_mean([r.correlation for r in results], weights)
    return AggregateResult(
        weighted_p=min(max(wp, 0.0), 1.0),
        weighted_c=wc,
        any_unreliable=any(not r.reliable for r in results),
    )


def decide_independent(agg: AggregateResult, alpha: float = 0.05) -> bool:
    """Independent iff the weighted p-value exceeds ``alpha`` and all clients were reliable."""
    return agg.weighted_p > alpha and not agg.any_unreliable
