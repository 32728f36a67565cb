"""ML-KNN classifier and the multi-label metrics used to score a selection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import MultiLabelDataset


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MlKnnModel:
    k: int
    smoothing: float
    selected: tuple[int, ...]
    prior: np.ndarray  # (q,) P(H1)
    cond_pos: np.ndarray  # (q, k+1) P(count=j | H1)
    cond_neg: np.ndarray  # (q, k+1) P(count=j | H0)
    train_x: np.ndarray
    train_y: np.ndarray


@dataclass(frozen=True)
class PredictionSet:
    confidences: np.ndarray
    decisions: np.ndarray


def _neighbors(query: np.ndarray, ref: np.ndarray, k: int, exclude_self: bool = False,
               chunk: int = 512) -> np.ndarray:
    """Indices of the ``k`` nearest ``ref`` rows; ties go to the lower index."""
    out = np.empty((len(query), k), dtype=np.int64)
    for start in range(0, len(query), chunk):
        d = cdist(query[start:start + chunk], ref, "sqeuclidean")
        if exclude_self:
            rows = np.arange(len(d))
            d[rows, rows + start] = np.inf
        out[start:start + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def mlknn_train(train: MultiLabelDataset, selected, k: int = 10,
                smoothing: float = 1.0) -> MlKnnModel:
    selected = tuple(int(f) for f in selected)
    if not selected:
        raise EvaluationError("no features selected; nothing to train ML-KNN on")
    n = train.n_samples
    if k < 1 or k > n - 1:
        raise EvaluationError(f"k={k} needs at least k+1 training rows (have {n})")
    x = train.features[:, list(selected)].astype(np.float64)
    y = train.labels.astype(np.int64)
    s = smoothing
    prior = (s + y.sum(axis=0)) / (2 * s + n)

    counts = y[_neighbors(x, x, k, exclude_self=True)].sum(axis=1)  # (n, q)
    q = y.shape[1]
    hist_pos = np.zeros((q, k + 1))
    hist_neg = np.zeros((q, k + 1))
    for j in range(q):
        pos = y[:, j] == 1
        hist_pos[j] = np.bincount(counts[pos, j], minlength=k + 1)
        hist_neg[j] = np.bincount(counts[~pos, j], minlength=k + 1)
    cond_pos = (s + hist_pos) / (s * (k + 1) + hist_pos.sum(axis=1, keepdims=True))
    cond_neg = (s + hist_neg) / (s * (k + 1) + hist_neg.sum(axis=1, keepdims=True))
    return MlKnnModel(k, s, selected, prior, cond_pos, cond_neg, x, y)


def mlknn_predict(model: MlKnnModel, test: MultiLabelDataset | np.ndarray) -> PredictionSet:
    """MAP prediction from neighbour label counts.

    ``test`` is either a dataset (its selected columns are used) or a matrix
    already restricted to the model's columns.
    """
    if isinstance(test, MultiLabelDataset):
        x = test.features[:, list(model.selected)].astype(np.float64)
    else:
        x = np.asarray(test, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.selected):
        raise EvaluationError(
            f"test matrix has shape {x.shape}, expected (*, {len(model.selected)})"
        )
    counts = model.train_y[_neighbors(x, model.train_x, model.k)].sum(axis=1)
    labels = np.arange(model.train_y.shape[1])
    p1 = model.prior * model.cond_pos[labels, counts]
    p0 = (1 - model.prior) * model.cond_neg[labels, counts]
    conf = p1 / (p1 + p0)
    return PredictionSet(conf, (conf >= 0.5).astype(np.int64))


# -- metrics ---------------------------------------------------------------


def _scores(pred) -> np.ndarray:
    return pred.confidences if isinstance(pred, PredictionSet) else np.asarray(pred, float)


def _decisions(pred) -> np.ndarray:
    return pred.decisions if isinstance(pred, PredictionSet) else np.asarray(pred)


def label_ranks(confidences: np.ndarray) -> np.ndarray:
    """1-based rank of every label per sample; ties by ascending label index."""
    order = np.argsort(-confidences, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(len(order))[:, None]
    ranks[rows, order] = np.arange(1, order.shape[1] + 1)
    return ranks


def average_precision(pred, truth) -> float:
    ranks = label_ranks(_scores(pred))
    truth = np.asarray(truth).astype(bool)
    total, used = 0.0, 0
    for r, t in zip(ranks, truth):
        rel = np.sort(r[t])
        if len(rel) == 0:
            continue
        total += float(np.mean(np.arange(1, len(rel) + 1) / rel))
        used += 1
    return total / used if used else float("nan")


def coverage(pred, truth, normalized: bool = True) -> float:
    ranks = label_ranks(_scores(pred))
    truth = np.asarray(truth).astype(bool)
    keep = truth.any(axis=1)
    if not keep.any():
        return float("nan")
    depth = np.where(truth, ranks, 0).max(axis=1)[keep] - 1
    value = float(depth.mean())
    return value / truth.shape[1] if normalized else value


def hamming_loss(pred, truth) -> float:
    return float(np.mean(_decisions(pred).astype(bool) != np.asarray(truth).astype(bool)))


def ranking_loss(pred, truth) -> float:
    ranks = label_ranks(_scores(pred))
    truth = np.asarray(truth).astype(bool)
    total, used = 0.0, 0
    for r, t in zip(ranks, truth):
        rel, irr = r[t], r[~t]
        if len(rel) == 0 or len(irr) == 0:
            continue
        total += np.count_nonzero(rel[:, None] > irr[None, :]) / (len(rel) * len(irr))
        used += 1
    return total / used if used else float("nan")


def _confusion(pred, truth):
    z = _decisions(pred).astype(bool)
    y = np.asarray(truth).astype(bool)
    tp = (z & y).sum(axis=0)
    fp = (z & ~y).sum(axis=0)
    fn = (~z & y).sum(axis=0)
    return tp, fp, fn


def macro_f1(pred, truth) -> float:
    tp, fp, fn = _confusion(pred, truth)
    den = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, den, out=np.zeros(len(tp)), where=den > 0)
    return float(f1.mean())


def micro_f1(pred, truth) -> float:
    tp, fp, fn = (int(a.sum()) for a in _confusion(pred, truth))
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 0.0


@dataclass(frozen=True)
class MetricReport:
    ap: float
    cv: float
    hl: float
    rl: float
    fma: float
    fmi: float
    flags: dict = field(default_factory=dict, compare=False)

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("flags")
        return row


def evaluate_predictions(pred: PredictionSet, truth, raw_coverage: bool = False) -> MetricReport:
    truth = np.asarray(truth)
    tp, fp, fn = _confusion(pred, truth)
    flags = {
        "samples_without_labels": int((~truth.astype(bool).any(axis=1)).sum()),
        "samples_with_all_labels": int(truth.astype(bool).all(axis=1).sum()),
        "labels_without_f1_support": [int(j) for j in np.nonzero(2 * tp + fp + fn == 0)[0]],
    }
    return MetricReport(
        ap=average_precision(pred, truth),
        cv=coverage(pred, truth, normalized=not raw_coverage),
        hl=hamming_loss(pred, truth),
        rl=ranking_loss(pred, truth),
        fma=macro_f1(pred, truth),
        fmi=micro_f1(pred, truth),
        flags=flags,
    )


def evaluate_selection(train: MultiLabelDataset, test: MultiLabelDataset, selected,
                       k: int = 10, smoothing: float = 1.0,
                       raw_coverage: bool = False) -> MetricReport:
    """Train ML-KNN on ``train`` restricted to ``selected`` and score it on ``test``."""
    model = mlknn_train(train, selected, k, smoothing)
    return evaluate_predictions(mlknn_predict(model, test), test.labels, raw_coverage)
