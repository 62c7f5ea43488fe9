"""Evaluation metrics and data-selection analytics (data maps, regions, ranks)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import InputError, InsufficientHistoryError
from .model import JointClassifier, Predictions, predict
from .scoring import ScoreBook


def _check_aligned(pred: Predictions, gold: Dataset) -> None:
    if len(pred.ids) != len(gold) or not np.array_equal(pred.ids, np.arange(len(gold))):
        raise InputError("prediction ids do not match the gold dataset")


def _slot_arrays(pred: Predictions, gold: Dataset):
    w = gold.M_max
    sp = pred.slot_pred
    if sp.shape[1] < w:
        sp = np.pad(sp, ((0, 0), (0, w - sp.shape[1])))
    return sp[:, :w], np.asarray(gold.slots), np.asarray(gold.mask)


def intent_accuracy(pred: Predictions, gold: Dataset) -> float:
    _check_aligned(pred, gold)
    if len(gold) == 0:
        return float("nan")
    return float(np.mean(pred.intent_pred == gold.intents))


def slot_sequence_correct(pred: Predictions, gold: Dataset) -> np.ndarray:
    """Per example: every real-token slot argmax matches."""
    sp, gs, mask = _slot_arrays(pred, gold)
    return np.all((sp == gs) | ~mask, axis=1)


def full_sequence_accuracy(pred: Predictions, gold: Dataset) -> float:
    """Intent and all slot labels correct."""
    _check_aligned(pred, gold)
    if len(gold) == 0:
        return float("nan")
    ok = (pred.intent_pred == gold.intents) & slot_sequence_correct(pred, gold)
    return float(np.mean(ok))


def slot_counts(pred: Predictions, gold: Dataset) -> tuple[int, int, int]:
    """Token-level TP/FP/FN with the null class (0) excluded."""
    _check_aligned(pred, gold)
    sp, gs, mask = _slot_arrays(pred, gold)
    sp, gs = sp[mask], gs[mask]
    tp = int(np.sum((sp == gs) & (gs != 0)))
    fp = int(np.sum((sp != 0) & (sp != gs)))
    fn = int(np.sum((gs != 0) & (sp != gs)))
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def slot_micro_f1(pred: Predictions, gold: Dataset) -> float:
    """Token-level micro F1 over non-null slot labels."""
    return f1_from_counts(*slot_counts(pred, gold))


def matthews_corr(pred, gold) -> float:
    pred = np.asarray(pred).astype(bool)
    gold = np.asarray(gold).astype(bool)
    if pred.shape != gold.shape:
        raise InputError("prediction and gold lengths differ")
    tp = float(np.sum(pred & gold))
    tn = float(np.sum(~pred & ~gold))
    fp = float(np.sum(pred & ~gold))
    fn = float(np.sum(~pred & gold))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / np.sqrt(denom)


def evaluate(model: JointClassifier, dataset: Dataset) -> dict[str, float]:
    pred = predict(model, dataset)
    return {
        "full_sequence_accuracy": full_sequence_accuracy(pred, dataset),
        "intent_accuracy": intent_accuracy(pred, dataset),
        "slot_micro_f1": slot_micro_f1(pred, dataset),
    }


# ------------------------------------------------------------------ data maps


@dataclass
class DataMapPoint:
    id: int
    mean_chi: float
    var_chi: float
    selection_count: int
    region: str = ""


def build_data_map(book: ScoreBook) -> list[DataMapPoint]:
    """Mean and population variance of the joint score across cycles."""
    if book.n_cycles < 2:
        raise InsufficientHistoryError(
            f"data map needs at least 2 scoring cycles, found {book.n_cycles}"
        )
    hist = book.nlu_history()
    means = hist.mean(axis=0)
    var = hist.var(axis=0)
    counts = book.selection_counts()
    return [
        DataMapPoint(i, float(means[i]), float(var[i]), int(counts[i])) for i in range(book.n)
    ]


def classify_regions(points, hard_q: float = 0.75, easy_q: float = 0.25):
    """Label points hard (mean above the ``hard_q`` quantile), easy (mean and
    variance both at or below their ``easy_q`` quantiles) or ambiguous."""
    if not 0.0 < easy_q < hard_q < 1.0:
        raise InputError("need 0 < easy_q < hard_q < 1")
    if not points:
        return points
    means = np.array([p.mean_chi for p in points])
    var = np.array([p.var_chi for p in points])
    hard_cut = np.quantile(means, hard_q)
    easy_mean = np.quantile(means, easy_q)
    easy_var = np.quantile(var, easy_q)
    for p, m, v in zip(points, means, var):
        if m > hard_cut:
            p.region = "hard"
        elif m <= easy_mean and v <= easy_var:
            p.region = "easy"
        else:
            p.region = "ambiguous"
    return points


def selection_histogram(points, n_cycles: int) -> list[tuple[int, int]]:
    counts = np.bincount([p.selection_count for p in points], minlength=n_cycles + 1)
    return [(c, int(f)) for c, f in enumerate(counts)]


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(scores, covariate) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(scores, dtype=float)
    y = np.asarray(covariate, dtype=float)
    if x.shape != y.shape or len(x) < 2:
        raise InputError("spearman needs two equal-length sequences of length >= 2")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        raise InputError("correlation undefined for constant input")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def top_decile_enrichment(mean_chi, flagged) -> float:
    """Share of flagged examples in the top 10% by score, over their base rate."""
    mean_chi = np.asarray(mean_chi, dtype=float)
    flagged = np.asarray(flagged, dtype=bool)
    base = flagged.mean()
    if base == 0:
        return float("nan")
    k = max(1, int(np.ceil(0.1 * len(mean_chi))))
    top = np.lexsort((np.arange(len(mean_chi)), -mean_chi))[:k]
    return float(flagged[top].mean() / base)


# ----------------------------------------------------------------------- CSV

DATAMAP_COLUMNS = ("id", "mean_chi", "var_chi", "selection_count", "region", "mislabeled")


def write_data_map_csv(points, path, mislabeled=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATAMAP_COLUMNS)
        for p in points:
            flag = "" if mislabeled is None else int(bool(mislabeled[p.id]))
            w.writerow([p.id, repr(p.mean_chi), repr(p.var_chi), p.selection_count, p.region, flag])


def write_histogram_csv(hist, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("count", "frequency"))
        w.writerows(hist)
