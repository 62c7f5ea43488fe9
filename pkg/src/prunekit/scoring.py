"""EL2N importance scores for joint intent/slot examples and their EMA."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from ._rng import substream
from .data import Dataset
from .errors import ConfigError, InputError, ValidationError
from .model import JointClassifier, predict


def el2n_intent(p, y: int) -> float:
    """``||p - onehot(y)||_2``."""
    p = np.asarray(p, dtype=float)
    if not 0 <= y < len(p):
        raise InputError(f"label {y} outside [0, {len(p)})")
    e = p.copy()
    e[y] -= 1.0
    return float(np.sqrt(e @ e))


def el2n_slot(P, Y, mask=None) -> float:
    """Second l2 norm over the per-token error norms of real tokens."""
    P = np.asarray(P, dtype=float)
    Y = np.asarray(Y)
    if P.ndim != 2 or P.shape[0] != len(Y):
        raise InputError("slot probabilities must be (M, K) aligned with labels")
    mask = np.ones(len(Y), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    E = P[mask].copy()
    E[np.arange(len(E)), Y[mask]] -= 1.0
    return float(np.sqrt((E * E).sum()))


def el2n_joint(chi_intent, chi_slot):
    """Pythagorean combination; accepts scalars or arrays."""
    return np.sqrt(np.square(chi_intent) + np.square(chi_slot))


class Scores(NamedTuple):
    chi_intent: np.ndarray
    chi_slot: np.ndarray
    chi_nlu: np.ndarray


def score_dataset(model: JointClassifier, dataset: Dataset, batch_size: int = 512) -> Scores:
    """One forward pass over every example. Parameters are not touched."""
    model.check_compatible(dataset)
    if len(dataset) == 0:
        empty = np.zeros(0)
        return Scores(empty, empty.copy(), empty.copy())
    pred = predict(model, dataset, batch_size=batch_size)
    chi_i, chi_s = kernels.el2n_components(
        np.ascontiguousarray(pred.intent_probs),
        np.asarray(dataset.intents, dtype=np.int64),
        np.ascontiguousarray(pred.slot_probs),
        np.asarray(dataset.slots, dtype=np.int64),
        np.asarray(dataset.mask),
    )
    return Scores(chi_i, chi_s, el2n_joint(chi_i, chi_s))


def random_scores(n: int, seed: int, cycle: int = 0) -> np.ndarray:
    """Uniform scores in the open interval (0, 1), one fresh draw per cycle."""
    if n < 1:
        raise ConfigError("random_scores needs n >= 1")
    rng = substream(seed, "random-pruning", cycle)
    return rng.integers(1, 2**53, size=n) / float(2**53)


# ------------------------------------------------------------------ ScoreBook


@dataclass
class CycleRecord:
    cycle: int
    chi_intent: np.ndarray
    chi_slot: np.ndarray
    chi_nlu: np.ndarray
    chi_ema: np.ndarray
    selected: np.ndarray


class ScoreBook:
    """Latest per-example scores, their EMA and the per-cycle history."""

    def __init__(self, n: int):
        self.n = n
        nan = np.full(n, np.nan)
        self.chi_intent = nan.copy()
        self.chi_slot = nan.copy()
        self.chi_nlu = nan.copy()
        self.chi_ema = nan.copy()
        self.history: list[CycleRecord] = []

    @property
    def n_cycles(self) -> int:
        return len(self.history)

    def record(self, cycle: int, fresh, ema=None) -> CycleRecord:
        if self.history and cycle <= self.history[-1].cycle:
            raise ValidationError(
                f"cycle {cycle} does not follow cycle {self.history[-1].cycle}"
            )
        if isinstance(fresh, Scores):
            ci, cs, cn = (np.asarray(a, dtype=float).copy() for a in fresh)
        else:
            cn = np.asarray(fresh, dtype=float).copy()
            ci = np.full(self.n, np.nan)
            cs = np.full(self.n, np.nan)
        if cn.shape != (self.n,):
            raise InputError(f"expected {self.n} scores, got {cn.shape}")
        self.chi_intent, self.chi_slot, self.chi_nlu = ci, cs, cn
        ema = self.chi_ema if ema is None else ema
        rec = CycleRecord(cycle, ci, cs, cn, np.array(ema, dtype=float), np.zeros(self.n, dtype=bool))
        self.history.append(rec)
        return rec

    def mark_selected(self, indices) -> None:
        if not self.history:
            raise ValidationError("no cycle recorded yet")
        sel = np.zeros(self.n, dtype=bool)
        sel[np.asarray(indices, dtype=np.int64)] = True
        self.history[-1].selected = sel

    def selection_counts(self) -> np.ndarray:
        if not self.history:
            return np.zeros(self.n, dtype=np.int64)
        return np.sum([r.selected for r in self.history], axis=0).astype(np.int64)

    def nlu_history(self) -> np.ndarray:
        """``(cycles, n)`` array of fresh joint scores."""
        return np.array([r.chi_nlu for r in self.history]).reshape(len(self.history), self.n)


def ema_update(book: ScoreBook, fresh, alpha: float = 0.8, cycle: int | None = None) -> ScoreBook:
    """``ema <- alpha * fresh + (1 - alpha) * ema``; the first update copies ``fresh``.

    ``fresh`` is a :class:`Scores` triple or a plain array of joint scores. A
    history entry is appended for ``cycle`` (default: next index).
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError("EMA coefficient must lie in (0, 1]")
    cn = fresh.chi_nlu if isinstance(fresh, Scores) else np.asarray(fresh, dtype=float)
    if cn.shape != (book.n,):
        raise InputError(f"fresh scores cover {cn.shape} ids, book has {book.n}")
    if cycle is not None and book.history and cycle <= book.history[-1].cycle:
        raise ValidationError(f"cycle {cycle} does not follow cycle {book.history[-1].cycle}")
    if book.history:
        book.chi_ema = alpha * cn + (1.0 - alpha) * book.chi_ema
    else:
        book.chi_ema = np.array(cn, dtype=float)
    if cycle is None:
        cycle = book.history[-1].cycle + 1 if book.history else 0
    book.record(cycle, fresh)
    return book


# ----------------------------------------------------------------------- CSV

SCORE_COLUMNS = ("id", "cycle", "chi_intent", "chi_slot", "chi_nlu", "chi_ema", "selected")


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_scores_csv(book: ScoreBook, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for rec in book.history:
            for i in range(book.n):
                w.writerow([
                    i, rec.cycle, _fmt(rec.chi_intent[i]), _fmt(rec.chi_slot[i]),
                    _fmt(rec.chi_nlu[i]), _fmt(rec.chi_ema[i]), int(rec.selected[i]),
                ])


def read_scores_csv(path) -> ScoreBook:
    rows: dict[int, list] = {}
    n = 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORE_COLUMNS:
            raise ValidationError(f"{path}: unexpected score CSV header {reader.fieldnames}")
        for row in reader:
            rows.setdefault(int(row["cycle"]), []).append(row)
            n = max(n, int(row["id"]) + 1)
    book = ScoreBook(n)

    def col(rs, key):
        out = np.full(n, np.nan)
        for r in rs:
            if r[key] != "":
                out[int(r["id"])] = float(r[key])
        return out

    for cycle in sorted(rows):
        rs = rows[cycle]
        fresh = Scores(col(rs, "chi_intent"), col(rs, "chi_slot"), col(rs, "chi_nlu"))
        book.chi_ema = col(rs, "chi_ema")
        book.record(cycle, fresh, ema=book.chi_ema)
        book.mark_selected([int(r["id"]) for r in rs if r["selected"] == "1"])
    return book
