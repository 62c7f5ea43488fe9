"""Joint intent/slot datasets: JSONL ingestion, synthetic generation, mislabel
injection and deterministic batching.

Token index 0 is padding and slot class 0 is the null ("O") label.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import substream
from .errors import ConfigError, ParseError, ValidationError

PAD_TOKEN = "<pad>"
NULL_SLOT = "O"


@dataclass(frozen=True)
class Example:
    id: int
    tokens: np.ndarray
    intent: int
    slots: np.ndarray
    mask: np.ndarray
    mislabeled: bool = False


@dataclass(frozen=True)
class Batch:
    ids: np.ndarray
    tokens: np.ndarray
    mask: np.ndarray
    intents: np.ndarray
    slots: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable padded dataset. Example ids are the row indices 0..N-1."""

    tokens: np.ndarray  # (N, M_max) int64
    intents: np.ndarray  # (N,) int64
    slots: np.ndarray  # (N, M_max) int64, 0 on padding
    mask: np.ndarray  # (N, M_max) bool
    n_intents: int
    n_slots: int
    vocab_size: int
    mislabeled: np.ndarray = None  # (N,) bool
    vocab: list[str] | None = field(default=None, compare=False)
    intent_names: list[str] | None = None
    slot_names: list[str] | None = None

    def __post_init__(self):
        n = len(self.intents)
        if self.mislabeled is None:
            object.__setattr__(self, "mislabeled", np.zeros(n, dtype=bool))
        for name in ("tokens", "intents", "slots", "mask", "mislabeled"):
            arr = getattr(self, name)
            if arr.flags.writeable:
                arr = arr.copy()
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if not (self.tokens.shape == self.slots.shape == self.mask.shape):
            raise ValidationError("tokens, slots and mask must share a shape")
        if self.tokens.shape[0] != n or self.mislabeled.shape != (n,):
            raise ValidationError("per-example arrays disagree on N")
        if n:
            if self.intents.min() < 0 or self.intents.max() >= self.n_intents:
                raise ValidationError("intent label out of range")
            if self.slots.min() < 0 or self.slots.max() >= max(self.n_slots, 1):
                raise ValidationError("slot label out of range")
            if self.tokens.min() < 0 or self.tokens.max() >= self.vocab_size:
                raise ValidationError("token index out of range")
            if np.any(self.slots[~self.mask] != 0) or np.any(self.tokens[~self.mask] != 0):
                raise ValidationError("padding positions must carry pad token and null slot")

    def __len__(self) -> int:
        return len(self.intents)

    @property
    def M_max(self) -> int:
        return self.tokens.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def __getitem__(self, i: int) -> Example:
        return Example(
            id=int(i),
            tokens=self.tokens[i],
            intent=int(self.intents[i]),
            slots=self.slots[i],
            mask=self.mask[i],
            mislabeled=bool(self.mislabeled[i]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.n_intents, self.n_slots, self.vocab_size)
            == (other.n_intents, other.n_slots, other.vocab_size)
            and self.tokens.shape == other.tokens.shape
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("tokens", "intents", "slots", "mask", "mislabeled")
            )
        )

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        mask = self.mask[idx]
        width = int(mask.sum(axis=1).max()) if len(idx) else 0
        width = max(width, 1)
        return Batch(
            ids=idx,
            tokens=self.tokens[idx, :width],
            mask=mask[:, :width],
            intents=self.intents[idx],
            slots=self.slots[idx, :width],
        )

    def subset(self, indices) -> Dataset:
        """New dataset of the given rows, re-indexed from 0."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            tokens=self.tokens[idx],
            intents=self.intents[idx],
            slots=self.slots[idx],
            mask=self.mask[idx],
            n_intents=self.n_intents,
            n_slots=self.n_slots,
            vocab_size=self.vocab_size,
            mislabeled=self.mislabeled[idx],
            vocab=self.vocab,
            intent_names=self.intent_names,
            slot_names=self.slot_names,
        )

    def replace(self, **changes) -> Dataset:
        kwargs = {
            k: getattr(self, k)
            for k in (
                "tokens", "intents", "slots", "mask", "n_intents", "n_slots",
                "vocab_size", "mislabeled", "vocab", "intent_names", "slot_names",
            )
        }
        kwargs.update(changes)
        return Dataset(**kwargs)

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.tokens, self.intents, self.slots, self.mask):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"{self.n_intents},{self.n_slots},{self.vocab_size}".encode())
        return h.hexdigest()[:16]


# --------------------------------------------------------------------- JSONL


def _label_index(value, table: dict, line: int, what: str) -> int:
    if isinstance(value, bool):
        raise ParseError(line, f"{what} must be a string or integer")
    if isinstance(value, int):
        if value < 0:
            raise ParseError(line, f"negative {what} {value}")
        return value
    if isinstance(value, str):
        if value not in table:
            table[value] = len(table)
        return table[value]
    raise ParseError(line, f"{what} must be a string or integer")


def load_vocab(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def save_vocab(vocab: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{tok}\n" for tok in vocab)


def _meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json")


def load_jsonl(path, M_max: int, vocab: Sequence[str] | None = None) -> Dataset:
    """Read ``{"tokens": [...], "intent": ..., "slots": [...]}`` records.

    String tokens are mapped through ``vocab`` when given (unknown tokens are a
    validation error) or through a vocabulary built on the fly. A sidecar
    ``<path>.meta.json`` written by :func:`save_jsonl` pins class counts.
    """
    path = Path(path)
    meta = {}
    if _meta_path(path).exists():
        meta = json.loads(_meta_path(path).read_text(encoding="utf-8"))
    fixed_vocab = vocab is not None
    tok_table = {t: i for i, t in enumerate(vocab)} if fixed_vocab else {PAD_TOKEN: 0}
    intent_table = {n: i for i, n in enumerate(meta.get("intent_names") or [])}
    slot_table = {n: i for i, n in enumerate(meta.get("slot_names") or [NULL_SLOT])}

    rows_tok, rows_slot, intents, flags = [], [], [], []
    max_tok, max_int, max_slot = 0, -1, 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or not {"tokens", "intent", "slots"} <= rec.keys():
                raise ParseError(lineno, "record needs tokens, intent and slots")
            toks, slots = rec["tokens"], rec["slots"]
            if not isinstance(toks, list) or not isinstance(slots, list):
                raise ParseError(lineno, "tokens and slots must be lists")
            if len(toks) != len(slots):
                raise ValidationError(
                    f"line {lineno}: {len(toks)} tokens but {len(slots)} slots"
                )
            if len(toks) > M_max:
                raise ValidationError(f"line {lineno}: length {len(toks)} exceeds M_max={M_max}")
            ids = []
            for t in toks:
                if isinstance(t, str):
                    if t not in tok_table:
                        if fixed_vocab:
                            raise ValidationError(f"line {lineno}: token {t!r} not in vocabulary")
                        tok_table[t] = len(tok_table)
                    ids.append(tok_table[t])
                elif isinstance(t, int) and not isinstance(t, bool) and t >= 0:
                    ids.append(t)
                else:
                    raise ParseError(lineno, f"bad token {t!r}")
            sl = [_label_index(s, slot_table, lineno, "slot") for s in slots]
            it = _label_index(rec["intent"], intent_table, lineno, "intent")
            rows_tok.append(ids)
            rows_slot.append(sl)
            intents.append(it)
            flags.append(bool(rec.get("mislabeled", False)))
            max_tok = max([max_tok, *ids])
            max_int = max(max_int, it)
            max_slot = max([max_slot, *sl])

    n = len(intents)
    tokens = np.zeros((n, M_max), dtype=np.int64)
    slot_arr = np.zeros((n, M_max), dtype=np.int64)
    mask = np.zeros((n, M_max), dtype=bool)
    for i, (t, s) in enumerate(zip(rows_tok, rows_slot)):
        tokens[i, : len(t)] = t
        slot_arr[i, : len(s)] = s
        mask[i, : len(t)] = True

    vocab_list = list(vocab) if fixed_vocab else (
        list(tok_table) if len(tok_table) > 1 else None
    )
    vocab_size = meta.get("vocab_size") or (
        len(vocab_list) if vocab_list else max_tok + 1
    )
    if fixed_vocab and max_tok >= len(vocab_list):
        raise ValidationError(f"token index {max_tok} outside vocabulary of {len(vocab_list)}")
    n_intents = meta.get("n_intents") or max(max_int + 1, len(intent_table))
    n_slots = meta.get("n_slots") or max(max_slot + 1, len(slot_table) if len(slot_table) > 1 else 0)
    return Dataset(
        tokens=tokens,
        intents=np.asarray(intents, dtype=np.int64),
        slots=slot_arr,
        mask=mask,
        n_intents=int(n_intents),
        n_slots=int(n_slots),
        vocab_size=int(vocab_size),
        mislabeled=np.asarray(flags, dtype=bool),
        vocab=vocab_list,
        intent_names=list(intent_table) or None,
        slot_names=list(slot_table) if len(slot_table) > 1 else None,
    )


def save_jsonl(dataset: Dataset, path, write_meta: bool = True) -> None:
    """Write integer-coded records; reloading with the same M_max is lossless."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(dataset)):
            m = dataset.mask[i]
            rec = {
                "tokens": dataset.tokens[i][m].tolist(),
                "intent": int(dataset.intents[i]),
                "slots": dataset.slots[i][m].tolist(),
            }
            if dataset.mislabeled[i]:
                rec["mislabeled"] = True
            fh.write(json.dumps(rec) + "\n")
    if write_meta:
        meta = {
            "n_intents": dataset.n_intents,
            "n_slots": dataset.n_slots,
            "vocab_size": dataset.vocab_size,
            "M_max": dataset.M_max,
        }
        _meta_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    n_examples: int = 2000
    n_intents: int = 10
    n_slots: int = 8
    vocab_size: int = 600
    min_len: int = 4
    max_len: int = 12
    intent_skew: float = 1.0
    slot_density: float = 0.3
    seed: int = 0
    M_max: int | None = None
    # fraction of examples carrying one keyword of a different intent
    confusion_rate: float = 0.15
    # share of non-entity positions holding an intent keyword (rest is filler)
    keyword_rate: float = 0.4

    def validate(self) -> None:
        M = self.M_max if self.M_max is not None else self.max_len
        if self.n_examples < 0:
            raise ConfigError("n_examples must be >= 0")
        if self.min_len < 1:
            raise ConfigError("min_len must be >= 1")
        if self.max_len < self.min_len:
            raise ConfigError("max_len must be >= min_len")
        if self.max_len > M:
            raise ConfigError("max_len must be <= M_max")
        if not 0.0 <= self.slot_density <= 1.0:
            raise ConfigError("slot_density must lie in [0, 1]")
        if not 0.0 <= self.confusion_rate <= 1.0:
            raise ConfigError("confusion_rate must lie in [0, 1]")
        if not 0.0 <= self.keyword_rate <= 1.0:
            raise ConfigError("keyword_rate must lie in [0, 1]")
        if self.n_intents < 1 or self.n_slots < 1:
            raise ConfigError("need at least one intent and one slot class")
        if self.intent_skew < 0:
            raise ConfigError("intent_skew must be >= 0")
        if self.n_intents > self.vocab_size / 2:
            raise ConfigError(
                f"n_intents={self.n_intents} > vocab_size/2={self.vocab_size / 2}: "
                "insufficient token signal per intent"
            )


def _zipf(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _layout(spec: SyntheticSpec):
    """Partition token ids 1..V-1 into intent keywords, entity tokens and filler."""
    usable = spec.vocab_size - 1
    n_ent_types = spec.n_slots - 1
    kw_per = max(1, usable // (3 * spec.n_intents))
    ent_per = max(1, usable // (3 * n_ent_types)) if n_ent_types else 0
    filler = usable - kw_per * spec.n_intents - ent_per * n_ent_types
    if filler < 1:
        raise ConfigError(
            f"vocab_size={spec.vocab_size} too small for {spec.n_intents} intents "
            f"and {spec.n_slots} slot classes"
        )
    start = 1
    keywords = []
    for _ in range(spec.n_intents):
        keywords.append(np.arange(start, start + kw_per))
        start += kw_per
    entities = []
    for _ in range(n_ent_types):
        entities.append(np.arange(start, start + ent_per))
        start += ent_per
    fillers = np.arange(start, spec.vocab_size)
    return keywords, entities, fillers


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic joint-NLU corpus with intent-specific keyword tokens and
    slot-typed entity tokens drawn from Zipfian frequency tails."""
    spec.validate()
    M = spec.M_max if spec.M_max is not None else spec.max_len
    keywords, entities, fillers = _layout(spec)
    rng = substream(spec.seed, "data")
    # layout-level preferences depend on the seed but not on n_examples
    pref_rng = substream(spec.seed, "data", "layout")
    n_ent = len(entities)
    preferred = [
        pref_rng.choice(n_ent, size=min(2, n_ent), replace=False) if n_ent else np.zeros(0, int)
        for _ in range(spec.n_intents)
    ]

    prior = 1.0 / np.arange(1, spec.n_intents + 1) ** spec.intent_skew
    prior /= prior.sum()
    kw_w = _zipf(len(keywords[0]), 1.0)
    ent_w = _zipf(len(entities[0]), 1.2) if n_ent else None
    fill_w = _zipf(len(fillers), 1.0)

    N = spec.n_examples
    tokens = np.zeros((N, M), dtype=np.int64)
    slots = np.zeros((N, M), dtype=np.int64)
    mask = np.zeros((N, M), dtype=bool)
    intents = rng.choice(spec.n_intents, size=N, p=prior)
    lengths = rng.integers(spec.min_len, spec.max_len + 1, size=N)
    for i in range(N):
        k, L = int(intents[i]), int(lengths[i])
        u = rng.random(L)
        kinds = np.where(u < spec.slot_density, 2, np.where(rng.random(L) < spec.keyword_rate, 1, 0))
        if n_ent == 0:
            kinds[kinds == 2] = 1
        if not np.any(kinds == 1):
            kinds[rng.integers(L)] = 1
        owners = np.full(L, k)
        # a confused example carries one keyword of another intent, but the
        # true intent keeps a strict keyword majority
        if spec.n_intents > 1 and L >= 3 and rng.random() < spec.confusion_rate:
            free = np.flatnonzero(kinds != 1)
            while np.count_nonzero(kinds == 1) < 2 and len(free):
                kinds[free[0]] = 1
                free = free[1:]
            if len(free):
                kinds[free[0]] = 1
                owners[free[0]] = (k + 1 + rng.integers(spec.n_intents - 1)) % spec.n_intents
        for m in range(L):
            if kinds[m] == 2:
                if rng.random() < 0.8:
                    s = int(rng.choice(preferred[k]))
                else:
                    s = int(rng.integers(n_ent))
                tokens[i, m] = entities[s][rng.choice(len(ent_w), p=ent_w)]
                slots[i, m] = s + 1
            elif kinds[m] == 1:
                tokens[i, m] = keywords[owners[m]][rng.choice(len(kw_w), p=kw_w)]
            else:
                tokens[i, m] = fillers[rng.choice(len(fill_w), p=fill_w)]
        mask[i, :L] = True

    vocab = [PAD_TOKEN] + [f"w{j}" for j in range(1, spec.vocab_size)]
    return Dataset(
        tokens=tokens,
        intents=intents.astype(np.int64),
        slots=slots,
        mask=mask,
        n_intents=spec.n_intents,
        n_slots=spec.n_slots,
        vocab_size=spec.vocab_size,
        vocab=vocab,
    )


def split_dataset(dataset: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random train/eval split; both halves are re-indexed from 0."""
    if not 0.0 < eval_fraction < 1.0:
        raise ConfigError("eval fraction must lie in (0, 1)")
    n = len(dataset)
    perm = substream(seed, "split").permutation(n)
    n_eval = round(eval_fraction * n)
    return dataset.subset(np.sort(perm[n_eval:])), dataset.subset(np.sort(perm[:n_eval]))


# ------------------------------------------------------------------ mislabel


def inject_mislabels(dataset: Dataset, rate: float, mode: str = "intent", seed: int = 0) -> Dataset:
    """Corrupt ``floor(rate * N)`` uniformly chosen examples.

    ``intent`` resamples a different intent, ``slot`` changes one real-token
    slot label, ``both`` does both. Returns a new dataset with the touched
    examples flagged; the input is left unchanged.
    """
    if not 0.0 <= rate <= 0.5:
        raise ConfigError("mislabel rate must lie in [0, 0.5]")
    if mode not in ("intent", "slot", "both"):
        raise ConfigError(f"unknown mislabel mode {mode!r}")
    n = len(dataset)
    n_bad = math.floor(rate * n + 1e-9)
    if n_bad == 0:
        return dataset.replace()
    rng = substream(seed, "mislabel")
    chosen = np.sort(rng.choice(n, size=n_bad, replace=False))
    intents = dataset.intents.copy()
    slots = dataset.slots.copy()
    flags = dataset.mislabeled.copy()
    if mode in ("intent", "both") and dataset.n_intents < 2:
        raise ConfigError("intent corruption needs at least two intent classes")
    if mode in ("slot", "both") and dataset.n_slots < 2:
        raise ConfigError("slot corruption needs at least two slot classes")
    for i in chosen:
        if mode in ("intent", "both"):
            shift = rng.integers(1, dataset.n_intents)
            intents[i] = (intents[i] + shift) % dataset.n_intents
        if mode in ("slot", "both"):
            positions = np.flatnonzero(dataset.mask[i])
            if len(positions) == 0:
                raise ConfigError(f"example {i} has no tokens to corrupt")
            m = positions[rng.integers(len(positions))]
            slots[i, m] = (slots[i, m] + rng.integers(1, dataset.n_slots)) % dataset.n_slots
        flags[i] = True
    return dataset.replace(intents=intents, slots=slots, mislabeled=flags)


# ------------------------------------------------------------------ batching


def batch_iter(
    dataset: Dataset,
    indices,
    batch_size: int,
    shuffle_seed: int | None = None,
) -> Iterator[Batch]:
    """Yield ``ceil(len(indices) / batch_size)`` batches; the last may be partial."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        return
    if idx.min() < 0 or idx.max() >= len(dataset):
        raise ValidationError("batch index out of range")
    if shuffle_seed is not None:
        idx = idx[np.random.default_rng(shuffle_seed).permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        yield dataset.batch(idx[start : start + batch_size])


def n_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)
