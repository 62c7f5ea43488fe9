"""Joint intent + slot classifier with hand-derived gradients.

Per token: embedding -> tanh MLP -> layer norm (no affine, no epsilon), so every
real token's hidden vector has norm exactly ``sqrt(d_hid)``. The intent head
reads the mean of the real-token hidden vectors; the slot head reads each
token's hidden vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from ._rng import substream
from .data import Batch, Dataset, Example
from .errors import ConfigError, InputError, NumericError

PARAM_NAMES = ("embedding", "mlp_w", "mlp_b", "intent_w", "intent_b", "slot_w", "slot_b")


@dataclass
class JointClassifier:
    params: dict[str, np.ndarray]
    vocab_size: int
    n_intents: int
    n_slots: int
    d_emb: int
    d_hid: int

    @classmethod
    def init(
        cls,
        vocab_size: int,
        n_intents: int,
        n_slots: int,
        d_emb: int = 16,
        d_hid: int = 32,
        seed: int = 0,
        scale: float = 0.02,
        index: int = 0,
    ) -> JointClassifier:
        """Gaussian(0, scale) weights and zero biases.

        ``index`` selects an independent initialization under the same seed.
        """
        rng = substream(seed, "init", index)
        params = {
            "embedding": rng.normal(0.0, scale, (vocab_size, d_emb)),
            "mlp_w": rng.normal(0.0, scale, (d_emb, d_hid)),
            "mlp_b": np.zeros(d_hid),
            "intent_w": rng.normal(0.0, scale, (d_hid, n_intents)),
            "intent_b": np.zeros(n_intents),
            "slot_w": rng.normal(0.0, scale, (d_hid, n_slots)),
            "slot_b": np.zeros(n_slots),
        }
        return cls(params, vocab_size, n_intents, n_slots, d_emb, d_hid)

    @classmethod
    def for_dataset(cls, dataset: Dataset, **kwargs) -> JointClassifier:
        return cls.init(dataset.vocab_size, dataset.n_intents, dataset.n_slots, **kwargs)

    def copy(self) -> JointClassifier:
        return JointClassifier(
            {k: v.copy() for k, v in self.params.items()},
            self.vocab_size, self.n_intents, self.n_slots, self.d_emb, self.d_hid,
        )

    def check_compatible(self, dataset: Dataset) -> None:
        if (
            dataset.vocab_size > self.vocab_size
            or dataset.n_intents != self.n_intents
            or dataset.n_slots != self.n_slots
        ):
            raise ConfigError(
                f"model (V={self.vocab_size}, K_intent={self.n_intents}, K_slot={self.n_slots}) "
                f"does not match dataset (V={dataset.vocab_size}, "
                f"K_intent={dataset.n_intents}, K_slot={dataset.n_slots})"
            )

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


@dataclass
class Predictions:
    ids: np.ndarray
    intent_probs: np.ndarray  # (B, K_intent)
    slot_probs: np.ndarray  # (B, M, K_slot); meaningful where mask is true
    hidden: np.ndarray  # (B, M, d_hid); zero on padding
    pooled: np.ndarray  # (B, d_hid)
    mask: np.ndarray
    _act: np.ndarray | None = field(default=None, repr=False)
    _inv_std: np.ndarray | None = field(default=None, repr=False)

    @property
    def intent_pred(self) -> np.ndarray:
        return self.intent_probs.argmax(axis=1)

    @property
    def slot_pred(self) -> np.ndarray:
        return self.slot_probs.argmax(axis=2)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(x) -> Batch:
    if isinstance(x, Batch):
        return x
    if isinstance(x, Example):
        m = x.mask
        w = max(int(m.sum()), 1)
        return Batch(
            ids=np.array([x.id]),
            tokens=np.asarray(x.tokens)[None, :w],
            mask=np.asarray(m)[None, :w],
            intents=np.array([x.intent]),
            slots=np.asarray(x.slots)[None, :w],
        )
    raise InputError(f"expected Batch or Example, got {type(x).__name__}")


def forward(model: JointClassifier, batch) -> Predictions:
    batch = _as_batch(batch)
    tokens = np.ascontiguousarray(batch.tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.vocab_size):
        raise InputError(f"token index outside [0, {model.vocab_size})")
    mask = np.ascontiguousarray(batch.mask, dtype=bool)
    p = model.params
    act, hidden, inv_std = kernels.encoder_forward(p["embedding"], p["mlp_w"], p["mlp_b"], tokens, mask)
    n_tok = np.maximum(mask.sum(axis=1), 1)[:, None]
    pooled = hidden.sum(axis=1) / n_tok
    intent_probs = _softmax(pooled @ p["intent_w"] + p["intent_b"])
    slot_probs = _softmax(hidden @ p["slot_w"] + p["slot_b"])
    return Predictions(batch.ids, intent_probs, slot_probs, hidden, pooled, mask, act, inv_std)


def predict(model: JointClassifier, dataset: Dataset, batch_size: int = 512) -> Predictions:
    """Forward pass over a whole dataset, padded back to ``M_max``."""
    N, M = len(dataset), dataset.M_max
    out = Predictions(
        ids=np.arange(N),
        intent_probs=np.empty((N, model.n_intents)),
        slot_probs=np.zeros((N, M, model.n_slots)),
        hidden=np.zeros((N, M, model.d_hid)),
        pooled=np.empty((N, model.d_hid)),
        mask=np.asarray(dataset.mask),
    )
    for start in range(0, N, batch_size):
        idx = np.arange(start, min(start + batch_size, N))
        pr = forward(model, dataset.batch(idx))
        w = pr.mask.shape[1]
        out.intent_probs[idx] = pr.intent_probs
        out.slot_probs[idx, :w] = pr.slot_probs
        out.hidden[idx, :w] = pr.hidden
        out.pooled[idx] = pr.pooled
    return out


def _per_example_loss(pred: Predictions, batch: Batch, lam: float) -> np.ndarray:
    n = len(batch.intents)
    tiny = np.finfo(float).tiny
    ce_int = -np.log(np.maximum(pred.intent_probs[np.arange(n), batch.intents], tiny))
    w = batch.slots.shape[1]
    p_true = np.take_along_axis(pred.slot_probs[:, :w], batch.slots[..., None], axis=2)[..., 0]
    ce_slot = -(np.log(np.maximum(p_true, tiny)) * batch.mask).sum(axis=1)
    return lam * ce_int + (1.0 - lam) * ce_slot


def loss(pred: Predictions, batch, lam: float = 0.5) -> float:
    """Batch mean of ``lam * CE_intent + (1 - lam) * sum_m CE_slot[m]`` over real tokens."""
    if not 0.0 < lam < 1.0:
        raise ConfigError("loss weight must lie in (0, 1)")
    batch = _as_batch(batch)
    return float(_per_example_loss(pred, batch, lam).mean())


def loss_and_gradients(model: JointClassifier, batch, lam: float = 0.5):
    batch = _as_batch(batch)
    pred = forward(model, batch)
    value = loss(pred, batch, lam)
    p = model.params
    n = len(batch.intents)
    mask = pred.mask
    fmask = mask[..., None].astype(float)

    d_int = pred.intent_probs.copy()
    d_int[np.arange(n), batch.intents] -= 1.0
    d_int *= lam / n
    d_slot = pred.slot_probs.copy()
    np.put_along_axis(
        d_slot, batch.slots[..., None],
        np.take_along_axis(d_slot, batch.slots[..., None], axis=2) - 1.0, axis=2,
    )
    d_slot *= fmask * ((1.0 - lam) / n)

    grads = {
        "intent_w": pred.pooled.T @ d_int,
        "intent_b": d_int.sum(axis=0),
        "slot_w": np.einsum("bmh,bms->hs", pred.hidden, d_slot),
        "slot_b": d_slot.sum(axis=(0, 1)),
    }
    n_tok = np.maximum(mask.sum(axis=1), 1)
    d_pooled = d_int @ p["intent_w"].T
    d_hidden = d_slot @ p["slot_w"].T + fmask * (d_pooled / n_tok[:, None])[:, None, :]
    d_emb, d_w, d_b = kernels.encoder_backward(
        p["embedding"], p["mlp_w"], np.ascontiguousarray(batch.tokens, dtype=np.int64), mask,
        pred._act, pred.hidden, pred._inv_std, d_hidden,
    )
    grads["embedding"] = d_emb
    grads["mlp_w"] = d_w
    grads["mlp_b"] = d_b
    return value, grads


def gradients(model: JointClassifier, batch, lam: float = 0.5) -> dict[str, np.ndarray]:
    return loss_and_gradients(model, batch, lam)[1]


def last_layer_gradients(model: JointClassifier, example) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted per-example head gradients.

    Intent head: ``(p - y) h_pool^T``. Slot head: ``sum_m (p_m - y_m) h_m^T`` over
    real tokens. Both are ``K x d_hid``.
    """
    batch = _as_batch(example)
    if len(batch.intents) != 1:
        raise InputError("last-layer gradients are defined for a single example")
    pred = forward(model, batch)
    err_int = pred.intent_probs[0].copy()
    err_int[batch.intents[0]] -= 1.0
    g_int = np.outer(err_int, pred.pooled[0])
    m = pred.mask[0]
    delta = pred.slot_probs[0][m].copy()
    delta[np.arange(len(delta)), batch.slots[0][m]] -= 1.0
    g_slot = delta.T @ pred.hidden[0][m]
    return g_int, g_slot


def last_layer_grad_bound_check(model: JointClassifier, example) -> dict:
    """Compare the slot-head gradient norm with its triangle-inequality bound.

    ``lhs = ||sum_m delta_m h_m^T||_F``, ``rhs = sum_m ||delta_m|| ||h_m||``, and
    ``final = sqrt(M) ||h|| sqrt(sum_m ||delta_m||^2)`` with ``||h|| = sqrt(d_hid)``.
    """
    batch = _as_batch(example)
    pred = forward(model, batch)
    m = pred.mask[0]
    delta = pred.slot_probs[0][m].copy()
    delta[np.arange(len(delta)), batch.slots[0][m]] -= 1.0
    h = pred.hidden[0][m]
    lhs = float(np.linalg.norm(delta.T @ h))
    dn = np.linalg.norm(delta, axis=1)
    rhs = float((dn * np.linalg.norm(h, axis=1)).sum())
    final = float(np.sqrt(len(dn)) * np.sqrt(model.d_hid) * np.sqrt((dn**2).sum()))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "final_bound": final,
        "holds": lhs <= rhs + 1e-9,
        "final_holds": rhs <= final + 1e-9,
    }


# ---------------------------------------------------------------------- Adam


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: JointClassifier, lr: float = 1e-3, **kw) -> OptimizerState:
        zeros = {k: np.zeros_like(v) for k, v in model.params.items()}
        return cls(zeros, {k: np.zeros_like(v) for k, v in model.params.items()}, lr=lr, **kw)


def adam_step(model: JointClassifier, state: OptimizerState, grads: dict[str, np.ndarray]):
    """Bias-corrected Adam, in place. Returns ``(model, state)`` for chaining."""
    for name in PARAM_NAMES:
        g = grads[name]
        if g.shape != model.params[name].shape:
            raise InputError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name in PARAM_NAMES:
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        model.params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(model: JointClassifier, path) -> None:
    """``.npz`` of float64 tensors plus a JSON header with the model dimensions."""
    header = {
        "vocab_size": model.vocab_size,
        "n_intents": model.n_intents,
        "n_slots": model.n_slots,
        "d_emb": model.d_emb,
        "d_hid": model.d_hid,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **model.params)


def load_checkpoint(path) -> JointClassifier:
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        params = {k: z[k].astype(np.float64) for k in PARAM_NAMES}
    for k, shape in header.pop("shapes").items():
        if list(params[k].shape) != shape:
            raise ConfigError(f"checkpoint tensor {k} has shape {params[k].shape}, header says {shape}")
    return JointClassifier(params, **header)
