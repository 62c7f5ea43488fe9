"""Training regimes: full, static, single, dynamic and dynamic-random pruning.

Every regime counts steps exactly; :func:`count_steps` predicts the count
without training.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import substream
from .analysis import evaluate
from .data import Dataset, batch_iter, n_batches
from .errors import ConfigError
from .model import JointClassifier, OptimizerState, adam_step, loss_and_gradients
from .scoring import ScoreBook, Scores, ema_update, random_scores, score_dataset

METHODS = ("full", "static", "single", "dynamic", "dynamic_random")
CYCLIC = ("dynamic", "dynamic_random")


@dataclass
class PruneConfig:
    method: str = "dynamic"
    E: int = 40
    tau: int = 4
    T: int = 4
    rho: float = 0.5
    alpha: float = 0.8
    lam: float = 0.5
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    static_R: int = 10
    static_epochs: int = 10
    d_emb: int = 16
    d_hid: int = 32
    init_scale: float = 0.2

    def validate(self) -> PruneConfig:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.E < 1:
            raise ConfigError("E must be >= 1")
        if not 0 <= self.tau <= self.E:
            raise ConfigError(f"tau <= E violated (tau={self.tau}, E={self.E})")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho in [0, 1) violated (rho={self.rho})")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha in (0, 1] violated")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("lam in (0, 1) violated")
        if self.batch_size < 1:
            raise ConfigError("batch_size >= 1 violated")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate > 0 violated")
        if self.method in CYCLIC:
            if not 1 <= self.T:
                raise ConfigError("T >= 1 violated")
            if self.T > self.E - self.tau:
                raise ConfigError("no pruning cycles; increase E-tau or decrease T")
        elif self.method in ("single", "static") and self.E - self.tau < 1:
            raise ConfigError("no post-tau epochs; increase E-tau")
        if self.method == "static" and (self.static_R < 1 or self.static_epochs < 0):
            raise ConfigError("static_R >= 1 and static_epochs >= 0 required")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    model: JointClassifier
    config: PruneConfig
    book: ScoreBook | None
    trace: list[dict]
    total_train_steps: int
    total_scoring_passes: int
    retained_sets: dict[int, list[int]]
    step_times: list[float]
    forward_times: list[float]
    steps_per_epoch: int
    n_train: int
    overhead_steps: int = 0
    overhead_step_times: list[float] = field(default_factory=list)
    static_scores: list[Scores] = field(default_factory=list)
    final_metrics: dict[str, float] = field(default_factory=dict)

    @property
    def measured_time(self) -> float:
        return float(sum(self.step_times) + sum(self.forward_times) + sum(self.overhead_step_times))


def retained_size(n: int, rho: float) -> int:
    # the 1e-9 keeps decimal rho (e.g. 0.9 * 10) from flooring one short
    return max(1, math.floor((1.0 - rho) * n + 1e-9))


def select_subset(scores, rho: float) -> np.ndarray:
    """Ids of the ``max(1, floor((1 - rho) N))`` highest scores, ascending.

    Ties are broken by ascending id, so the result depends only on
    ``(scores, rho)``.
    """
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n < 1:
        raise ConfigError("cannot select from an empty score vector")
    if not 0.0 <= rho < 1.0:
        raise ConfigError("rho must lie in [0, 1)")
    order = np.lexsort((np.arange(n), -scores))
    return np.sort(order[: retained_size(n, rho)])


def count_steps(config: PruneConfig, N: int) -> int:
    """Training steps a run will take (scoring-model overhead excluded)."""
    B = n_batches(N, config.batch_size)
    if config.method == "full":
        return config.E * B
    B_sub = n_batches(retained_size(N, config.rho), config.batch_size)
    return config.tau * B + (config.E - config.tau) * B_sub


def idealized_steps(config: PruneConfig, N: int) -> float:
    B = n_batches(N, config.batch_size)
    if config.method == "full":
        return float(config.E * B)
    return config.E * B - config.rho * (config.E - config.tau) * B


class _Trainer:
    def __init__(self, model, config: PruneConfig, dataset: Dataset, eval_set=None,
                 on_step=None, model_index: int = 0):
        self.model = model
        self.config = config
        self.dataset = dataset
        self.eval_set = eval_set
        self.on_step = on_step
        self.model_index = model_index
        self.opt = OptimizerState.for_model(
            model, lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.eps
        )
        self.steps = 0
        self.step_times: list[float] = []
        self.trace: list[dict] = []

    def _shuffle_seed(self, epoch: int) -> int:
        return int(substream(self.config.seed, "batching", self.model_index, epoch).integers(2**63))

    def epoch(self, epoch: int, indices, max_steps: int | None = None) -> None:
        losses = []
        for batch in batch_iter(self.dataset, indices, self.config.batch_size, self._shuffle_seed(epoch)):
            if max_steps is not None and len(losses) >= max_steps:
                break
            t0 = time.perf_counter()
            value, grads = loss_and_gradients(self.model, batch, self.config.lam)
            adam_step(self.model, self.opt, grads)
            if self.on_step is not None:
                self.on_step(self)
            self.step_times.append(time.perf_counter() - t0)
            self.steps += 1
            losses.append(value)
        self.trace.append({"epoch": epoch, "split": "train", "metric": "loss",
                           "value": float(np.mean(losses)) if losses else float("nan")})
        self.trace.append({"epoch": epoch, "split": "train", "metric": "examples",
                           "value": float(len(indices))})
        if self.eval_set is not None:
            for k, v in evaluate(self.model, self.eval_set).items():
                self.trace.append({"epoch": epoch, "split": "eval", "metric": k, "value": v})


def _default_factory(config: PruneConfig, dataset: Dataset):
    def make(index: int = 0) -> JointClassifier:
        return JointClassifier.for_dataset(
            dataset, d_emb=config.d_emb, d_hid=config.d_hid, seed=config.seed,
            scale=config.init_scale, index=index,
        )
    return make


def _check(config: PruneConfig, dataset: Dataset, model: JointClassifier | None) -> None:
    config.validate()
    if len(dataset) == 0:
        raise ConfigError("training set is empty")
    if model is not None:
        model.check_compatible(dataset)


def _finish(trainer: _Trainer, config, dataset, *, book, passes, retained, forward_times, eval_set,
            **extra) -> RunResult:
    final = evaluate(trainer.model, eval_set) if eval_set is not None else {}
    return RunResult(
        model=trainer.model, config=config, book=book, trace=trainer.trace,
        total_train_steps=trainer.steps, total_scoring_passes=passes,
        retained_sets=retained, step_times=trainer.step_times, forward_times=forward_times,
        steps_per_epoch=n_batches(len(dataset), config.batch_size), n_train=len(dataset),
        final_metrics=final, **extra,
    )


def run_full(config: PruneConfig, dataset: Dataset, model: JointClassifier | None = None,
             eval_set: Dataset | None = None, on_step=None) -> RunResult:
    _check(config, dataset, model)
    model = model or _default_factory(config, dataset)(0)
    tr = _Trainer(model, config, dataset, eval_set, on_step)
    everything = np.arange(len(dataset))
    for e in range(config.E):
        tr.epoch(e, everything)
    return _finish(tr, config, dataset, book=None, passes=0, retained={}, forward_times=[],
                   eval_set=eval_set)


def run_dynamic(config: PruneConfig, dataset: Dataset, model: JointClassifier | None = None,
                eval_set: Dataset | None = None, on_step=None) -> RunResult:
    """Warm up on the full set, then re-score and re-select every ``T`` epochs.

    Runs ``C = floor((E - tau) / T)`` cycles; leftover epochs reuse the last
    subset without another scoring pass.
    """
    _check(config, dataset, model)
    if config.method not in CYCLIC:
        raise ConfigError(f"run_dynamic needs a cyclic method, got {config.method!r}")
    C = (config.E - config.tau) // config.T
    if C == 0:
        raise ConfigError("no pruning cycles; increase E-tau or decrease T")
    model = model or _default_factory(config, dataset)(0)
    tr = _Trainer(model, config, dataset, eval_set, on_step)
    N = len(dataset)
    everything = np.arange(N)
    for e in range(config.tau):
        tr.epoch(e, everything)

    book = ScoreBook(N)
    retained: dict[int, list[int]] = {}
    forward_times: list[float] = []
    passes = 0
    epoch = config.tau
    subset = everything
    for c in range(C):
        if config.method == "dynamic":
            t0 = time.perf_counter()
            fresh = score_dataset(model, dataset)
            forward_times.append(time.perf_counter() - t0)
            passes += 1
            ema_update(book, fresh, config.alpha, cycle=c)
            subset = select_subset(book.chi_ema, config.rho)
        else:
            book.record(c, np.full(N, np.nan))
            subset = select_subset(random_scores(N, config.seed, c), config.rho)
        book.mark_selected(subset)
        retained[c] = subset.tolist()
        for _ in range(config.T):
            tr.epoch(epoch, subset)
            epoch += 1
    while epoch < config.E:
        tr.epoch(epoch, subset)
        epoch += 1
    return _finish(tr, config, dataset, book=book, passes=passes, retained=retained,
                   forward_times=forward_times, eval_set=eval_set)


def run_single(config: PruneConfig, dataset: Dataset, model: JointClassifier | None = None,
               eval_set: Dataset | None = None, on_step=None) -> RunResult:
    """``tau`` full epochs, one scoring pass, then ``E - tau`` epochs on a fixed subset."""
    _check(config, dataset, model)
    model = model or _default_factory(config, dataset)(0)
    tr = _Trainer(model, config, dataset, eval_set, on_step)
    N = len(dataset)
    everything = np.arange(N)
    for e in range(config.tau):
        tr.epoch(e, everything)
    t0 = time.perf_counter()
    fresh = score_dataset(model, dataset)
    forward_times = [time.perf_counter() - t0]
    book = ema_update(ScoreBook(N), fresh, config.alpha, cycle=0)
    subset = select_subset(book.chi_ema, config.rho)
    book.mark_selected(subset)
    for e in range(config.tau, config.E):
        tr.epoch(e, subset)
    return _finish(tr, config, dataset, book=book, passes=1, retained={0: subset.tolist()},
                   forward_times=forward_times, eval_set=eval_set)


def run_static(config: PruneConfig, dataset: Dataset,
               model_factory: Callable[[int], JointClassifier] | None = None,
               eval_set: Dataset | None = None, on_step=None) -> RunResult:
    """Select once from joint scores averaged over ``static_R`` independently
    initialized models, then train a fresh model on that subset.

    The main model gets the same step budget as the other pruned regimes,
    ``tau * B + (E - tau) * B'``, spent entirely on the subset.
    """
    _check(config, dataset, None)
    factory = model_factory or _default_factory(config, dataset)
    N = len(dataset)
    everything = np.arange(N)
    per_model: list[Scores] = []
    overhead_times: list[float] = []
    overhead = 0
    forward_times = []
    for r in range(config.static_R):
        scorer = factory(r)
        scorer.check_compatible(dataset)
        tr = _Trainer(scorer, config, dataset, None, on_step, model_index=r)
        for e in range(config.static_epochs):
            tr.epoch(e, everything)
        overhead += tr.steps
        overhead_times.extend(tr.step_times)
        t0 = time.perf_counter()
        per_model.append(score_dataset(scorer, dataset))
        forward_times.append(time.perf_counter() - t0)
    mean_nlu = np.mean([s.chi_nlu for s in per_model], axis=0)
    book = ema_update(ScoreBook(N), mean_nlu, config.alpha, cycle=0)
    subset = select_subset(mean_nlu, config.rho)
    book.mark_selected(subset)

    model = factory(0)
    tr = _Trainer(model, config, dataset, eval_set, on_step)
    budget = count_steps(config, N)
    e = 0
    while tr.steps < budget:
        tr.epoch(e, subset, max_steps=budget - tr.steps)
        e += 1
    return _finish(tr, config, dataset, book=book, passes=config.static_R,
                   retained={0: subset.tolist()}, forward_times=forward_times, eval_set=eval_set,
                   overhead_steps=overhead, overhead_step_times=overhead_times,
                   static_scores=per_model)


def run(config: PruneConfig, dataset: Dataset, eval_set: Dataset | None = None,
        model: JointClassifier | None = None, on_step=None) -> RunResult:
    config.validate()
    if config.method == "full":
        return run_full(config, dataset, model, eval_set, on_step)
    if config.method == "single":
        return run_single(config, dataset, model, eval_set, on_step)
    if config.method == "static":
        # static trains fresh models by construction; a passed model is not reused
        return run_static(config, dataset, None, eval_set, on_step)
    return run_dynamic(config, dataset, model, eval_set, on_step)
