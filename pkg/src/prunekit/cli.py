"""``prunekit`` command line: generate, train, compare, runtime-model, datamap."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    build_data_map,
    classify_regions,
    selection_histogram,
    spearman,
    top_decile_enrichment,
    write_data_map_csv,
    write_histogram_csv,
)
from .curriculum import METHODS, PruneConfig, count_steps, idealized_steps, run
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    inject_mislabels,
    load_jsonl,
    save_jsonl,
    split_dataset,
)
from .errors import ConfigError, DataError, InputError, PrunekitError
from .model import save_checkpoint
from .runtime import (
    SWEEP_COLUMNS,
    CostModel,
    measure_cost,
    predict_total_time,
    sweep_rows,
)
from .scoring import read_scores_csv, write_scores_csv

SEED_ENV = "PRUNEKIT_SEED"


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# ----------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one training run."""

    prune: PruneConfig = field(default_factory=PruneConfig)
    data_path: str | None = None
    M_max: int | None = None
    synthetic: dict = field(default_factory=dict)
    mislabel_rate: float = 0.0
    mislabel_mode: str = "intent"
    eval_fraction: float = 0.2
    output_dir: str = "run"

    def validate(self) -> ExperimentConfig:
        self.prune.validate()
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError(f"eval fraction in (0, 1) violated (eval_fraction={self.eval_fraction})")
        if not 0.0 <= self.mislabel_rate <= 0.5:
            raise ConfigError("mislabel_rate in [0, 0.5] violated")
        unknown = set(self.synthetic) - {f.name for f in fields(SyntheticSpec)}
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return self

    def synthetic_spec(self) -> SyntheticSpec:
        kw = dict(self.synthetic)
        kw.setdefault("seed", self.prune.seed)
        return SyntheticSpec(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prune"] = self.prune.to_dict()
        return d


_PRUNE_FIELDS = {f.name for f in fields(PruneConfig)}


def load_experiment(path: str | None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    prune_raw = dict(raw.pop("prune", {}))
    unknown = set(prune_raw) - _PRUNE_FIELDS
    if unknown:
        raise ConfigError(f"unknown prune fields: {sorted(unknown)}")
    prune_raw.setdefault("seed", default_seed())
    # nested "data" and "mislabel" blocks are shorthands for the flat keys
    data = raw.pop("data", None) or {}
    mislabel = raw.pop("mislabel", None) or {}
    for src, dst in (("path", "data_path"), ("M_max", "M_max"), ("synthetic", "synthetic")):
        if src in data:
            raw[dst] = data[src]
    for src, dst in (("rate", "mislabel_rate"), ("mode", "mislabel_mode")):
        if src in mislabel:
            raw[dst] = mislabel[src]
    unknown = set(raw) - ({f.name for f in fields(ExperimentConfig)} - {"prune"})
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(prune=PruneConfig(**prune_raw), **raw)


# flag name -> (PruneConfig field | ExperimentConfig field, scope)
_OVERRIDES = {
    "method": ("method", "prune"),
    "E": ("E", "prune"),
    "tau": ("tau", "prune"),
    "T": ("T", "prune"),
    "rho": ("rho", "prune"),
    "alpha": ("alpha", "prune"),
    "lam": ("lam", "prune"),
    "batch_size": ("batch_size", "prune"),
    "lr": ("learning_rate", "prune"),
    "seed": ("seed", "prune"),
    "d_emb": ("d_emb", "prune"),
    "d_hid": ("d_hid", "prune"),
    "static_R": ("static_R", "prune"),
    "static_epochs": ("static_epochs", "prune"),
    "data": ("data_path", "exp"),
    "M_max": ("M_max", "exp"),
    "eval_fraction": ("eval_fraction", "exp"),
    "mislabel_rate": ("mislabel_rate", "exp"),
    "mislabel_mode": ("mislabel_mode", "exp"),
    "out": ("output_dir", "exp"),
}


def apply_overrides(exp: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    for flag, (name, scope) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        setattr(exp.prune if scope == "prune" else exp, name, value)
    return exp


def _jsonl_max_len(path: str) -> int:
    meta = Path(path).with_name(Path(path).name + ".meta.json")
    if meta.exists():
        m = json.loads(meta.read_text(encoding="utf-8")).get("M_max")
        if m:
            return int(m)
    longest = 1
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                longest = max(longest, len(json.loads(line).get("tokens", [])))
            except (json.JSONDecodeError, AttributeError):
                continue  # load_jsonl reports the bad line
    return longest


def build_datasets(exp: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, eval) with mislabels injected into the training half only."""
    seed = exp.prune.seed
    if exp.data_path is not None:
        try:
            M = exp.M_max or _jsonl_max_len(exp.data_path)
            ds = load_jsonl(exp.data_path, M)
        except FileNotFoundError:
            raise DataError(f"dataset not found: {exp.data_path}") from None
    else:
        ds = generate_synthetic(exp.synthetic_spec())
    train, evals = split_dataset(ds, exp.eval_fraction, seed)
    if exp.mislabel_rate > 0:
        train = inject_mislabels(train, exp.mislabel_rate, exp.mislabel_mode, seed)
    return train, evals


# ----------------------------------------------------------------- outputs


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_metrics_csv(trace, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "split", "metric", "value"))
        for row in trace:
            w.writerow((row["epoch"], row["split"], row["metric"], repr(float(row["value"]))))


def predicted_time(config: PruneConfig, cost: CostModel) -> float:
    """Cost-model estimate for any regime, using a run's measured timings."""
    E, tau, rho = config.E, config.tau, config.rho
    step = cost.B * cost.dt_step
    if config.method == "full":
        return E * step
    if config.method == "dynamic":
        return predict_total_time(cost, E, tau, config.T, rho)
    if config.method == "dynamic_random":
        return predict_total_time(CostModel(cost.dt_step, 0.0, cost.B), E, tau, config.T, rho)
    one_pass = E * step - (E - tau) * step * rho
    if config.method == "single":
        return one_pass + cost.dt_forward
    # static: R scoring models trained on the full set, then one fixed-subset run
    return one_pass + config.static_R * (config.static_epochs * step + cost.dt_forward)


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    kw = {}
    if args.config:
        kw = dict(load_experiment(args.config).synthetic)
    for name in ("n_examples", "n_intents", "n_slots", "vocab_size", "min_len", "max_len",
                 "intent_skew", "slot_density", "confusion_rate", "keyword_rate", "M_max"):
        value = getattr(args, name)
        if value is not None:
            kw[name] = value
    kw["seed"] = args.seed if args.seed is not None else kw.get("seed", default_seed())
    try:
        spec = SyntheticSpec(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    ds = generate_synthetic(spec)
    if args.mislabel_rate:
        ds = inject_mislabels(ds, args.mislabel_rate, args.mislabel_mode, spec.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(ds, out)
    print(f"N={len(ds)} K_intent={ds.n_intents} K_slot={ds.n_slots} -> {out}")
    return 0


def cmd_train(args) -> int:
    exp = apply_overrides(load_experiment(args.config), args).validate()
    train, evals = build_datasets(exp)
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = exp.prune
    result = run(cfg, train, eval_set=evals)

    _write_metrics_csv(result.trace, out / "metrics.csv")
    if result.book is not None:
        write_scores_csv(result.book, out / "scores.csv")
    _write_json(out / "retained.json", {str(c): ids for c, ids in result.retained_sets.items()})
    save_jsonl(train, out / "train.jsonl")
    save_checkpoint(result.model, out / "model.npz")

    summary = {
        "version": __version__,
        "config": exp.to_dict(),
        "dataset_fingerprint": train.fingerprint(),
        "eval_fingerprint": evals.fingerprint(),
        "n_train": len(train),
        "n_eval": len(evals),
        "n_mislabeled": int(train.mislabeled.sum()),
        "steps_per_epoch": result.steps_per_epoch,
        "total_train_steps": result.total_train_steps,
        "expected_train_steps": count_steps(cfg, len(train)),
        "idealized_train_steps": idealized_steps(cfg, len(train)),
        "total_scoring_passes": result.total_scoring_passes,
        "overhead_steps": result.overhead_steps,
        "n_cycles": len(result.retained_sets),
        "final_metrics": result.final_metrics,
        "model_hash": result.model.param_hash(),
    }
    _write_json(out / "summary.json", summary)

    # wall-clock figures live apart from the deterministic outputs
    cost = measure_cost(result)
    _write_json(out / "timing.json", {
        "measured_time": result.measured_time,
        "cost_model": cost.to_dict(),
        "predicted_time": predicted_time(cfg, cost),
    })
    fm = result.final_metrics
    print(f"{cfg.method} rho={cfg.rho}: full_seq={fm['full_sequence_accuracy']:.4f} "
          f"intent={fm['intent_accuracy']:.4f} slot_f1={fm['slot_micro_f1']:.4f} "
          f"steps={result.total_train_steps} -> {out}")
    return 0


COMPARE_COLUMNS = (
    "run", "method", "rho", "full_sequence_accuracy", "intent_accuracy", "slot_micro_f1",
    "total_train_steps", "measured_time", "predicted_time", "dataset_mismatch",
)


def _read_run(run_dir: Path) -> tuple[dict, dict]:
    summary = run_dir / "summary.json"
    if not summary.exists():
        raise DataError(f"{run_dir}: no summary.json (not a train output directory?)")
    s = json.loads(summary.read_text(encoding="utf-8"))
    timing_path = run_dir / "timing.json"
    t = json.loads(timing_path.read_text(encoding="utf-8")) if timing_path.exists() else {}
    return s, t


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise ConfigError("compare needs at least two run directories")
    runs = [(Path(r), *_read_run(Path(r))) for r in args.runs]
    reference = runs[0][1]["dataset_fingerprint"]
    rows = []
    for path, s, t in runs:
        mismatch = s["dataset_fingerprint"] != reference
        if mismatch:
            print(f"warning: {path} was trained on a different dataset than {runs[0][0]}",
                  file=sys.stderr)
        fm = s["final_metrics"]
        rows.append({
            "run": str(path),
            "method": s["config"]["prune"]["method"],
            "rho": s["config"]["prune"]["rho"],
            "full_sequence_accuracy": fm.get("full_sequence_accuracy", ""),
            "intent_accuracy": fm.get("intent_accuracy", ""),
            "slot_micro_f1": fm.get("slot_micro_f1", ""),
            "total_train_steps": s["total_train_steps"],
            "measured_time": t.get("measured_time", ""),
            "predicted_time": t.get("predicted_time", ""),
            "dataset_mismatch": int(mismatch),
        })
    _emit_csv(rows, COMPARE_COLUMNS, args.out)
    return 0


def _emit_csv(rows, columns, out) -> None:
    fh = open(out, "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def cmd_runtime(args) -> int:
    try:
        cost = CostModel.from_json(args.cost)
    except FileNotFoundError:
        raise DataError(f"cost model file not found: {args.cost}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad cost model JSON: {exc}") from None
    rows = sweep_rows(cost, args.E, args.tau, args.rho, args.T)
    for r in rows:
        if math.isnan(r["min_cycle"]):
            r["min_cycle"] = "undefined"
    _emit_csv(rows, SWEEP_COLUMNS, args.out)
    return 0


def cmd_datamap(args) -> int:
    run_dir = Path(args.run_dir)
    scores = run_dir / "scores.csv"
    if not scores.exists():
        raise DataError(f"{run_dir}: no scores.csv (full-training runs record no scores)")
    book = read_scores_csv(scores)
    points = classify_regions(build_data_map(book), args.hard_q, args.easy_q)
    flags = None
    train_path = run_dir / "train.jsonl"
    lengths = None
    if train_path.exists():
        train = load_jsonl(train_path, _jsonl_max_len(str(train_path)))
        if len(train) == book.n:
            flags, lengths = train.mislabeled, train.lengths
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    write_data_map_csv(points, out / "datamap.csv", flags)
    write_histogram_csv(selection_histogram(points, book.n_cycles), out / "selection_histogram.csv")

    regions = {r: sum(p.region == r for p in points) for r in ("easy", "ambiguous", "hard")}
    print(f"cycles={book.n_cycles} " + " ".join(f"{k}={v}" for k, v in regions.items()))
    mean_chi = np.array([p.mean_chi for p in points])
    if lengths is not None:
        try:
            print(f"spearman(mean_chi, length)={spearman(mean_chi, lengths):.4f}")
        except InputError:
            pass
    if flags is not None and flags.any():
        print(f"mislabeled top-decile enrichment={top_decile_enrichment(mean_chi, flags):.2f}x")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prunekit", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic joint intent/slot corpus as JSONL")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="experiment JSON; its synthetic block supplies defaults")
    g.add_argument("--n", dest="n_examples", type=int)
    g.add_argument("--intents", dest="n_intents", type=int)
    g.add_argument("--slots", dest="n_slots", type=int)
    g.add_argument("--vocab", dest="vocab_size", type=int)
    g.add_argument("--min-len", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--M-max", dest="M_max", type=int)
    g.add_argument("--skew", dest="intent_skew", type=float)
    g.add_argument("--slot-density", type=float)
    g.add_argument("--confusion-rate", type=float)
    g.add_argument("--keyword-rate", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--mislabel-rate", type=float, default=0.0)
    g.add_argument("--mislabel-mode", choices=("intent", "slot", "both"), default="intent")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one regime and write a run directory")
    t.add_argument("--config", help="experiment JSON; flags below override it")
    t.add_argument("--method", choices=METHODS)
    t.add_argument("--E", type=int)
    t.add_argument("--tau", type=int)
    t.add_argument("--T", type=int)
    t.add_argument("--rho", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--lam", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--d-emb", type=int)
    t.add_argument("--d-hid", type=int)
    t.add_argument("--static-R", dest="static_R", type=int)
    t.add_argument("--static-epochs", type=int)
    t.add_argument("--data", help="JSONL dataset (default: synthetic)")
    t.add_argument("--M-max", dest="M_max", type=int)
    t.add_argument("--eval-fraction", type=float)
    t.add_argument("--mislabel-rate", type=float)
    t.add_argument("--mislabel-mode", choices=("intent", "slot", "both"))
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="tabulate final metrics and timings of several runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", help="CSV path (default: stdout)")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("runtime-model", help="sweep the analytic training-time model")
    r.add_argument("cost", help="JSON with dt_step, dt_forward, B")
    r.add_argument("--E", type=int, default=40)
    r.add_argument("--tau", type=int, default=4)
    r.add_argument("--rho", type=float, nargs="*", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    r.add_argument("--T", type=int, nargs="*", default=[1, 2, 4, 8])
    r.add_argument("--out", help="CSV path (default: stdout)")
    r.set_defaults(func=cmd_runtime)

    d = sub.add_parser("datamap", help="per-example mean/variance map of a run's scores")
    d.add_argument("run_dir")
    d.add_argument("--hard-q", type=float, default=0.75)
    d.add_argument("--easy-q", type=float, default=0.25)
    d.add_argument("--out", help="output directory (default: the run directory)")
    d.set_defaults(func=cmd_datamap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PrunekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
