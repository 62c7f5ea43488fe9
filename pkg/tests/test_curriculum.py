import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prunekit.curriculum import (
    PruneConfig,
    count_steps,
    idealized_steps,
    retained_size,
    run,
    run_dynamic,
    run_single,
    run_static,
    select_subset,
)
from prunekit.data import SyntheticSpec, generate_synthetic, n_batches
from prunekit.errors import ConfigError
from prunekit.model import JointClassifier
from prunekit.scoring import score_dataset


@pytest.fixture(scope="module")
def ds():
    return generate_synthetic(SyntheticSpec(n_examples=70, vocab_size=120, seed=2))


def cfg(**kw):
    base = dict(E=6, tau=2, T=2, rho=0.5, batch_size=16, d_emb=6, d_hid=8, seed=1)
    base.update(kw)
    return PruneConfig(**base)


# ---------------------------------------------------------------- select_subset


def test_select_top_half():
    assert select_subset([0.9, 0.1, 0.5, 0.7], 0.5).tolist() == [0, 3]


def test_select_rho_zero_keeps_all():
    assert select_subset([0.3, 0.1, 0.2], 0.0).tolist() == [0, 1, 2]


def test_select_ties_break_by_id():
    assert select_subset([0.5, 0.5, 0.5, 0.1], 0.5).tolist() == [0, 1]


def test_select_keeps_at_least_one():
    assert select_subset([0.2, 0.9, 0.1], 0.99).tolist() == [1]


@given(
    scores=st.lists(st.floats(0, 10), min_size=1, max_size=60),
    rho=st.floats(0, 0.999),
    c=st.floats(1e-3, 1e3),
)
def test_selection_size_law_and_scale_invariance(scores, rho, c):
    sel = select_subset(scores, rho)
    assert len(sel) == max(1, int(np.floor((1 - rho) * len(scores) + 1e-9)))
    assert len(set(sel.tolist())) == len(sel)
    assert np.array_equal(sel, select_subset(np.asarray(scores) * c, rho))


def test_select_rejects_bad_input():
    with pytest.raises(ConfigError):
        select_subset([], 0.5)
    with pytest.raises(ConfigError):
        select_subset([1.0], 1.0)


# ----------------------------------------------------------------- count_steps


def test_count_steps_worked_example():
    c = PruneConfig(method="dynamic", E=10, tau=2, T=2, rho=0.5, batch_size=32)
    assert count_steps(c, 320) == 60
    assert idealized_steps(c, 320) == 60.0


def test_count_steps_rho_zero_is_full_budget():
    c = PruneConfig(method="dynamic", E=10, tau=2, T=2, rho=0.0, batch_size=32)
    assert count_steps(c, 321) == 10 * 11


@given(rho=st.lists(st.floats(0, 0.99), min_size=2, max_size=2), N=st.integers(1, 500),
       tau=st.integers(0, 5), bs=st.integers(1, 64))
def test_budget_non_increasing_in_rho(rho, N, tau, bs):
    lo, hi = sorted(rho)
    a = count_steps(PruneConfig(E=10, tau=tau, T=1, rho=lo, batch_size=bs), N)
    b = count_steps(PruneConfig(E=10, tau=tau, T=1, rho=hi, batch_size=bs), N)
    assert b <= a


# ------------------------------------------------------------------- config


@pytest.mark.parametrize("bad, match", [
    (dict(tau=7, E=6), "tau <= E"),
    (dict(rho=1.0), "rho"),
    (dict(T=5, E=6, tau=2), "no pruning cycles"),
    (dict(method="magic"), "method"),
    (dict(lam=1.0), "lam"),
])
def test_config_violations_are_named(bad, match):
    with pytest.raises(ConfigError, match=match):
        cfg(**bad).validate()


def test_empty_training_set_rejected(ds):
    with pytest.raises(ConfigError, match="empty"):
        run(cfg(method="full"), ds.subset([]))


# ------------------------------------------------------------------- regimes


def test_full_counts_and_determinism(ds):
    c = cfg(method="full")
    a, b = run(c, ds), run(c, ds)
    assert a.total_train_steps == c.E * n_batches(len(ds), c.batch_size)
    assert a.total_scoring_passes == 0
    assert a.book is None
    assert a.model.param_hash() == b.model.param_hash()


def test_dynamic_default_schedule(ds):
    c = cfg(method="dynamic", E=40, tau=4, T=4, rho=0.5, d_emb=4, d_hid=4)
    r = run(c, ds)
    assert len(r.retained_sets) == 9
    assert all(len(s) == len(ds) // 2 for s in r.retained_sets.values())
    assert r.total_scoring_passes == 9
    assert r.book.n_cycles == 9
    assert r.total_train_steps == count_steps(c, len(ds))
    epochs = {row["epoch"] for row in r.trace}
    assert epochs == set(range(40))


def test_dynamic_remainder_epochs(ds):
    c = cfg(method="dynamic", E=10, tau=1, T=2)
    r = run(c, ds)
    assert len(r.retained_sets) == 4
    assert max(row["epoch"] for row in r.trace) == 9
    # the ninth post-warm-up epoch reuses the last subset
    last = [row for row in r.trace if row["epoch"] == 9 and row["metric"] == "examples"]
    assert last[0]["value"] == len(r.retained_sets[3])
    assert r.total_train_steps == count_steps(c, len(ds))


@pytest.mark.parametrize("method", ["dynamic", "single"])
def test_rho_zero_matches_full_training(ds, method):
    full = run(cfg(method="full"), ds)
    pruned = run(cfg(method=method, rho=0.0), ds)
    assert pruned.model.param_hash() == full.model.param_hash()
    assert pruned.total_scoring_passes >= 1


def test_single_scores_once(ds):
    r = run(cfg(method="single", E=9), ds)
    assert r.total_scoring_passes == 1
    assert list(r.retained_sets) == [0]
    sizes = {row["value"] for row in r.trace if row["metric"] == "examples" and row["epoch"] >= 2}
    assert sizes == {float(retained_size(len(ds), 0.5))}


def test_dynamic_random_skips_forward_passes(ds):
    r = run(cfg(method="dynamic_random", E=8), ds)
    assert r.total_scoring_passes == 0
    assert r.forward_times == []
    assert len(r.retained_sets) == 3
    assert r.retained_sets[0] != r.retained_sets[1]


def test_static_collapses_to_single(ds):
    c = cfg(method="static", static_R=1, static_epochs=2, tau=2)
    single = run(cfg(method="single", tau=2), ds)
    static = run(c, ds)
    assert static.retained_sets == single.retained_sets


def test_static_uses_mean_over_models(ds):
    c = cfg(method="static", static_R=3, static_epochs=2)
    r = run_static(c, ds)
    assert len(r.static_scores) == 3
    manual = (r.static_scores[0].chi_nlu + r.static_scores[1].chi_nlu + r.static_scores[2].chi_nlu) / 3
    assert np.allclose(r.book.chi_nlu, manual, rtol=0, atol=1e-15)
    assert r.retained_sets[0] == select_subset(manual, c.rho).tolist()
    assert r.overhead_steps == 3 * 2 * n_batches(len(ds), c.batch_size)
    assert r.total_train_steps == count_steps(c, len(ds))


def test_static_scores_come_from_independent_models(ds):
    r = run_static(cfg(method="static", static_R=2, static_epochs=1), ds)
    assert not np.array_equal(r.static_scores[0].chi_nlu, r.static_scores[1].chi_nlu)


def test_scoring_passes_do_not_touch_parameters(ds):
    model = JointClassifier.for_dataset(ds, seed=0, scale=0.2)
    h = model.param_hash()
    score_dataset(model, ds)
    assert model.param_hash() == h


def test_supplied_model_is_trained_in_place(ds):
    model = JointClassifier.for_dataset(ds, d_emb=6, d_hid=8, seed=9)
    r = run_dynamic(cfg(method="dynamic"), ds, model)
    assert r.model is model


def test_trace_has_eval_metrics_when_given(ds):
    r = run(cfg(method="dynamic", E=4, T=1), ds, eval_set=ds.subset(range(20)))
    evals = [row for row in r.trace if row["split"] == "eval"]
    assert {row["metric"] for row in evals} == {
        "full_sequence_accuracy", "intent_accuracy", "slot_micro_f1"}
    assert set(r.final_metrics) == {"full_sequence_accuracy", "intent_accuracy", "slot_micro_f1"}


def test_on_step_hook_sees_every_step(ds):
    seen = []
    r = run_single(cfg(method="single"), ds, on_step=lambda tr: seen.append(tr.steps))
    assert len(seen) == r.total_train_steps
    assert len(r.step_times) == r.total_train_steps
