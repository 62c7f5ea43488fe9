import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prunekit.data import Dataset, SyntheticSpec, generate_synthetic
from prunekit.model import JointClassifier

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_ds() -> Dataset:
    return generate_synthetic(SyntheticSpec(n_examples=120, vocab_size=200, seed=11))


@pytest.fixture
def tiny_model(small_ds) -> JointClassifier:
    return JointClassifier.for_dataset(small_ds, d_emb=8, d_hid=16, seed=3, scale=0.3)


def random_instance(seed: int, n=3, M=6, V=20, K_int=4, K_slot=5, d_emb=8, d_hid=16):
    """Random model + dataset with variable lengths, for gradient and identity checks."""
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, M + 1, size=n)
    mask = np.arange(M)[None, :] < lengths[:, None]
    tokens = np.where(mask, rng.integers(1, V, size=(n, M)), 0)
    slots = np.where(mask, rng.integers(0, K_slot, size=(n, M)), 0)
    ds = Dataset(
        tokens=tokens, intents=rng.integers(0, K_int, size=n), slots=slots, mask=mask,
        n_intents=K_int, n_slots=K_slot, vocab_size=V,
    )
    model = JointClassifier.init(V, K_int, K_slot, d_emb=d_emb, d_hid=d_hid, seed=seed, scale=0.5)
    for name in ("mlp_b", "intent_b", "slot_b"):
        model.params[name] = rng.normal(0, 0.3, model.params[name].shape)
    return model, ds


def numeric_grad(model, batch, name, lam=0.5, h=1e-5):
    """Central finite-difference gradient of the batch loss w.r.t. one parameter."""
    from prunekit.model import forward, loss

    p = model.params[name]
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        up = loss(forward(model, batch), batch, lam)
        p[i] = old - h
        down = loss(forward(model, batch), batch, lam)
        p[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


# ------------------------------------------------- acceptance criterion report

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if report.passed else "FAIL"
    _CRITERIA[marker.args[0]] = (status, marker.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, name, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {name}  {detail}")
