import numpy as np
import pytest

from ltcnf import network


def clipped_loss(model, x, y, dropout_seed):
    """Loss recomputed from scratch with the same dropout masks (same seed)."""
    probs, _ = network.forward(model, x, "train", np.random.default_rng(dropout_seed))
    p_true = np.clip((probs * y).sum(axis=1), 1e-7, 1 - 1e-7)
    return float(-np.log(p_true).mean())


# Central differences at h=1e-6 carry a few ulps of |L|/h (~2e-10 observed)
# of round-off, so entries smaller than 1e-5 are judged against that floor
# (1e-9 absolute at a 1e-4 tolerance) instead of their own magnitude.
GRADCHECK_FLOOR = 1e-5


def finite_difference_check(model, x, y, dropout_seed=5, h=1e-6, floor=GRADCHECK_FLOOR):
    """Max relative error |a - n| / max(|a|, |n|, floor) between BPTT and central differences."""
    _, trace = network.forward(model, x, "train", np.random.default_rng(dropout_seed))
    grads = network.backward(model, trace, y)
    worst = 0.0
    for name, arr in model.tensors().items():
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric = (clipped_loss(model.with_tensors({name: plus}), x, y, dropout_seed)
                       - clipped_loss(model.with_tensors({name: minus}), x, y, dropout_seed)) / (2 * h)
            analytic = grads[name][idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, rel)
    return worst


def small_net(kind="ltc", units=4, features=3, unfold_steps=2, dropout=0.25, layers=2, seed=0):
    spec = network.NetworkSpec.default(features, units=units, cell_kind=kind, dropout_rate=dropout,
                                       num_layers=layers, step_size=1.0, unfold_steps=unfold_steps)
    return network.init_model(spec, np.random.default_rng(seed))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "detail": []})
    if report.failed:
        entry["passed"] = False
    detail = dict(item.user_properties).get("measured")
    if report.when == "call" and detail:
        entry["detail"].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["passed"] else "FAIL"
        detail = "; ".join(entry["detail"])
        line = f"criterion {number:>2} {status}  {entry['title']}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
