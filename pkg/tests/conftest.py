import numpy as np
import pytest

from deepmedix import rng
from deepmedix.architecture import BackboneSpec, build_variant


class ScalarQuadratic:
    """Per-sample loss ``(w - target_i)^2`` on a single parameter ``w``."""

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=np.float64)
        self.labels = np.zeros(len(self.targets), dtype=np.int64)

    @property
    def num_samples(self):
        return len(self.targets)

    def loss_and_grad(self, params, indices, training=True, key=0):
        w = params["w"]
        t = self.targets[np.asarray(indices)]
        loss = float(np.mean((w - t) ** 2))
        grad = np.asarray(np.mean(2.0 * (w - t)), dtype=w.dtype).reshape(w.shape)
        return loss, {"w": grad}, {}


class LinearSoftmaxObjective:
    """Multinomial logistic regression: no dropout, no batch-norm, fully deterministic."""

    def __init__(self, x, y, k):
        self.x, self.labels, self.k = x, np.asarray(y), k

    @property
    def num_samples(self):
        return len(self.labels)

    def loss_and_grad(self, params, indices, training=True, key=0):
        idx = np.asarray(indices)
        x, y = self.x[idx], self.labels[idx]
        logits = x @ params["W"] + params["b"]
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        onehot = np.eye(self.k)[y]
        loss = float(-np.mean(np.log(p[np.arange(len(y)), y])))
        g = (p - onehot) / len(y)
        return loss, {"W": x.T @ g, "b": g.sum(axis=0)}, {}


@pytest.fixture
def quadratic():
    return ScalarQuadratic


@pytest.fixture
def linear_problem():
    x = rng.normal(11, (40, 5))
    w_true = rng.normal(12, (5, 3))
    y = (x @ w_true).argmax(axis=1)
    params = {"W": np.zeros((5, 3)), "b": np.zeros(3)}
    return LinearSoftmaxObjective(x, y, 3), params


@pytest.fixture(scope="session")
def tiny_model():
    """DeepMediX at 8x8x3 input, width 0.25, two classes."""
    return build_variant("DeepMediX", BackboneSpec(0.25, (8, 8, 3)), 2)


# ---- acceptance report -----------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, title)`` are grouped by criterion and
# summarized as one PASS/FAIL line each at the end of the session. A test can
# attach a measured value with ``record_property("detail", text)``.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    setup_error = call.when == "setup" and call.excinfo is not None
    if marker is None or (call.when != "call" and not setup_error):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "details": []})
    if call.excinfo is not None:
        entry["passed"] = False
    for name, value in item.user_properties:
        if name == "detail":
            entry["details"].append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        detail = "; ".join(e["details"])
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status}  {e['title']}" + (f"  [{detail}]" if detail else ""))
