import numpy as np
import pytest

from tradeslab.model import MlpSpec, Params, init_params
from tradeslab.rng import Rng


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def random_mlp(seed, d=None, k=None, depth=None, width=None):
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 7))
    k = k or int(rng.integers(2, 5))
    depth = depth or int(rng.integers(1, 4))
    hidden = [width or int(rng.integers(2, 17)) for _ in range(depth)]
    spec = MlpSpec(d, hidden, k)
    params = init_params(spec, Rng(seed))
    # non-zero biases so ReLU kinks sit away from the evaluation points
    arrays = params.snapshot()
    for name in arrays:
        if name.endswith(".bias"):
            arrays[name] = rng.normal(0, 0.3, arrays[name].shape)
    return Params(spec, arrays)


@pytest.fixture
def small_mlp():
    return random_mlp(0, d=4, k=3, depth=2, width=8)


def affine_mlp(W, c, shift=100.0):
    """One-hidden-layer MLP computing exactly x @ W + c for x > -shift.

    The hidden layer is the identity plus a large bias, so every ReLU stays
    active and the network is affine in x.
    """
    W = np.asarray(W, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d, k = W.shape
    spec = MlpSpec(d, [d], k)
    return Params(spec, {
        "fc0.weight": np.eye(d),
        "fc0.bias": np.full(d, shift),
        "fc1.weight": W,
        "fc1.bias": c - shift * W.sum(axis=0),
    })


def build_mlp(spec, **arrays):
    """Params for ``spec`` with the named arrays given and everything else zero."""
    full = {n: np.zeros(s) for n, s in spec.param_shapes()}
    full.update({k.replace("_", "."): np.asarray(v, dtype=np.float64) for k, v in arrays.items()})
    return Params(spec, full)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
