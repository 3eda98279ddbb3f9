import numpy as np
import pytest

from nvcodec.field_net import NetworkArch, Parameters, forward, init_params


def richardson_gradient(fn, x, h=1e-3):
    """Central differences at ``h`` and ``h/2`` combined to cancel the h^2 error term."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.size)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = 1.0
        d1 = (fn(x + h * e) - fn(x - h * e)) / (2 * h)
        d2 = (fn(x + 0.5 * h * e) - fn(x - 0.5 * h * e)) / h
        out[j] = (4 * d2 - d1) / 3
    return out


def hand_params(d=3, **values) -> Parameters:
    """k=1, single-block network with explicitly chosen scalars."""
    v = dict(w=[0.2, -0.1, 0.3, 0.05][:d], b0=0.1, m1=0.7, b1=-0.2, m2=1.3, b2=0.4, wl=0.9, bl=-0.05)
    v.update(values)
    f64 = np.float64
    return Parameters(
        W_first=np.array([v["w"]], f64), b_first=np.array([v["b0"]], f64),
        M1=np.array([[[v["m1"]]]], f64), b1=np.array([[v["b1"]]], f64),
        M2=np.array([[[v["m2"]]]], f64), b2=np.array([[v["b2"]]], f64),
        W_last=np.array([[v["wl"]]], f64), b_last=np.array([v["bl"]], f64),
    )


@pytest.fixture
def small_random_net():
    def make(seed, d=3, k=None, n_blocks=None):
        rng = np.random.default_rng(seed)
        k = k or int(rng.integers(1, 5))
        n_blocks = n_blocks or int(rng.integers(1, 3))
        return init_params(NetworkArch(d, k, n_blocks), seed).astype(np.float64)
    return make


@pytest.fixture
def scalar_fn():
    def make(params, omega0=30.0):
        return lambda x: forward(params, x, omega0)
    return make
