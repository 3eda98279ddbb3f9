"""Sinusoidal residual MLP mapping d-dimensional coordinates to a scalar.

Topology::

    a_0     = sin(omega0 * (W_first x + b_first))
    a_{i+1} = (a_i + sin(M2_i sin(M1_i a_i + b1_i) + b2_i)) / 2
    f(x)    = W_last a_n + b_last

Every hidden activation stays in ``[-1, 1]``: each block averages two
vectors that already do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import BudgetError

DEFAULT_BLOCKS = 8
DEFAULT_OMEGA0 = 30.0


@dataclass(frozen=True)
class NetworkArch:
    d: int
    k: int
    n_blocks: int = DEFAULT_BLOCKS
    omega0: float = DEFAULT_OMEGA0

    def __post_init__(self):
        if self.d not in (3, 4):
            raise ValueError(f"input dimension must be 3 or 4, got {self.d}")
        if self.k < 1:
            raise ValueError(f"hidden width must be >= 1, got {self.k}")
        if self.n_blocks < 1:
            raise ValueError(f"need at least one residual block, got {self.n_blocks}")
        if not (math.isfinite(self.omega0) and self.omega0 > 0):
            raise ValueError(f"omega0 must be positive and finite, got {self.omega0}")
        # the file stores omega0 as float32; round now so training and decoding agree
        object.__setattr__(self, "omega0", float(np.float32(self.omega0)))


@dataclass
class Parameters:
    """All weights of one network.

    Block matrices are stacked: ``M1[i]`` is the first ``k x k`` matrix of
    block ``i``.  ``W_last`` is ``1 x k`` and ``b_last`` has shape ``(1,)``.
    """

    W_first: np.ndarray
    b_first: np.ndarray
    M1: np.ndarray
    b1: np.ndarray
    M2: np.ndarray
    b2: np.ndarray
    W_last: np.ndarray
    b_last: np.ndarray

    @property
    def arch_shape(self):
        k, d = self.W_first.shape
        return d, k, self.M1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def map(self, fn, *others: "Parameters") -> "Parameters":
        """Apply ``fn`` tensor-wise across this and ``others``."""
        return Parameters(*[fn(*ts) for ts in zip(self.arrays(), *(o.arrays() for o in others))])

    def astype(self, dtype) -> "Parameters":
        return self.map(lambda a: np.asarray(a, dtype=dtype).copy())

    def zeros_like(self) -> "Parameters":
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, Parameters):
            return NotImplemented
        return all(
            a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)
            for a, b in zip(self.arrays(), other.arrays())
        )


def param_count(arch: NetworkArch) -> int:
    d, k, n = arch.d, arch.k, arch.n_blocks
    return k * d + k + n * (2 * k * k + 2 * k) + k + 1


def derive_layer_width(m: int, d: int, n_blocks: int = DEFAULT_BLOCKS) -> int:
    """Largest hidden width whose network has at most ``m`` parameters."""
    floor = param_count(NetworkArch(d, 1, n_blocks))
    if m < floor:
        raise BudgetError(f"budget of {m} weights is below the minimum {floor} for d={d}, "
                          f"{n_blocks} blocks")
    # 2n k^2 + (d + 2n + 2) k + 1 - m <= 0
    a, b, c = 2 * n_blocks, d + 2 * n_blocks + 2, 1 - m
    k = max(1, int((-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)))
    while param_count(NetworkArch(d, k + 1, n_blocks)) <= m:
        k += 1
    while k > 1 and param_count(NetworkArch(d, k, n_blocks)) > m:
        k -= 1
    return k


def init_params(arch: NetworkArch, rng_seed=0) -> Parameters:
    """SIREN initialisation; the first layer's frequency scale lives in the forward pass."""
    rng = np.random.default_rng(rng_seed)
    d, k, n = arch.d, arch.k, arch.n_blocks
    hidden = math.sqrt(6.0 / k)

    def u(bound, shape):
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    return Parameters(
        W_first=u(1.0 / d, (k, d)),
        b_first=u(1.0 / math.sqrt(d), (k,)),
        M1=u(hidden, (n, k, k)),
        b1=u(1.0 / math.sqrt(k), (n, k)),
        M2=u(hidden, (n, k, k)),
        b2=u(1.0 / math.sqrt(k), (n, k)),
        W_last=u(hidden, (1, k)),
        b_last=u(1.0 / math.sqrt(k), (1,)),
    )


def _rowdot(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``a @ w.T`` accumulated column by column in a fixed order.

    BLAS kernels pick different summation orders for different batch
    sizes; this keeps each output row independent of the rest of the batch.
    """
    out = a[:, 0:1] * w[:, 0]
    for c in range(1, a.shape[1]):
        out += a[:, c:c + 1] * w[:, c]
    return out


def _as_points(params: Parameters, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != params.W_first.shape[1]:
        raise ValueError(f"expected an N x {params.W_first.shape[1]} array, got {xs.shape}")
    return xs


def forward_batch(params: Parameters, xs, omega0: float = DEFAULT_OMEGA0) -> np.ndarray:
    """Evaluate the network at each row of ``xs``; float64 result of length N."""
    xs = _as_points(params, xs)
    p = params.astype(np.float64)
    a = np.sin(omega0 * (_rowdot(xs, p.W_first) + p.b_first))
    for i in range(p.M1.shape[0]):
        h = np.sin(_rowdot(a, p.M1[i]) + p.b1[i])
        a = 0.5 * (a + np.sin(_rowdot(h, p.M2[i]) + p.b2[i]))
    return _rowdot(a, p.W_last)[:, 0] + p.b_last[0]


def forward(params: Parameters, x, omega0: float = DEFAULT_OMEGA0) -> float:
    return float(forward_batch(params, np.asarray(x, dtype=np.float64)[None, :], omega0)[0])


def hidden_activations(params: Parameters, xs, omega0: float = DEFAULT_OMEGA0) -> list[np.ndarray]:
    """Activations ``a_0 .. a_n`` for each point, for inspection and tests."""
    xs = _as_points(params, xs)
    p = params.astype(np.float64)
    acts = [np.sin(omega0 * (xs @ p.W_first.T + p.b_first))]
    for i in range(p.M1.shape[0]):
        a = acts[-1]
        h = np.sin(a @ p.M1[i].T + p.b1[i])
        acts.append(0.5 * (a + np.sin(h @ p.M2[i].T + p.b2[i])))
    return acts


class Trace:
    """Intermediate values of one batched forward pass, kept for backprop.

    With ``tangents`` the pass also carries the derivative of every hidden
    vector with respect to each input coordinate (forward mode), giving the
    input gradient ``grad`` of shape ``N x d``.
    """

    def __init__(self, params: Parameters, xs: np.ndarray, omega0: float, tangents: bool):
        p = params
        self.params, self.xs, self.omega0, self.tangents = p, xs, omega0, tangents
        z = omega0 * (xs @ p.W_first.T + p.b_first)
        self.s0, self.c0 = np.sin(z), np.cos(z)
        a = self.s0
        # da/dx_j, laid out N x d x k
        da = omega0 * self.c0[:, None, :] * p.W_first.T[None, :, :] if tangents else None
        self.a, self.da = [a], [da]
        self.u_sin, self.u_cos, self.v_sin, self.v_cos = [], [], [], []
        self.dh = []
        for i in range(p.M1.shape[0]):
            u = a @ p.M1[i].T + p.b1[i]
            su, cu = np.sin(u), np.cos(u)
            v = su @ p.M2[i].T + p.b2[i]
            sv, cv = np.sin(v), np.cos(v)
            self.u_sin.append(su)
            self.u_cos.append(cu)
            self.v_sin.append(sv)
            self.v_cos.append(cv)
            a = 0.5 * (a + sv)
            if tangents:
                dh = cu[:, None, :] * (da @ p.M1[i].T)
                dv = dh @ p.M2[i].T
                self.dh.append(dh)
                da = 0.5 * (da + cv[:, None, :] * dv)
            self.a.append(a)
            self.da.append(da)
        self.out = a @ p.W_last[0] + p.b_last[0]
        self.grad = da @ p.W_last[0] if tangents else None

    def backward(self, d_out: np.ndarray, d_grad: np.ndarray | None = None) -> Parameters:
        """Pull back cotangents of ``out`` (N,) and ``grad`` (N x d) onto the weights."""
        p = self.params
        use_t = d_grad is not None
        if use_t and not self.tangents:
            raise ValueError("trace was recorded without tangents")
        g = p.zeros_like()
        w_last = p.W_last[0]
        a_n = self.a[-1]
        g.W_last[0] = d_out @ a_n
        g.b_last[0] = d_out.sum()
        ga = d_out[:, None] * w_last
        gda = None
        if use_t:
            g.W_last[0] += np.einsum("nj,njk->k", d_grad, self.da[-1])
            gda = d_grad[:, :, None] * w_last
        for i in reversed(range(p.M1.shape[0])):
            a, da = self.a[i], self.da[i]
            su, cu, sv, cv = self.u_sin[i], self.u_cos[i], self.v_sin[i], self.v_cos[i]
            # a' = (a + sv) / 2
            gv = 0.5 * cv * ga
            ga = 0.5 * ga
            if use_t:
                # da' = (da + cv * dv) / 2 with dv = dh M2^T, dh = cu * (da M1^T)
                dh = self.dh[i]
                dv = dh @ p.M2[i].T
                gdv = 0.5 * cv[:, None, :] * gda
                gv -= 0.5 * sv * np.einsum("njk,njk->nk", dv, gda)
                gda = 0.5 * gda
                g.M2[i] += np.einsum("njr,njc->rc", gdv, dh)
                gdh = gdv @ p.M2[i]
                du_lin = da @ p.M1[i].T
                gdu_lin = cu[:, None, :] * gdh
            g.M2[i] += gv.T @ su
            g.b2[i] = gv.sum(axis=0)
            gu = cu * (gv @ p.M2[i])
            if use_t:
                gu -= su * np.einsum("njk,njk->nk", du_lin, gdh)
                g.M1[i] += np.einsum("njr,njc->rc", gdu_lin, da)
                gda = gda + gdu_lin @ p.M1[i]
            g.M1[i] += gu.T @ a
            g.b1[i] = gu.sum(axis=0)
            ga = ga + gu @ p.M1[i]
        w = self.omega0
        gz = w * self.c0 * ga
        if use_t:
            # da_0[:, j] = w * c0 * W_first[:, j]
            g.W_first += w * np.einsum("njk,nk->kj", gda, self.c0)
            gz -= w * w * self.s0 * np.einsum("njk,kj->nk", gda, p.W_first)
        g.W_first += gz.T @ self.xs
        g.b_first = gz.sum(axis=0)
        return g


def input_gradient_batch(params: Parameters, xs, omega0: float = DEFAULT_OMEGA0) -> np.ndarray:
    """Exact ``df/dx`` at each row of ``xs``, ``N x d``."""
    xs = _as_points(params, xs)
    return Trace(params.astype(np.float64), xs, omega0, tangents=True).grad


def input_gradient(params: Parameters, x, omega0: float = DEFAULT_OMEGA0) -> np.ndarray:
    return input_gradient_batch(params, np.asarray(x, dtype=np.float64)[None, :], omega0)[0]
