"""Tiny differentiable models with hand-derived gradients.

Three model kinds are supported:

* ``linear-regression``: ``z = W x + b`` with the half squared error
  ``0.5 * ||z - y||^2`` averaged over samples.
* ``logistic-regression``: multinomial, ``z = W x + b`` with softmax
  cross-entropy.
* ``mlp-1hidden``: ``z = W2 tanh(W1 x + b1) + b2`` with either loss.

Parameters are packed into one flat vector, row-major, weights before bias,
layer by layer.  ``exact_hessian`` uses complex-step differentiation of the
analytic gradient, which is exact to rounding and independent of the
central-difference oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import params as pv

KINDS = ("linear-regression", "logistic-regression", "mlp-1hidden")
LOSSES = ("mse", "cross-entropy")
MAX_HESSIAN_PARAMS = 64

_DEFAULT_LOSS = {
    "linear-regression": "mse",
    "logistic-regression": "cross-entropy",
    "mlp-1hidden": "cross-entropy",
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    loss: str | None = None
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if self.kind == "mlp-1hidden" and self.hidden_dim < 1:
            raise ValueError("mlp-1hidden needs hidden_dim >= 1")
        if self.loss is None:
            object.__setattr__(self, "loss", _DEFAULT_LOSS[self.kind])
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.kind == "linear-regression" and self.loss != "mse":
            raise ValueError("linear-regression uses the mse loss")
        if self.kind == "logistic-regression" and self.loss != "cross-entropy":
            raise ValueError("logistic-regression uses the cross-entropy loss")

    @property
    def classification(self) -> bool:
        return self.loss == "cross-entropy"

    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.kind == "mlp-1hidden":
            return [(self.hidden_dim, self.input_dim), (self.output_dim, self.hidden_dim)]
        return [(self.output_dim, self.input_dim)]

    @property
    def param_count(self) -> int:
        return sum(o * i + (o if self.bias else 0) for o, i in self.layer_shapes())


def param_count(spec: ModelSpec) -> int:
    return spec.param_count


@dataclass(frozen=True)
class Batch:
    """Rows of ``inputs`` paired with class indices (cross-entropy) or real
    target rows (mse)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise pv.DimensionError("batch inputs must be a non-empty matrix")
        y = np.asarray(self.targets)
        if y.shape[0] != x.shape[0]:
            raise pv.DimensionError("inputs and targets differ in row count")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _check(spec: ModelSpec, w: np.ndarray, batch: Batch) -> None:
    if w.ndim != 1 or w.shape[0] != spec.param_count:
        raise pv.DimensionError(
            f"expected {spec.param_count} parameters, got {w.shape}")
    if batch.inputs.shape[1] != spec.input_dim:
        raise pv.DimensionError(
            f"batch has {batch.inputs.shape[1]} features, model expects {spec.input_dim}")
    y = batch.targets
    if spec.classification:
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
            raise pv.DimensionError("cross-entropy targets must be a vector of class indices")
        if y.size and (y.min() < 0 or y.max() >= spec.output_dim):
            raise pv.DimensionError("class index out of range")
    elif y.ndim != 2 or y.shape[1] != spec.output_dim:
        raise pv.DimensionError("mse targets must be an (n, output_dim) matrix")


def unpack(spec: ModelSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Split a flat vector into per-layer ``(W, b)`` views."""
    layers = []
    i = 0
    for o, n in spec.layer_shapes():
        W = w[i:i + o * n].reshape(o, n)
        i += o * n
        b = None
        if spec.bias:
            b = w[i:i + o]
            i += o
        layers.append((W, b))
    return layers


def _affine(x, W, b):
    z = x @ W.T
    return z if b is None else z + b


def _forward(spec: ModelSpec, w: np.ndarray, x: np.ndarray):
    layers = unpack(spec, w)
    if spec.kind == "mlp-1hidden":
        (W1, b1), (W2, b2) = layers
        h = np.tanh(_affine(x, W1, b1))
        return _affine(h, W2, b2), h
    W, b = layers[0]
    return _affine(x, W, b), None


def _softmax(z):
    # shift by the real part only, so the complex step passes through
    e = np.exp(z - z.real.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _output_grad(spec: ModelSpec, z, y):
    """d(mean loss)/dz."""
    n = z.shape[0]
    if spec.classification:
        p = _softmax(z)
        p[np.arange(n), y] -= 1.0
        return p / n
    return (z - y) / n


def loss(spec: ModelSpec, w: np.ndarray, batch: Batch) -> float:
    """Mean per-sample loss of ``w`` on ``batch``."""
    _check(spec, w, batch)
    z, _ = _forward(spec, w, batch.inputs)
    if spec.classification:
        m = z.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
        per = lse - z[np.arange(len(batch)), batch.targets]
    else:
        per = 0.5 * np.sum((z - batch.targets) ** 2, axis=1)
    value = float(np.mean(per))
    if not np.isfinite(value):
        raise pv.NonFiniteError("loss is not finite")
    return max(value, 0.0)


def _raw_gradient(spec: ModelSpec, w: np.ndarray, batch: Batch) -> np.ndarray:
    x = batch.inputs
    z, h = _forward(spec, w, x)
    gz = _output_grad(spec, z, batch.targets)
    parts = []
    if spec.kind == "mlp-1hidden":
        (_, _), (W2, _) = unpack(spec, w)
        ga = (gz @ W2) * (1.0 - h * h)
        parts += [(ga.T @ x).ravel()]
        if spec.bias:
            parts.append(ga.sum(axis=0))
        parts.append((gz.T @ h).ravel())
    else:
        parts.append((gz.T @ x).ravel())
    if spec.bias:
        parts.append(gz.sum(axis=0))
    return np.concatenate(parts)


def gradient(spec: ModelSpec, w: np.ndarray, batch: Batch) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to ``w``."""
    _check(spec, w, batch)
    g = _raw_gradient(spec, np.asarray(w, dtype=np.float64), batch)
    return pv.vector(g)


def finite_diff_gradient(spec: ModelSpec, w: np.ndarray, batch: Batch,
                         rel_step: float = 1e-6) -> np.ndarray:
    """Central differences, step ``rel_step * (1 + |w_i|)`` per coordinate."""
    if not rel_step > 0:
        raise ValueError("finite-difference step must be positive")
    w = np.array(w, dtype=np.float64)
    g = np.empty_like(w)
    for i in range(w.size):
        h = rel_step * (1.0 + abs(w[i]))
        wi = w[i]
        w[i] = wi + h
        fp = loss(spec, w, batch)
        w[i] = wi - h
        fm = loss(spec, w, batch)
        w[i] = wi
        g[i] = (fp - fm) / (2.0 * h)
    return pv.vector(g)


def exact_hessian(spec: ModelSpec, w: np.ndarray, batch: Batch) -> np.ndarray:
    """Hessian of the mean loss by complex-step differentiation of the gradient."""
    n = spec.param_count
    if n > MAX_HESSIAN_PARAMS:
        raise ValueError(
            f"exact_hessian is limited to {MAX_HESSIAN_PARAMS} parameters, model has {n}")
    _check(spec, w, batch)
    step = 1e-30
    H = np.empty((n, n))
    base = np.asarray(w, dtype=np.complex128)
    for j in range(n):
        wc = base.copy()
        wc[j] += 1j * step
        H[:, j] = _raw_gradient(spec, wc, batch).imag / step
    return H


def local_sgd_step(spec: ModelSpec, w: np.ndarray, batch: Batch, eta: float) -> np.ndarray:
    if not eta >= 0:
        raise ValueError("learning rate must be non-negative")
    return pv.axpy(-eta, gradient(spec, w, batch), w)


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for o, i in spec.layer_shapes():
        r = np.sqrt(6.0 / (i + o))
        parts.append(rng.uniform(-r, r, size=o * i))
        if spec.bias:
            parts.append(np.zeros(o))
    return pv.vector(np.concatenate(parts))


def top_eigenvalue(matrix: np.ndarray, iters: int = 500, seed: int = 0) -> float:
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=matrix.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = matrix @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        lam = float(v @ u)
        v = u / nu
    return lam


def quadratic_1d() -> tuple[ModelSpec, Batch]:
    """``F(w) = w^2 / 2`` as a one-weight linear regression."""
    spec = ModelSpec("linear-regression", 1, 1, bias=False)
    return spec, Batch(np.ones((1, 1)), np.zeros((1, 1)))


def accuracy(spec: ModelSpec, w: np.ndarray, batch: Batch) -> float:
    _check(spec, w, batch)
    z, _ = _forward(spec, w, batch.inputs)
    return float(np.mean(np.argmax(z, axis=1) == batch.targets))
