"""Server-side update rules: FedAvg averaging and the compensated
overlap update (gradient restoration, staleness compensation, Nesterov
momentum)."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import params as pv
from .models import Batch, ModelSpec, gradient

NAG_MODES = ("eq8", "alg3")
COMPENSATION_MODES = ("aggregate", "per-client")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    w: np.ndarray
    p: float
    staleness: int = 1

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"client {self.client_id}: weight {self.p} outside (0, 1]")
        if self.staleness not in (0, 1):
            raise ValueError(f"client {self.client_id}: staleness must be 0 or 1")


@dataclass(frozen=True)
class ServerState:
    w: np.ndarray
    w_prev: np.ndarray
    v: np.ndarray
    eta: float
    lam: float = 0.0
    beta: float = 0.0
    round: int = 0
    nag_mode: str = "eq8"
    compensation: str = "aggregate"

    def __post_init__(self):
        if not (self.w.shape == self.w_prev.shape == self.v.shape):
            raise pv.DimensionError("w, w_prev and v must share one length")
        if not self.eta > 0:
            raise ValueError("server learning rate must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.nag_mode not in NAG_MODES:
            raise ValueError(f"nag_mode must be one of {NAG_MODES}")
        if self.compensation not in COMPENSATION_MODES:
            raise ValueError(f"compensation must be one of {COMPENSATION_MODES}")

    @classmethod
    def initial(cls, w0, eta, **kw) -> "ServerState":
        w0 = pv.vector(w0)
        return cls(w=w0, w_prev=w0, v=pv.zeros(w0.size), eta=eta, **kw)


def _normalized(weights) -> list[float]:
    weights = [float(p) for p in weights]
    if not weights:
        raise ValueError("no client updates")
    total = math.fsum(weights)
    if not total > 0:
        raise ValueError("client weights must sum to a positive value")
    return [p / total for p in weights]


def fedavg_aggregate(updates) -> np.ndarray:
    """Weighted mean of uploaded weights, weights renormalised over ``updates``."""
    updates = list(updates)
    if not updates:
        raise ValueError("fedavg_aggregate: empty update list")
    weights = _normalized(u.p for u in updates)
    if all(np.array_equal(u.w, updates[0].w) for u in updates[1:]):
        return updates[0].w  # exact fixed point, no rounding from the weights
    return pv.weighted_sum(weights, [u.w for u in updates])


def sample_clients(n_clients: int, fraction: float, seed) -> list[int]:
    """Uniform subset of ``max(ceil(C * N), 1)`` client ids, sorted."""
    if not 0 < fraction <= 1:
        raise ValueError("client fraction C must lie in (0, 1]")
    if n_clients < 1:
        raise ValueError("need at least one client")
    # guard against C * N landing a hair above an integer
    m = max(math.ceil(fraction * n_clients - 1e-9), 1)
    if m >= n_clients:
        return list(range(n_clients))
    rng = np.random.default_rng(seed)
    return sorted(int(k) for k in rng.choice(n_clients, size=m, replace=False))


def restore_gradients(w_basis: np.ndarray, w_received: np.ndarray, eta: float) -> np.ndarray:
    """Accumulated local gradient a client applied since ``w_basis``."""
    if not eta > 0:
        raise ValueError("assumed client learning rate must be positive")
    return pv.scale(pv.sub(w_basis, w_received), 1.0 / eta)


def weighted_gradient(grads) -> np.ndarray:
    """Convex combination of ``(p_k, g_k)`` pairs."""
    grads = list(grads)
    if not grads:
        raise ValueError("weighted_gradient: empty list")
    weights = _normalized(p for p, _ in grads)
    return pv.weighted_sum(weights, [g for _, g in grads])


def compensate(grad: np.ndarray, w: np.ndarray, w_prev: np.ndarray, lam: float) -> np.ndarray:
    """First-order staleness correction with the diagonal gradient-outer-product
    Hessian estimate: ``g + lam * g * g * (w - w_prev)``."""
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    shift = pv.sub(w, w_prev)
    if lam == 0:
        pv.hadamard(grad, shift)  # length check only
        return grad
    return pv.axpy(lam, pv.hadamard(pv.hadamard(grad, grad), shift), grad)


def nag_update(state: ServerState, grad_comp: np.ndarray, grad_raw: np.ndarray) -> np.ndarray:
    """New momentum buffer.

    ``eq8``:  v' = beta v + g_ah + beta (g_ah - g)
    ``alg3``: v' = beta v + g_ah + (g_ah - g)
    """
    correction = pv.sub(grad_comp, grad_raw)
    c = state.beta if state.nag_mode == "eq8" else 1.0
    v = pv.axpy(state.beta, state.v, grad_comp)
    if c == 0:
        return v
    return pv.axpy(c, correction, v)


def phi(state: ServerState, updates, restore_eta: float | None = None) -> ServerState:
    """One compensated global update.

    Each upload is turned back into the gradient its client accumulated (the
    basis is ``w_prev`` for one-round-stale uploads, ``w`` for fresh ones),
    the weighted gradient is pushed toward the current weights with
    :func:`compensate`, folded into the Nesterov buffer, and applied with the
    server rate.  ``restore_eta`` is the rate the clients trained with; it
    defaults to the server rate.
    """
    updates = list(updates)
    if not updates:
        raise ValueError("phi: no client updates")
    stale = {u.staleness for u in updates}
    if len(stale) != 1:
        raise ValueError("phi: updates mix stale and fresh uploads")
    basis = state.w_prev if stale.pop() == 1 else state.w
    eta_c = state.eta if restore_eta is None else restore_eta

    weights = _normalized(u.p for u in updates)
    raw = [restore_gradients(basis, u.w, eta_c) for u in updates]
    grad_raw = pv.weighted_sum(weights, raw)
    if state.compensation == "per-client":
        grad_comp = pv.weighted_sum(
            weights, [compensate(g, state.w, basis, state.lam) for g in raw])
    else:
        grad_comp = compensate(grad_raw, state.w, basis, state.lam)

    v = nag_update(state, grad_comp, grad_raw)
    w_next = pv.axpy(-state.eta, v, state.w)
    return replace(state, w=w_next, w_prev=state.w, v=v, round=state.round + 1)


def approximation_gap(spec: ModelSpec, w: np.ndarray, w_prev: np.ndarray,
                      batch: Batch, lam: float) -> float:
    """Distance between the true gradient at ``w`` and the compensated
    gradient carried over from ``w_prev``."""
    stale = gradient(spec, w_prev, batch)
    return pv.l2_norm(pv.sub(gradient(spec, w, batch), compensate(stale, w, w_prev, lam)))
