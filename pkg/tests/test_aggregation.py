import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flsim import params as pv
from flsim.aggregation import (ClientUpdate, ServerState, approximation_gap, compensate,
                               fedavg_aggregate, nag_update, phi, restore_gradients,
                               sample_clients, weighted_gradient)
from flsim.models import (Batch, ModelSpec, exact_hessian, gradient, init_params,
                          local_sgd_step, quadratic_1d)


def V(*xs):
    return pv.vector(xs)


def state(w, w_prev=None, v=None, eta=0.1, **kw):
    w = pv.vector(w)
    return ServerState(w=w, w_prev=w if w_prev is None else pv.vector(w_prev),
                       v=pv.zeros(w.size) if v is None else pv.vector(v), eta=eta, **kw)


# fedavg_aggregate / sample_clients

def test_fedavg_examples():
    assert fedavg_aggregate([ClientUpdate(0, V(1.5, -2), 1.0)]).tolist() == [1.5, -2]
    assert fedavg_aggregate([ClientUpdate(0, V(0), 0.5), ClientUpdate(1, V(4), 0.5)]).tolist() == [2]
    assert fedavg_aggregate([ClientUpdate(0, V(0), 0.25), ClientUpdate(1, V(4), 0.75)]).tolist() == [3]


def test_fedavg_renormalises_subsets():
    ups = [ClientUpdate(0, V(0), 0.1), ClientUpdate(1, V(4), 0.3)]
    assert fedavg_aggregate(ups)[0] == pytest.approx(3.0, rel=1e-15)


def test_fedavg_errors():
    with pytest.raises(ValueError):
        fedavg_aggregate([])
    with pytest.raises(pv.DimensionError):
        fedavg_aggregate([ClientUpdate(0, V(0), 0.5), ClientUpdate(1, V(0, 1), 0.5)])


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=10),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_fedavg_fixed_point(ps, w):
    w = pv.vector(w)
    ups = [ClientUpdate(k, w, p) for k, p in enumerate(ps)]
    assert np.array_equal(fedavg_aggregate(ups), w)


def test_sample_clients():
    assert sample_clients(10, 1.0, 0) == list(range(10))
    assert len(sample_clients(10, 0.05, 0)) == 1
    assert len(sample_clients(10, 0.3, 0)) == 3
    assert sample_clients(20, 0.25, 42) == sample_clients(20, 0.25, 42)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            sample_clients(10, bad, 0)


# restore / weighted gradient

def test_restore_examples():
    np.testing.assert_allclose(restore_gradients(V(1.0, 2.0), V(0.9, 1.8), 0.1), [1.0, 2.0],
                               rtol=1e-12)
    assert np.array_equal(restore_gradients(V(3, 4), V(3, 4), 0.5), np.zeros(2))
    with pytest.raises(ValueError):
        restore_gradients(V(1), V(1), 0.0)
    with pytest.raises(pv.DimensionError):
        restore_gradients(V(1), V(1, 2), 0.1)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40).map(np.array),
       st.floats(1e-4, 10))
def test_restore_homogeneity(ab, eta_c):
    half = len(ab) // 2
    a, b = pv.vector(ab[:half]), pv.vector(ab[half:2 * half])
    lhs = restore_gradients(a, b, 1.0)
    rhs = pv.scale(restore_gradients(a, b, eta_c), eta_c)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_restore_recovers_accumulated_local_gradients():
    rng = np.random.default_rng(3)
    spec = ModelSpec("logistic-regression", 4, 3)
    eta = 0.05
    w_global = init_params(spec, 1)
    for k in range(4):
        batches = [Batch(rng.normal(size=(6, 4)), rng.integers(0, 3, 6)) for _ in range(5)]
        w = w_global
        applied = np.zeros(spec.param_count)
        for b in batches:
            g = gradient(spec, w, b)
            applied += g
            w = local_sgd_step(spec, w, b, eta)
        np.testing.assert_allclose(restore_gradients(w_global, w, eta), applied,
                                   rtol=0, atol=1e-12)


def test_weighted_gradient_examples():
    g = V(1.5, -2.0)
    assert np.array_equal(weighted_gradient([(0.7, g)]), g)
    assert np.array_equal(weighted_gradient([(0.5, g), (0.5, pv.scale(g, -1))]), np.zeros(2))
    assert weighted_gradient([(0.5, V(2)), (0.5, V(4))]).tolist() == [3]
    with pytest.raises(ValueError):
        weighted_gradient([])


# compensation

def test_compensate_trivial_cases():
    g, w, wp = V(1, -2), V(0.5, 0.5), V(0.1, 0.9)
    assert np.array_equal(compensate(g, w, wp, 0.0), g)
    assert np.array_equal(compensate(g, w, w, 0.7), g)
    with pytest.raises(ValueError):
        compensate(g, w, wp, -1.0)
    with pytest.raises(pv.DimensionError):
        compensate(g, V(1), wp, 0.5)


def test_compensate_formula():
    g, w, wp = V(2.0, -1.0), V(1.0, 0.0), V(0.5, 1.0)
    # g + lam * g^2 * (w - wp)
    expected = [2.0 + 0.3 * 4.0 * 0.5, -1.0 + 0.3 * 1.0 * -1.0]
    np.testing.assert_allclose(compensate(g, w, wp, 0.3), expected, rtol=1e-15)


def test_compensate_exact_at_fisher_equals_hessian_point():
    spec, batch = quadratic_1d()
    w_prev, w = V(1.0), V(0.8)
    g_prev = gradient(spec, w_prev, batch)
    assert g_prev.tolist() == [1.0]
    # the certified point: squared gradient equals the true curvature
    H = exact_hessian(spec, w_prev, batch)
    assert H[0, 0] == g_prev[0] ** 2
    comp = compensate(g_prev, w, w_prev, 1.0)
    assert abs(comp[0] - gradient(spec, w, batch)[0]) <= 1e-12
    assert comp[0] == pytest.approx(0.8, abs=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30).map(np.array),
       st.floats(0.001, 5), st.floats(0, 3))
def test_compensate_homogeneity(arr, c, lam):
    n = len(arr) // 3
    g, w, wp = (pv.vector(arr[i * n:(i + 1) * n]) for i in range(3))
    lhs = compensate(pv.scale(g, c), w, wp, lam / c)
    rhs = pv.scale(compensate(g, w, wp, lam), c)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


# NAG

def test_nag_beta_zero_is_identity_momentum():
    s = state([0.0], v=[5.0], beta=0.0)
    assert nag_update(s, V(2.0), V(1.5)).tolist() == [2.0]


def test_nag_eq8_and_alg3_examples():
    s = state([0.0], v=[1.0], beta=0.5)
    assert nag_update(s, V(2.0), V(1.5)).tolist() == [2.75]
    s3 = state([0.0], v=[1.0], beta=0.5, nag_mode="alg3")
    assert nag_update(s3, V(2.0), V(1.5)).tolist() == [3.0]


def test_server_state_validation():
    with pytest.raises(ValueError):
        state([0.0], beta=1.0)
    with pytest.raises(ValueError):
        state([0.0], lam=-0.1)
    with pytest.raises(ValueError):
        state([0.0], eta=0.0)
    with pytest.raises(pv.DimensionError):
        ServerState(w=V(0, 0), w_prev=V(0), v=V(0, 0), eta=0.1)
    s0 = ServerState.initial(V(1, 2), 0.1)
    assert np.array_equal(s0.v, np.zeros(2)) and s0.round == 0


def test_client_update_validation():
    with pytest.raises(ValueError):
        ClientUpdate(0, V(1), 0.0)
    with pytest.raises(ValueError):
        ClientUpdate(0, V(1), 0.5, staleness=2)


# phi

def test_phi_fresh_single_client_passes_through_its_sgd_step():
    spec, batch = quadratic_1d()
    w = V(0.7)
    s = state(w, eta=0.1)
    client = local_sgd_step(spec, w, batch, 0.1)
    out = phi(s, [ClientUpdate(0, client, 1.0, staleness=0)])
    assert out.w[0] == pytest.approx(client[0], abs=1e-15)
    assert np.array_equal(out.w_prev, w) and out.round == 1


def delayed_fedavg_oracle(w_t, w_prev, uploads, ps):
    """FedAvg averaging replayed on the lagged inputs: apply to ``w_t`` the
    FedAvg displacement the clients produced starting from ``w_prev``."""
    ps = np.asarray(ps) / np.sum(ps)
    avg = sum(p * u for p, u in zip(ps, uploads))
    return w_t + (avg - w_prev)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 1000), clients=st.integers(1, 10), seed=st.integers(0, 2**32 - 1),
       eta=st.floats(1e-3, 1.0))
def test_phi_without_compensation_is_delayed_fedavg(n, clients, seed, eta):
    rng = np.random.default_rng(seed)
    w_prev = pv.vector(rng.normal(size=n))
    w_t = pv.vector(rng.normal(size=n))
    uploads = [pv.vector(w_prev + 0.1 * rng.normal(size=n)) for _ in range(clients)]
    ps = rng.uniform(0.05, 1.0, size=clients)
    s = state(w_t, w_prev, eta=eta)
    out = phi(s, [ClientUpdate(k, u, p) for k, (u, p) in enumerate(zip(uploads, ps))])
    oracle = delayed_fedavg_oracle(w_t, w_prev, uploads, ps)
    assert np.max(np.abs(out.w - oracle)) <= 1e-12 * max(1.0, np.max(np.abs(oracle)))


def test_phi_fresh_updates_equal_fedavg():
    rng = np.random.default_rng(0)
    w = pv.vector(rng.normal(size=20))
    ups = [ClientUpdate(k, pv.vector(w + rng.normal(size=20)), p, staleness=0)
           for k, p in enumerate([0.2, 0.5, 0.3])]
    out = phi(state(w, rng.normal(size=20), eta=0.05, lam=0.8), ups)
    np.testing.assert_allclose(out.w, fedavg_aggregate(ups), rtol=0, atol=1e-12)


def test_phi_rejects_mixed_staleness_and_empty():
    s = state([0.0])
    with pytest.raises(ValueError):
        phi(s, [])
    with pytest.raises(ValueError):
        phi(s, [ClientUpdate(0, V(1), 0.5, 0), ClientUpdate(1, V(1), 0.5, 1)])


def test_phi_state_bookkeeping():
    s = state([1.0, 2.0], [0.5, 0.5], eta=0.1, lam=0.2, beta=0.5)
    out = phi(s, [ClientUpdate(0, V(0.4, 0.3), 1.0)])
    assert np.array_equal(out.w_prev, s.w)
    assert out.round == s.round + 1
    g = np.array([1.0, 2.0])  # (w_prev - upload) / eta
    g_ah = g + 0.2 * g * g * np.array([0.5, 1.5])
    v = g_ah + 0.5 * (g_ah - g)
    np.testing.assert_allclose(out.v, v, rtol=1e-14)
    np.testing.assert_allclose(out.w, [1.0, 2.0] - 0.1 * v, rtol=1e-14)


def test_per_client_mode_matches_aggregate_for_one_client():
    up = [ClientUpdate(0, V(0.4, 0.3), 1.0)]
    a = phi(state([1.0, 2.0], [0.5, 0.5], lam=0.4), up)
    b = phi(state([1.0, 2.0], [0.5, 0.5], lam=0.4, compensation="per-client"), up)
    np.testing.assert_allclose(a.w, b.w, rtol=1e-15)


def test_per_client_mode_differs_when_nonlinear():
    ups = [ClientUpdate(0, V(0.0), 0.5), ClientUpdate(1, V(1.0), 0.5)]
    a = phi(state([2.0], [1.0], eta=1.0, lam=1.0), ups)
    b = phi(state([2.0], [1.0], eta=1.0, lam=1.0, compensation="per-client"), ups)
    # gradients 1 and 0: aggregate compensates 0.5 + 0.25, per-client 0.5 * (1 + 1) + 0
    assert a.w[0] == pytest.approx(2.0 - 0.75)
    assert b.w[0] == pytest.approx(2.0 - 1.0)


def quadratic_pipeline(w0, rounds, eta, lam):
    """The overlap pipeline on F = w^2/2 with one client and E = 1, driven
    through phi: the upload consumed at each round was trained from the
    previous global model."""
    spec, batch = quadratic_1d()
    s = ServerState.initial(V(w0), eta, lam=lam)
    upload = V(w0)
    traj = []
    for _ in range(rounds):
        trained = local_sgd_step(spec, s.w, batch, eta)  # from the model the client holds
        s = phi(s, [ClientUpdate(0, upload, 1.0)])
        upload = trained
        traj.append(s.w[0])
    return traj


def quadratic_recursion(w0, rounds, eta, lam):
    """Closed form of the same pipeline: the gradient of w^2/2 is w, so the
    restored stale gradient is w_{t-1} and its compensation adds
    lam * w_{t-1}^2 * (w_t - w_{t-1})."""
    traj = []
    w_pp = w_p = w = w0  # global two rounds back, one round back, current
    pending_from = None  # global the pending upload was trained from
    for _ in range(rounds):
        if pending_from is None:
            g = 0.0
        else:
            g = pending_from + lam * pending_from ** 2 * (w - w_p)
        pending_from = w
        w_pp, w_p, w = w_p, w, w - eta * g
        traj.append(w)
    return traj


@pytest.mark.parametrize("w0,eta,lam", [(1.0, 0.1, 1.0), (0.6, 0.3, 1.0), (2.0, 0.05, 0.5)])
def test_quadratic_pipeline_matches_closed_form(w0, eta, lam):
    got = quadratic_pipeline(w0, 40, eta, lam)
    want = quadratic_recursion(w0, 40, eta, lam)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


def test_compensated_step_equals_gradient_descent_at_certified_point():
    # w_prev = 1 is where g*g equals the curvature; the delayed update then
    # reproduces the synchronous step from w_t exactly.
    eta = 0.2
    w_prev, w_t = 1.0, 1.0 - eta * 1.0
    spec, batch = quadratic_1d()
    upload = local_sgd_step(spec, V(w_prev), batch, eta)
    out = phi(ServerState(w=V(w_t), w_prev=V(w_prev), v=V(0), eta=eta, lam=1.0),
              [ClientUpdate(0, upload, 1.0)])
    assert abs(out.w[0] - (w_t - eta * w_t)) <= 1e-12


# approximation gap

def test_gap_zero_without_displacement():
    spec = ModelSpec("logistic-regression", 3, 3)
    rng = np.random.default_rng(0)
    batch = Batch(rng.normal(size=(5, 3)), rng.integers(0, 3, 5))
    w = init_params(spec, 0)
    assert approximation_gap(spec, w, w, batch, 0.5) == 0.0


def test_gap_zero_at_certified_quadratic_point():
    spec, batch = quadratic_1d()
    assert approximation_gap(spec, V(0.8), V(1.0), batch, 1.0) <= 1e-12


def gap_after_step(seed, eta, lam=0.5):
    rng = np.random.default_rng(seed)
    spec = ModelSpec("logistic-regression", 3, 3)
    batch = Batch(rng.normal(size=(8, 3)), rng.integers(0, 3, 8))
    w_prev = pv.vector(rng.normal(size=spec.param_count))
    w = local_sgd_step(spec, w_prev, batch, eta)
    return approximation_gap(spec, w, w_prev, batch, lam)


def test_gap_shrinks_with_step_size():
    wins = sum(gap_after_step(s, 0.2) >= gap_after_step(s, 0.1) for s in range(50))
    assert wins >= 45


def test_gap_vanishes_as_eta_goes_to_zero():
    gaps = [gap_after_step(7, eta) for eta in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3 * gaps[0] * 10
