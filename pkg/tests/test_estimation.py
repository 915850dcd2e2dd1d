import numpy as np
import pytest

from fedgraph_fdia import estimation
from fedgraph_fdia.estimation import (
    EstimationError,
    EstimatorConfig,
    MeasurementLayout,
    SystemState,
    bad_data_test,
    chi2_threshold,
    craft_stealthy_attack,
    jacobian,
    measurement_function,
    residual_norm,
    wlse_estimate,
)
from fedgraph_fdia.grid import parse_case_text

DC_TWO_BUS = """\
CASE dc 2
BUS 1 0 0 0 0
BUS 2 10 0 0 0
BRANCH 1 2 0.0 -10.0
"""


def random_state(n, rng, spread=0.05):
    theta = rng.normal(0, spread, n)
    theta[0] = 0.0
    return SystemState(rng.uniform(0.95, 1.05, n), theta)


def split(h, grid):
    n, m = grid.n_buses, len(grid.edges)
    return h[:n], h[n:2 * n], h[2 * n:2 * n + m], h[2 * n + m:]


# ---------------------------------------------------------------- measurement model


def test_layout_is_bijection(ieee57):
    lay = MeasurementLayout.for_grid(ieee57)
    entries = lay.entries()
    assert len(entries) == lay.size == 2 * 57 + 2 * len(ieee57.edges)
    assert len(set(entries)) == len(entries)


def test_flat_two_bus_flows_cancel(two_bus):
    _, _, Pf, Qf = split(measurement_function(SystemState.flat(2), two_bus), two_bus)
    np.testing.assert_allclose(Pf, 0.0, atol=1e-15)
    np.testing.assert_allclose(Qf, 0.0, atol=1e-15)


def test_flat_zero_shunt_reactive_flows(triangle):
    h = measurement_function(SystemState.flat(3), triangle)
    P, Q, Pf, Qf = split(h, triangle)
    np.testing.assert_allclose(Qf, 0.0, atol=1e-14)
    np.testing.assert_allclose(P, 0.0, atol=1e-14)


def _branch_flow(Vi, Vj, y):
    # power leaving i through series admittance y
    return Vi * np.conj(y * (Vi - Vj))


def test_flow_balance(three_bus, rng):
    # independent oracle: injection = outgoing series flows + shunt consumption
    for _ in range(5):
        x = random_state(3, rng, 0.1)
        V = x.V * np.exp(1j * x.theta)
        P, Q, Pf, Qf = split(measurement_function(x, three_bus), three_bus)
        S = np.zeros(3, dtype=complex)
        for k, e in enumerate(three_bus.edges):
            y = complex(e.g, e.b)
            S[e.from_bus] += _branch_flow(V[e.from_bus], V[e.to_bus], y)
            S[e.to_bus] += _branch_flow(V[e.to_bus], V[e.from_bus], y)
            s_f = _branch_flow(V[e.from_bus], V[e.to_bus], y)
            assert Pf[k] == pytest.approx(s_f.real, abs=1e-12)
            assert Qf[k] == pytest.approx(s_f.imag, abs=1e-12)
        for bus in three_bus.buses:
            S[bus.id] += abs(V[bus.id]) ** 2 * complex(bus.shunt_g, -bus.shunt_b)
        np.testing.assert_allclose(P, S.real, atol=1e-12)
        np.testing.assert_allclose(Q, S.imag, atol=1e-12)


def test_measurement_function_pure(three_bus, rng):
    x = random_state(3, rng)
    V0 = x.V.copy()
    a = measurement_function(x, three_bus)
    b = measurement_function(x, three_bus)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(x.V, V0)


def test_measurement_dimension_check(three_bus):
    with pytest.raises(ValueError):
        measurement_function(SystemState.flat(4), three_bus)


def test_state_invariants():
    with pytest.raises(ValueError):
        SystemState(np.array([1.0, -0.1]), np.zeros(2))
    with pytest.raises(ValueError):
        SystemState(np.ones(2), np.zeros(3))


@pytest.mark.parametrize("case", ["triangle", "three_bus", "ieee57"])
def test_jacobian_matches_finite_differences(case, request, rng):
    grid = request.getfixturevalue(case)
    n = grid.n_buses
    for _ in range(3):
        x = random_state(n, rng, 0.1)
        J = jacobian(x, grid)
        vec = np.concatenate([x.theta[1:], x.V])
        fd = np.empty_like(J)
        h = 1e-6
        for k in range(vec.size):
            e = np.zeros_like(vec)
            e[k] = h
            up = estimation._unpack(vec + e, n)
            dn = estimation._unpack(vec - e, n)
            fd[:, k] = (measurement_function(up, grid) - measurement_function(dn, grid)) / (2 * h)
        scale = np.maximum(np.abs(J), 1.0)
        assert np.max(np.abs(J - fd) / scale) < 1e-5


# ---------------------------------------------------------------- WLSE


@pytest.mark.parametrize("case", ["three_bus", "ieee57"])
def test_round_trip_from_flat_start(case, request, rng):
    grid = request.getfixturevalue(case)
    x_true = random_state(grid.n_buses, rng)
    z = measurement_function(x_true, grid)
    x_hat, info = wlse_estimate(z, grid, return_info=True)
    np.testing.assert_allclose(x_hat.V, x_true.V, atol=1e-6)
    np.testing.assert_allclose(x_hat.theta, x_true.theta, atol=1e-6)
    assert x_hat.theta[0] == 0.0
    assert residual_norm(z, x_hat, grid) < 1e-8
    obj = np.array(info["objective"])
    assert np.all(np.diff(obj) <= 1e-12 * max(obj[0], 1.0))


def test_fixed_point(ieee57, rng):
    x_true = random_state(57, rng)
    z = measurement_function(x_true, ieee57)
    x_hat, info = wlse_estimate(z, ieee57, start=x_true, return_info=True)
    assert info["iterations"] <= 1
    assert residual_norm(z, x_hat, ieee57) < 1e-10


def test_monte_carlo_residual_bound(three_bus):
    # 1000 noisy estimates: the empirical 99th percentile of ||r|| should sit at
    # the chi-square bound, and few draws may exceed it
    rng = np.random.default_rng(7)
    sigma = 0.01
    x_true = random_state(3, rng)
    h = measurement_function(x_true, three_bus)
    cfg = EstimatorConfig(sigma=sigma)
    norms = np.empty(1000)
    for k in range(norms.size):
        z = h + rng.normal(0, sigma, h.size)
        norms[k] = residual_norm(z, wlse_estimate(z, three_bus, cfg), three_bus)
    tau = chi2_threshold(three_bus, sigma, 0.01)
    assert np.quantile(norms, 0.99) == pytest.approx(tau, rel=0.15)
    assert np.mean(norms > tau) < 0.03


def test_non_convergence_carries_iterate(ieee57, rng):
    z = measurement_function(random_state(57, rng, 0.2), ieee57)
    with pytest.raises(EstimationError) as exc:
        wlse_estimate(z, ieee57, EstimatorConfig(max_iterations=1))
    assert isinstance(exc.value.state, SystemState)
    assert exc.value.update_norm > 0


def test_singular_gain(three_bus, monkeypatch):
    monkeypatch.setattr(estimation, "jacobian", lambda x, g: np.zeros((10, 5)))
    with pytest.raises(EstimationError, match="singular"):
        wlse_estimate(np.zeros(10), three_bus)


def test_measurement_size_check(three_bus):
    with pytest.raises(ValueError):
        wlse_estimate(np.zeros(7), three_bus)


@pytest.mark.parametrize("kwargs", [{"sigma": 0.0}, {"tolerance": 0.0}, {"threshold": -1.0}])
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        EstimatorConfig(**kwargs)


# ---------------------------------------------------------------- residual test


def test_residual_norm_examples(three_bus, rng):
    x = random_state(3, rng)
    h = measurement_function(x, three_bus)
    assert residual_norm(h, x, three_bus) == 0.0
    e = np.zeros_like(h)
    e[3] = 1.0
    assert residual_norm(h + e, x, three_bus) == pytest.approx(1.0, abs=1e-12)
    z = rng.normal(size=h.size)
    oracle = np.sqrt(np.sum((z - h) ** 2))
    assert residual_norm(z, x, three_bus) == pytest.approx(oracle, abs=1e-12)


def test_bad_data_test():
    assert bad_data_test(0.0, 0.1) is False
    assert bad_data_test(0.2, 0.1) is True
    assert bad_data_test(0.1, 0.1) is False
    with pytest.raises(ValueError):
        bad_data_test(-1.0, 0.1)
    with pytest.raises(ValueError):
        bad_data_test(0.1, 0.0)


# ---------------------------------------------------------------- stealth


def test_zero_perturbation(ieee57, rng):
    x = random_state(57, rng)
    a = craft_stealthy_attack(x, (np.zeros(57), np.zeros(57)), ieee57)
    np.testing.assert_array_equal(a, 0.0)


def test_stealth_invariance(ieee57, rng):
    x_true = random_state(57, rng)
    h = measurement_function(x_true, ieee57)
    z = h + rng.normal(0, 0.01, h.size)
    x_hat = wlse_estimate(z, ieee57)
    r = residual_norm(z, x_hat, ieee57)
    for _ in range(100):
        dV = rng.normal(0, 0.01, 57)
        dth = rng.normal(0, 0.02, 57)
        dth[0] = 0.0
        a = craft_stealthy_attack(x_hat, (dV, dth), ieee57)
        r_a = residual_norm(z + a, x_hat.perturbed((dV, dth)), ieee57)
        assert abs(r_a - r) < 1e-9


def test_stealth_input_checks(three_bus):
    x = SystemState.flat(3)
    with pytest.raises(ValueError):
        craft_stealthy_attack(x, (np.zeros(2), np.zeros(3)), three_bus)
    with pytest.raises(ValueError):
        craft_stealthy_attack(x, (np.zeros(3), np.array([0.1, 0, 0])), three_bus)


def test_dc_linearization():
    grid = parse_case_text(DC_TWO_BUS)
    b = grid.edges[0].b
    dth = np.array([0.0, 1e-3])
    a = craft_stealthy_attack(SystemState.flat(2), (np.zeros(2), dth), grid)
    _, _, Pf, Qf = split(a, grid)
    # P_12 = -b sin(theta_1 - theta_2) to first order is b * dtheta_2
    assert Pf[0] == pytest.approx(b * dth[1], rel=1e-3)
    # reactive flow has no first-order term when V stays at 1
    assert abs(Qf[0]) < abs(b) * dth[1] ** 2
