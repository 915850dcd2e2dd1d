"""AC measurement model, WLS state estimation and the residual bad-data test.

Measurements are ordered as ``[P_i for all buses, Q_i for all buses,
P_ij for all edges, Q_ij for all edges]`` where edges are the grid's merged
branch list, each measured at its from-end. Branch flows use the series
admittance only; bus shunts (including folded line charging) enter the
injections through the bus admittance matrix.

The state vector used by the solver is ``[theta_1..theta_{n-1}, V_0..V_{n-1}]``;
bus 0 is the angle reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .grid import GridGraph

DEFAULT_SIGMA = 0.01


class EstimationError(RuntimeError):
    """Gauss-Newton failed: singular gain matrix or no convergence."""

    def __init__(self, message, state=None, update_norm=None):
        super().__init__(message)
        self.state = state
        self.update_norm = update_norm


@dataclass(frozen=True)
class SystemState:
    V: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if V.shape != theta.shape or V.ndim != 1:
            raise ValueError("V and theta must be 1-D arrays of equal length")
        if np.any(V <= 0):
            raise ValueError("voltage magnitudes must be positive")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def flat(cls, n):
        return cls(np.ones(n), np.zeros(n))

    def perturbed(self, c):
        """State shifted by ``c = (dV, dtheta)``."""
        dV, dtheta = c
        return SystemState(self.V + dV, self.theta + dtheta)


@dataclass(frozen=True)
class MeasurementLayout:
    """Maps each measurement entry to ``(kind, index)``; kind in P, Q, Pf, Qf."""

    n_buses: int
    edges: tuple[tuple[int, int], ...]

    @property
    def size(self):
        return 2 * self.n_buses + 2 * len(self.edges)

    def entries(self):
        n, m = self.n_buses, len(self.edges)
        return ([("P", i) for i in range(n)] + [("Q", i) for i in range(n)]
                + [("Pf", k) for k in range(m)] + [("Qf", k) for k in range(m)])

    @classmethod
    def for_grid(cls, grid):
        return cls(grid.n_buses, tuple((e.from_bus, e.to_bus) for e in grid.edges))


@dataclass(frozen=True)
class EstimatorConfig:
    sigma: float | np.ndarray = DEFAULT_SIGMA
    max_iterations: int = 50
    tolerance: float = 1e-10
    threshold: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("noise standard deviations must be positive")
        if self.tolerance <= 0 or self.threshold <= 0:
            raise ValueError("tolerance and threshold must be positive")

    def weights(self, m):
        """Diagonal of R^-1."""
        return np.broadcast_to(1.0 / np.asarray(self.sigma, dtype=float) ** 2, (m,)).copy()


@dataclass
class _Network:
    Y: np.ndarray
    Yf: np.ndarray
    f: np.ndarray
    t: np.ndarray
    layout: MeasurementLayout = field(repr=False)


def _network(grid: GridGraph) -> _Network:
    net = grid.__dict__.get("_network")
    if net is not None:
        return net
    n = grid.n_buses
    edges = grid.edges
    Y = np.zeros((n, n), dtype=complex)
    Yf = np.zeros((len(edges), n), dtype=complex)
    for k, e in enumerate(edges):
        y = complex(e.g, e.b)
        Y[e.from_bus, e.from_bus] += y
        Y[e.to_bus, e.to_bus] += y
        Y[e.from_bus, e.to_bus] -= y
        Y[e.to_bus, e.from_bus] -= y
        Yf[k, e.from_bus] = y
        Yf[k, e.to_bus] = -y
    for bus in grid.buses:
        Y[bus.id, bus.id] += complex(bus.shunt_g, bus.shunt_b)
    f = np.array([e.from_bus for e in edges], dtype=int)
    t = np.array([e.to_bus for e in edges], dtype=int)
    net = _Network(Y, Yf, f, t, MeasurementLayout.for_grid(grid))
    # grids are immutable, so the assembled matrices are cached on the instance
    object.__setattr__(grid, "_network", net)
    return net


def admittance_matrix(grid: GridGraph) -> np.ndarray:
    return _network(grid).Y.copy()


def _phasor(x: SystemState):
    return x.V * np.exp(1j * x.theta)


def measurement_function(x: SystemState, grid: GridGraph) -> np.ndarray:
    """Evaluate h(x): bus injections then from-end branch flows."""
    net = _network(grid)
    if x.V.shape != (grid.n_buses,):
        raise ValueError(f"state has {x.V.size} buses, grid has {grid.n_buses}")
    V = _phasor(x)
    S_bus = V * np.conj(net.Y @ V)
    S_f = V[net.f] * np.conj(net.Yf @ V)
    return np.concatenate([S_bus.real, S_bus.imag, S_f.real, S_f.imag])


def jacobian(x: SystemState, grid: GridGraph) -> np.ndarray:
    """Analytic dh/d[theta_1.., V..] in polar coordinates."""
    net = _network(grid)
    V = _phasor(x)
    Vnorm = V / x.V
    I_bus = net.Y @ V
    dS_dth = 1j * V[:, None] * np.conj(np.diag(I_bus) - net.Y * V[None, :])
    dS_dV = V[:, None] * np.conj(net.Y * Vnorm[None, :]) + np.diag(np.conj(I_bus) * Vnorm)

    I_f = net.Yf @ V
    Vf = V[net.f]
    Cf = np.zeros_like(net.Yf)
    Cf[np.arange(len(net.f)), net.f] = 1.0
    dSf_dth = 1j * (np.conj(I_f)[:, None] * Cf * V[None, :]
                    - Vf[:, None] * np.conj(net.Yf * V[None, :]))
    dSf_dV = Vf[:, None] * np.conj(net.Yf * Vnorm[None, :]) + np.conj(I_f)[:, None] * Cf * Vnorm[None, :]

    H_th = np.vstack([dS_dth.real, dS_dth.imag, dSf_dth.real, dSf_dth.imag])
    H_V = np.vstack([dS_dV.real, dS_dV.imag, dSf_dV.real, dSf_dV.imag])
    return np.hstack([H_th[:, 1:], H_V])


def _pack(x: SystemState):
    return np.concatenate([x.theta[1:], x.V])


def _unpack(vec, n):
    return SystemState(vec[n - 1:], np.concatenate([[0.0], vec[:n - 1]]))


def wlse_estimate(z, grid: GridGraph, cfg: EstimatorConfig | None = None,
                  start: SystemState | None = None, return_info=False):
    """Gauss-Newton solution of min (z - h(x))^T R^-1 (z - h(x)).

    Steps that increase the objective are halved (up to 30 times) before being
    accepted. Raises :class:`EstimationError` on a singular gain matrix or when
    ``max_iterations`` pass without the update norm dropping below tolerance.
    """
    cfg = cfg or EstimatorConfig()
    n = grid.n_buses
    z = np.asarray(z, dtype=float)
    layout = _network(grid).layout
    if z.shape != (layout.size,):
        raise ValueError(f"expected {layout.size} measurements, got {z.shape}")
    w = cfg.weights(layout.size)
    x = start if start is not None else SystemState.flat(n)
    x = SystemState(x.V, x.theta - x.theta[0])
    vec = _pack(x)

    def objective(s):
        r = z - measurement_function(s, grid)
        return float(r @ (w * r)), r

    J_val, r = objective(x)
    history = [J_val]
    norm = np.inf
    for it in range(1, cfg.max_iterations + 1):
        H = jacobian(x, grid)
        G = H.T @ (w[:, None] * H)
        try:
            cho = linalg.cho_factor(G)
        except linalg.LinAlgError:
            raise EstimationError(f"gain matrix is singular at iteration {it}", x) from None
        dx = linalg.cho_solve(cho, H.T @ (w * r))
        step = 1.0
        for _ in range(30):
            cand_vec = vec + step * dx
            if np.all(cand_vec[n - 1:] > 0):
                cand = _unpack(cand_vec, n)
                cand_J, cand_r = objective(cand)
                if cand_J <= J_val or step * np.linalg.norm(dx) < cfg.tolerance:
                    break
            step /= 2
        else:
            raise EstimationError("line search failed", x, float(np.linalg.norm(dx)))
        norm = float(np.linalg.norm(step * dx))
        vec, x, J_val, r = cand_vec, cand, cand_J, cand_r
        history.append(J_val)
        if norm < cfg.tolerance:
            if return_info:
                return x, {"iterations": it, "objective": history, "update_norm": norm}
            return x
    raise EstimationError(
        f"no convergence after {cfg.max_iterations} iterations (update norm {norm:.3e})",
        x, norm,
    )


def residual_norm(z, x_hat: SystemState, grid: GridGraph) -> float:
    return float(np.linalg.norm(np.asarray(z, dtype=float) - measurement_function(x_hat, grid)))


def bad_data_test(r: float, tau: float) -> bool:
    """Flag bad data when the residual strictly exceeds ``tau``."""
    if r < 0 or tau <= 0:
        raise ValueError("residual must be >= 0 and threshold > 0")
    return r > tau


def chi2_threshold(grid: GridGraph, sigma=DEFAULT_SIGMA, false_alarm=0.01) -> float:
    """Residual-norm threshold for i.i.d. Gaussian noise of std ``sigma``.

    Uses the chi-square law of ||r||^2 / sigma^2 with m - (2n - 1) degrees of freedom.
    """
    layout = MeasurementLayout.for_grid(grid)
    dof = layout.size - (2 * grid.n_buses - 1)
    return float(sigma * np.sqrt(chi2.ppf(1 - false_alarm, dof)))


def craft_stealthy_attack(x_hat: SystemState, c, grid: GridGraph) -> np.ndarray:
    """Injection vector a = h(x_hat + c) - h(x_hat) for state shift ``c = (dV, dtheta)``."""
    dV, dtheta = (np.asarray(v, dtype=float) for v in c)
    if dV.shape != x_hat.V.shape or dtheta.shape != x_hat.theta.shape:
        raise ValueError("perturbation dimension does not match the state")
    if dtheta[0] != 0:
        raise ValueError("perturbation must leave the reference angle unchanged")
    return measurement_function(x_hat.perturbed((dV, dtheta)), grid) - measurement_function(x_hat, grid)
