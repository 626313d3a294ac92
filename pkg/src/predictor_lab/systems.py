"""Benchmark plant models: dynamics, nominal controllers and Lyapunov data.

Three systems are shipped: a two-protein activator/repressor clock, a
chemostat bioreactor, and a scalar linear plant used as an analytic oracle
for the predictor solvers.  All callables are vectorized over a leading
batch axis so grid-wide evaluations stay in numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import fsolve

_ESTIMATE_SAMPLES = 100_000
_ESTIMATE_SEED = 20240911


@dataclass(frozen=True)
class GrowthConstants:
    """Sampled Lipschitz/growth bounds over the declared compact box."""

    C_f: float
    M1: float
    M2: float
    M3: float
    M4: float


@dataclass(frozen=True)
class SystemModel:
    """A plant/controller pair with the derivative data the toolkit needs.

    ``dynamics``, ``jacobian_state``, ``jacobian_input``, ``controller`` and
    ``controller_grad`` all accept states of shape (n,) or (..., n) and
    scalar or (...,) inputs, and broadcast accordingly.  ``setpoint`` is the
    closed-loop equilibrium refined to machine precision at construction.
    """

    name: str
    state_dim: int
    dynamics: Callable
    jacobian_state: Callable
    jacobian_input: Callable
    controller: Callable
    controller_grad: Callable
    lyapunov: Callable
    setpoint: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_bound: float
    constants: GrowthConstants
    controller_hessian: Optional[Callable] = None
    control_lo: Optional[float] = None
    control_hi: Optional[float] = None
    params: dict = field(default_factory=dict)

    @property
    def x_bound(self) -> float:
        """Largest state norm over the compact box (the box radius)."""
        corners = np.maximum(np.abs(self.x_lo), np.abs(self.x_hi))
        return float(np.linalg.norm(corners))

    def sample_states(self, count, rng):
        """Uniform states inside the compact box, shape (count, n)."""
        return rng.uniform(self.x_lo, self.x_hi, size=(count, self.state_dim))

    def hessian_or_fd(self, X):
        """Controller Hessian, analytic if provided else central differences.

        Step h = 1e-5 * (1 + |X|) per coordinate pair.  Accepts (..., n).
        """
        if self.controller_hessian is not None:
            return self.controller_hessian(X)
        X = np.asarray(X, dtype=float)
        n = self.state_dim
        h = 1e-5 * (1.0 + np.linalg.norm(X, axis=-1))
        out = np.zeros(X.shape[:-1] + (n, n))
        eye = np.eye(n)
        for i in range(n):
            step = h[..., None] * eye[i]
            gp = self.controller_grad(X + step)
            gm = self.controller_grad(X - step)
            out[..., i, :] = (gp - gm) / (2.0 * h[..., None])
        # symmetrize: FD of the gradient need not be exactly symmetric
        return 0.5 * (out + np.swapaxes(out, -1, -2))


def _estimate_constants(dyn, jac_x, jac_u, ctrl, ctrl_grad, setpoint,
                        x_lo, x_hi, u_bound, n) -> GrowthConstants:
    """Sampling-based maximization of the Lipschitz/growth bounds."""
    rng = np.random.default_rng(_ESTIMATE_SEED)
    X = rng.uniform(x_lo, x_hi, size=(_ESTIMATE_SAMPLES, n))
    u = rng.uniform(-u_bound, u_bound, size=_ESTIMATE_SAMPLES)

    jx = jac_x(X, u)
    ju = jac_u(X, u)
    # spectral norms are cheap at these dimensions
    jx_norm = np.linalg.norm(jx, ord=2, axis=(-2, -1))
    ju_norm = np.linalg.norm(ju, axis=-1)
    C_f = float(np.maximum(jx_norm, ju_norm).max())
    M2 = float(jx_norm.max())

    u_star = float(ctrl(setpoint))
    dX = X - setpoint
    du = u - u_star
    denom = np.linalg.norm(dX, axis=-1) + np.abs(du)
    keep = denom > 1e-6
    fval = dyn(X, u)
    M1 = float((np.linalg.norm(fval, axis=-1)[keep] / denom[keep]).max())

    dxn = np.linalg.norm(dX, axis=-1)
    keep = dxn > 1e-6
    M3 = float((np.abs(ctrl(X) - u_star)[keep] / dxn[keep]).max())
    M4 = float(np.linalg.norm(ctrl_grad(X), axis=-1).max())
    return GrowthConstants(C_f=C_f, M1=M1, M2=M2, M3=M3, M4=M4)


# ---------------------------------------------------------------------------
# protein activator/repressor clock

K1 = 300.0
K2 = 300.0
KA = 0.04
KB = 0.004
PROTEIN_SETPOINT_NOMINAL = (0.0939, 5.2525)


def hill_f1(x1, x2):
    return (K1 * x1 ** 2 + KA) / (1.0 + x1 ** 2 + x2 ** 2)


def hill_f2(x1):
    return (K2 * x1 ** 2 + KB) / (1.0 + x1 ** 2)


def _hill_f1_grad(x1, x2):
    den = 1.0 + x1 ** 2 + x2 ** 2
    num = K1 * x1 ** 2 + KA
    d1 = (2.0 * K1 * x1 * den - num * 2.0 * x1) / den ** 2
    d2 = -num * 2.0 * x2 / den ** 2
    return d1, d2


def _make_protein() -> SystemModel:
    def closed_loop_root(v):
        x1, x2 = v
        return [x1 - hill_f1(x1, x2), x2 - 2.0 * hill_f2(x1)]

    xstar = np.array(fsolve(closed_loop_root, PROTEIN_SETPOINT_NOMINAL, xtol=1e-14))
    f1_star = float(hill_f1(xstar[0], xstar[1]))

    def dynamics(X, u):
        X = np.asarray(X, dtype=float)
        x1, x2 = X[..., 0], X[..., 1]
        dx1 = -x1 + hill_f1(x1, x2) + np.asarray(u, dtype=float)
        dx2 = -0.5 * x2 + hill_f2(x1)
        return np.stack([dx1, dx2], axis=-1)

    def jacobian_state(X, u):
        X = np.asarray(X, dtype=float)
        x1, x2 = X[..., 0], X[..., 1]
        d11, d12 = _hill_f1_grad(x1, x2)
        den2 = 1.0 + x1 ** 2
        d21 = (2.0 * K2 * x1 * den2 - (K2 * x1 ** 2 + KB) * 2.0 * x1) / den2 ** 2
        J = np.zeros(np.shape(x1) + (2, 2))
        J[..., 0, 0] = -1.0 + d11
        J[..., 0, 1] = d12
        J[..., 1, 0] = d21
        J[..., 1, 1] = -0.5
        return J

    def jacobian_input(X, u):
        X = np.asarray(X, dtype=float)
        J = np.zeros(X.shape)
        J[..., 0] = 1.0
        return J

    def controller(X):
        X = np.asarray(X, dtype=float)
        return -hill_f1(X[..., 0], X[..., 1]) + f1_star

    def controller_grad(X):
        X = np.asarray(X, dtype=float)
        d1, d2 = _hill_f1_grad(X[..., 0], X[..., 1])
        return np.stack([-d1, -d2], axis=-1)

    def lyapunov(X):
        X = np.asarray(X, dtype=float)
        d = X - xstar
        return np.sum(d * d, axis=-1)

    # operating envelope of the closed-loop benchmark runs; keeps the
    # sampled Lipschitz constant small enough that exp(D_max * C_f) stays
    # finite in double precision
    x_lo = np.array([0.0, 2.0])
    x_hi = np.array([0.22, 33.0])
    u_bound = 5.0
    consts = _estimate_constants(dynamics, jacobian_state, jacobian_input,
                                 controller, controller_grad, xstar,
                                 x_lo, x_hi, u_bound, 2)
    return SystemModel(
        name="protein", state_dim=2, dynamics=dynamics,
        jacobian_state=jacobian_state, jacobian_input=jacobian_input,
        controller=controller, controller_grad=controller_grad,
        lyapunov=lyapunov, setpoint=xstar, x_lo=x_lo, x_hi=x_hi,
        u_bound=u_bound, constants=consts,
        params={"K1": K1, "K2": K2, "Ka": KA, "Kb": KB},
    )


# ---------------------------------------------------------------------------
# chemostat bioreactor

CHEMOSTAT = {
    "Z_star": 3.0, "S_star": 2.0, "U_star": 0.9, "sigma": 10.0,
    "chi": 0.1, "S_in": 5.33, "xi": 0.5, "rho0": 1.0,
}


def growth_rate(S):
    return 7.0 * S / (2.0 * (1.0 + S + S ** 2))


def growth_rate_deriv(S):
    return 7.0 * (1.0 - S ** 2) / (2.0 * (1.0 + S + S ** 2) ** 2)


def _make_chemostat() -> SystemModel:
    p = CHEMOSTAT
    mu_star = float(growth_rate(p["S_star"]))
    gain = p["sigma"] * p["chi"] / mu_star ** (1.0 + p["xi"])

    def controller(X):
        X = np.asarray(X, dtype=float)
        Z, S = X[..., 0], X[..., 1]
        mu = growth_rate(S)
        base = p["U_star"] * mu * Z / (mu_star * p["Z_star"])
        kink = gain * np.abs(mu - mu_star) ** (1.0 + p["xi"])
        return base + np.where(S <= p["S_star"], kink, 0.0)

    def controller_grad(X):
        X = np.asarray(X, dtype=float)
        Z, S = X[..., 0], X[..., 1]
        mu = growth_rate(S)
        dmu = growth_rate_deriv(S)
        dZ = p["U_star"] * mu / (mu_star * p["Z_star"])
        g = mu - mu_star
        kink = gain * (1.0 + p["xi"]) * np.abs(g) ** p["xi"] * np.sign(g) * dmu
        dS = p["U_star"] * dmu * Z / (mu_star * p["Z_star"])
        dS = dS + np.where(S <= p["S_star"], kink, 0.0)
        return np.stack([dZ, dS], axis=-1)

    def dynamics(X, u):
        X = np.asarray(X, dtype=float)
        u = np.asarray(u, dtype=float)
        Z, S = X[..., 0], X[..., 1]
        mu = growth_rate(S)
        dZ = (p["rho0"] * mu - p["chi"] - u) * Z
        dS = u * (p["S_in"] - S) - mu * Z
        return np.stack([dZ, dS], axis=-1)

    def jacobian_state(X, u):
        X = np.asarray(X, dtype=float)
        u = np.asarray(u, dtype=float)
        Z, S = X[..., 0], X[..., 1]
        mu = growth_rate(S)
        dmu = growth_rate_deriv(S)
        J = np.zeros(np.shape(Z) + (2, 2))
        J[..., 0, 0] = p["rho0"] * mu - p["chi"] - u
        J[..., 0, 1] = p["rho0"] * dmu * Z
        J[..., 1, 0] = -mu
        J[..., 1, 1] = -u - dmu * Z
        return J

    def jacobian_input(X, u):
        X = np.asarray(X, dtype=float)
        Z, S = X[..., 0], X[..., 1]
        return np.stack([-Z, p["S_in"] - S], axis=-1)

    def closed_loop_root(v):
        return dynamics(np.asarray(v), controller(np.asarray(v)))

    xstar = np.array(fsolve(closed_loop_root, [p["Z_star"], p["S_star"]], xtol=1e-14))

    def lyapunov(X):
        X = np.asarray(X, dtype=float)
        d = X - xstar
        return np.sum(d * d, axis=-1)

    x_lo = np.array([1.0, 0.8])
    x_hi = np.array([4.5, 3.5])
    u_bound = 4.0
    consts = _estimate_constants(dynamics, jacobian_state, jacobian_input,
                                 controller, controller_grad, xstar,
                                 x_lo, x_hi, u_bound, 2)
    return SystemModel(
        name="chemostat", state_dim=2, dynamics=dynamics,
        jacobian_state=jacobian_state, jacobian_input=jacobian_input,
        controller=controller, controller_grad=controller_grad,
        lyapunov=lyapunov, setpoint=xstar, x_lo=x_lo, x_hi=x_hi,
        u_bound=u_bound, constants=consts,
        control_lo=0.0, control_hi=5.0, params=dict(p),
    )


# ---------------------------------------------------------------------------
# linear scalar oracle system

def _make_linear(a: float, b_in: float) -> SystemModel:
    if b_in == 0.0:
        raise ValueError("linear system requires b_in != 0")
    a = float(a)
    b_in = float(b_in)

    def dynamics(X, u):
        X = np.asarray(X, dtype=float)
        u = np.asarray(u, dtype=float)
        return (a * X[..., 0] + b_in * u)[..., None]

    def jacobian_state(X, u):
        X = np.asarray(X, dtype=float)
        return np.full(X.shape[:-1] + (1, 1), a)

    def jacobian_input(X, u):
        X = np.asarray(X, dtype=float)
        return np.full(X.shape, b_in)

    def controller(X):
        X = np.asarray(X, dtype=float)
        return -(a + 1.0) * X[..., 0] / b_in

    def controller_grad(X):
        X = np.asarray(X, dtype=float)
        return np.full(X.shape, -(a + 1.0) / b_in)

    def controller_hessian(X):
        X = np.asarray(X, dtype=float)
        return np.zeros(X.shape[:-1] + (1, 1))

    def lyapunov(X):
        X = np.asarray(X, dtype=float)
        return X[..., 0] ** 2

    x_lo = np.array([-5.0])
    x_hi = np.array([5.0])
    u_bound = 5.0
    consts = _estimate_constants(dynamics, jacobian_state, jacobian_input,
                                 controller, controller_grad, np.zeros(1),
                                 x_lo, x_hi, u_bound, 1)
    return SystemModel(
        name="linear", state_dim=1, dynamics=dynamics,
        jacobian_state=jacobian_state, jacobian_input=jacobian_input,
        controller=controller, controller_grad=controller_grad,
        controller_hessian=controller_hessian,
        lyapunov=lyapunov, setpoint=np.zeros(1), x_lo=x_lo, x_hi=x_hi,
        u_bound=u_bound, constants=consts,
        params={"a": a, "b_in": b_in},
    )


def make_system(name: str, a: float = -0.5, b_in: float = 1.0) -> SystemModel:
    """Build one of the three benchmark systems by name.

    ``a`` and ``b_in`` apply only to the linear system.
    """
    if name == "protein":
        return _make_protein()
    if name == "chemostat":
        return _make_chemostat()
    if name == "linear":
        return _make_linear(a, b_in)
    raise ValueError(f"unknown system name: {name!r}")
