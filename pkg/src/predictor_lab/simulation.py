"""Closed-loop simulation: plant, history, predictor, adaptation, diagnostics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adaptation import (AdaptationState, estimated_input_profile,
                         phi_measured, phi_unmeasured, step_delay_estimate)
from .history import (InputHistory, distributed_input_xderiv,
                      window_functionals)
from .neural_operator import NeuralOperatorModel, forward, load_model
from .predictor import (PredictorError, PredictorGrid, PredictorProfile,
                        integral_residual, q1_scan, solve_fixed_point,
                        solve_ode_march)
from .systems import SystemModel, make_system

log = logging.getLogger("predictor_lab")

PREDICTOR_CHOICES = ("numeric_fixed_point", "numeric_march", "neural", "none")
LAW_CHOICES = ("measured", "unmeasured", "frozen")
MAX_CONSECUTIVE_SOLVER_FAILURES = 10
DIVERGENCE_NORM = 1e12


@dataclass
class SimulationConfig:
    system: str = "protein"
    x0: tuple = (0.03, 30.0)
    d_true: float = 1.0
    d_hat0: float = 2.0
    d_min: float = 0.5
    d_max: float = 2.5
    gamma: float = 1000.0
    b: float = 1.0
    dt: float = 1e-3
    t_final: float = 40.0
    predictor: str = "numeric_fixed_point"
    law: str = "measured"
    grid_points: int = 201
    model_path: Optional[str] = None
    control_clip: Optional[tuple] = None
    uncompensated: bool = False  # predictor == "none": kappa(X) vs zero input
    # above the float stall floor of large-state solves, far below dx^2
    solver_tol: float = 1e-8
    solver_max_iter: int = 200
    linear_a: float = -0.5
    linear_b: float = 1.0
    seed: int = 0

    def validate(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.t_final <= self.d_true:
            raise ValueError("t_final must exceed the true delay")
        if self.predictor not in PREDICTOR_CHOICES:
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.law not in LAW_CHOICES:
            raise ValueError(f"unknown adaptation law {self.law!r}")
        if self.predictor == "neural" and self.model_path is None:
            raise ValueError("neural predictor requires model_path")
        if not self.d_min <= self.d_true <= self.d_max:
            log.warning("true delay %.3f outside [%.3f, %.3f]; "
                        "running anyway (robustness experiment)",
                        self.d_true, self.d_min, self.d_max)


@dataclass
class SimulationTrace:
    t: np.ndarray
    X: np.ndarray              # (K, n)
    U: np.ndarray              # applied (clipped) control
    U_unclipped: np.ndarray
    U_arriving: np.ndarray     # U(t - D_true) seen by the plant
    d_hat: np.ndarray
    phi: np.ndarray
    gamma_fn: np.ndarray
    upsilon_fn: np.ndarray
    pred_residual: np.ndarray
    pred_time_s: np.ndarray
    wall_time_s: np.ndarray
    diverged: bool = False
    divergence_step: Optional[int] = None
    config: Optional[SimulationConfig] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.t)

    def write_csv(self, path) -> None:
        n = self.X.shape[1]
        cols = ["t"] + [f"X_{i + 1}" for i in range(n)] + [
            "U", "d_hat", "phi", "gamma", "upsilon",
            "pred_residual", "pred_time_s"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(self.n_steps):
                row = [self.t[k], *self.X[k], self.U[k], self.d_hat[k],
                       self.phi[k], self.gamma_fn[k], self.upsilon_fn[k],
                       self.pred_residual[k], self.pred_time_s[k]]
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def gamma_functional(sys: SystemModel, X, h: InputHistory, d_true: float,
                     d_hat: float) -> float:
    """|X - X*|^2 + int_{t-D}^t U^2 + (D - d_hat)^2 (measured-case diagnostic)."""
    dX = np.asarray(X, dtype=float) - sys.setpoint
    w = window_functionals(h, d_true)
    return float(dX @ dX + w["int_U2"] + (d_true - d_hat) ** 2)


def upsilon_functional(sys: SystemModel, X, h: InputHistory, d_true: float,
                       d_hat: float) -> float:
    """|X - X*| + L1 norms of U, dU, ddU over max(D, d_hat) + (D - d_hat)^2."""
    dX = np.asarray(X, dtype=float) - sys.setpoint
    w = window_functionals(h, max(d_true, d_hat))
    return float(np.sqrt(dX @ dX) + w["int_absU"] + w["int_absUdot"]
                 + w["int_absUddot"] + (d_true - d_hat) ** 2)


def _history_sampler(h: InputHistory, t: float, delay: float):
    """u(x) = U(t + delay (x-1)), holding the newest sample at the x=1 edge.

    Within a step the control U(t) is not yet pushed, so the profile's
    newest cell is zero-order-held; the plant integration is O(dt) anyway.
    """
    newest = h.current_time

    def sampler(x):
        theta = np.minimum(t + delay * (np.asarray(x, dtype=float) - 1.0),
                           newest)
        return h.sample(theta)

    return sampler


def run(cfg: SimulationConfig, system: Optional[SystemModel] = None,
        model: Optional[NeuralOperatorModel] = None,
        on_step=None) -> SimulationTrace:
    """Explicit-Euler closed loop per the configured predictor and law.

    ``on_step(k, t, X, hist, d_hat, profile)`` fires after the control push
    each step; dataset harvesting hangs off it.
    """
    cfg.validate()
    sys = system if system is not None else make_system(
        cfg.system, a=cfg.linear_a, b_in=cfg.linear_b)
    if cfg.predictor == "neural" and model is None:
        model = load_model(cfg.model_path)

    clip = cfg.control_clip
    if clip is None and sys.control_lo is not None:
        clip = (sys.control_lo, sys.control_hi)

    dt = cfg.dt
    n_steps = int(round(cfg.t_final / dt))
    window = 2.0 * max(cfg.d_max, cfg.d_true) + 4.0 * dt
    hist = InputHistory(dt, window, t0=-dt, fill=0.0)
    grid = PredictorGrid(cfg.grid_points)
    st = AdaptationState(d_hat=cfg.d_hat0, d_min=cfg.d_min, d_max=cfg.d_max,
                         gamma=cfg.gamma, b=cfg.b, law=cfg.law)

    X = np.asarray(cfg.x0, dtype=float).copy()
    warm = None
    failures = 0
    warned_failure = False
    prev_u_raw = 0.0

    K = n_steps
    out = {name: np.zeros(K) for name in
           ("t", "U", "U_unclipped", "U_arriving", "d_hat", "phi",
            "gamma_fn", "upsilon_fn", "pred_residual", "pred_time_s",
            "wall_time_s")}
    Xs = np.zeros((K, sys.state_dim))
    diverged = False
    div_step = None
    t_start = time.perf_counter()

    for k in range(K):
        t = k * dt
        d_hat = st.d_hat
        profile = None
        residual = 0.0
        solve_time = 0.0

        if cfg.predictor == "none":
            u_raw = float(sys.controller(X)) if cfg.uncompensated else 0.0
        else:
            profile_delay = d_hat if cfg.law == "unmeasured" else cfg.d_true
            sampler = _history_sampler(hist, t, profile_delay)
            try:
                tic = time.perf_counter()
                if cfg.predictor == "numeric_fixed_point":
                    profile = solve_fixed_point(
                        sys, X, sampler, d_hat, grid, tol=cfg.solver_tol,
                        max_iter=cfg.solver_max_iter, warm_start=warm)
                elif cfg.predictor == "numeric_march":
                    profile = solve_ode_march(sys, X, sampler, d_hat, grid)
                else:  # neural
                    u_m = np.asarray(sampler(model.input_grid), dtype=float)
                    values = forward(model, X, u_m, d_hat, grid.points)
                    profile = PredictorProfile(
                        grid=grid, values=values, delay_used=d_hat,
                        solver="neural", iterations=0, residual=0.0)
                    profile.residual = integral_residual(
                        sys, values, np.asarray(sampler(grid.points)),
                        d_hat, grid.dx)
                solve_time = time.perf_counter() - tic
                residual = profile.residual
                warm = profile.values
                failures = 0
                u_raw = float(sys.controller(profile.values[-1]))
            except PredictorError as exc:
                failures += 1
                if not warned_failure:
                    log.warning("predictor failed at t=%.4f (%s); "
                                "holding previous control", t, exc)
                    warned_failure = True
                if failures > MAX_CONSECUTIVE_SOLVER_FAILURES:
                    raise PredictorError(
                        f"predictor failed {failures} consecutive steps "
                        f"(t={t:.4f}): {exc}") from exc
                profile = None
                u_raw = prev_u_raw

        U = float(np.clip(u_raw, clip[0], clip[1])) if clip else float(u_raw)
        prev_u_raw = u_raw
        hist.push(t, U)

        phi = 0.0
        if cfg.law != "frozen" and profile is not None:
            try:
                if cfg.law == "measured":
                    u_nodes = hist.sample(t + cfg.d_true * (grid.points - 1.0))
                    w = u_nodes - sys.controller(profile.values)
                    post_sampler = _history_sampler(hist, t, cfg.d_true)
                    q1 = q1_scan(sys, profile, post_sampler, d_hat,
                                 float(u_nodes[0]))
                    phi = phi_measured(sys, w, q1, X, cfg.b, grid)
                else:
                    u_hat = estimated_input_profile(hist, d_hat, grid)
                    u_hat_x = distributed_input_xderiv(hist, d_hat, grid.points)
                    phi = phi_unmeasured(sys, profile, u_hat, u_hat_x,
                                         hist, d_hat, grid)
                if not np.isfinite(phi):
                    phi = 0.0
            except (PredictorError, FloatingPointError):
                phi = 0.0

        u_arriving = hist.sample(t - cfg.d_true)

        out["t"][k] = t
        Xs[k] = X
        out["U"][k] = U
        out["U_unclipped"][k] = u_raw
        out["U_arriving"][k] = u_arriving
        out["d_hat"][k] = d_hat
        out["phi"][k] = phi
        out["gamma_fn"][k] = gamma_functional(sys, X, hist, cfg.d_true, d_hat)
        out["upsilon_fn"][k] = upsilon_functional(sys, X, hist, cfg.d_true,
                                                  d_hat)
        out["pred_residual"][k] = residual
        out["pred_time_s"][k] = solve_time
        out["wall_time_s"][k] = time.perf_counter() - t_start

        if on_step is not None:
            on_step(k, t, X, hist, d_hat, profile)

        st = step_delay_estimate(st, phi, dt)

        X = X + dt * sys.dynamics(X, u_arriving)
        if not np.all(np.isfinite(X)) or X @ X > DIVERGENCE_NORM ** 2:
            diverged = True
            div_step = k
            log.warning("state diverged at t=%.4f; terminating run", t)
            K = k + 1
            break

    sel = slice(0, K)
    return SimulationTrace(
        t=out["t"][sel], X=Xs[sel], U=out["U"][sel],
        U_unclipped=out["U_unclipped"][sel],
        U_arriving=out["U_arriving"][sel], d_hat=out["d_hat"][sel],
        phi=out["phi"][sel], gamma_fn=out["gamma_fn"][sel],
        upsilon_fn=out["upsilon_fn"][sel],
        pred_residual=out["pred_residual"][sel],
        pred_time_s=out["pred_time_s"][sel],
        wall_time_s=out["wall_time_s"][sel],
        diverged=diverged, divergence_step=div_step, config=cfg,
        meta={"system": sys.name, "setpoint": sys.setpoint.tolist()})
