"""Networked ODE models, a fixed-step RK4 integrator and equilibrium analysis.

Two coupled models are supported, both of the form
``dx_n/dt = f(x_n) + sum_m alpha[n, m] * g(x_n, x_m)``:

* ``PD``  (population dynamics):  ``-B x_n + R sum_m alpha[n,m] x_m``
* ``MAK`` (mass-action kinetics): ``F - B x_n + R sum_m alpha[n,m] x_n x_m``
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (DimensionError, DivergenceError, FormatError,
                     NonConvergenceError, ParameterError, StabilityError)
from .graph import Network

__all__ = [
    "DynamicsModel", "Trajectory", "StabilityReport", "derivative",
    "integrate", "find_equilibrium", "check_stability", "sample_stable_model",
    "write_trajectory_csv", "read_trajectory_csv",
]

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class DynamicsModel:
    kind: str
    B: float
    R: float
    F: float = 0.0

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in ("PD", "MAK"):
            raise ParameterError(f"unknown model kind {self.kind!r} (use PD or MAK)")
        object.__setattr__(self, "kind", kind)
        for name in ("B", "R", "F"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ParameterError(f"parameter {name} must be finite")
            object.__setattr__(self, name, value)
        if self.B <= 0:
            raise ParameterError(f"decay rate B must be positive, got {self.B}")
        if kind == "PD" and self.F != 0:
            raise ParameterError("the PD model has no influx term F")
        if self.F < 0:
            raise ParameterError(f"influx F must be non-negative, got {self.F}")

    def params(self) -> dict:
        out = {"B": self.B, "R": self.R}
        if self.kind == "MAK":
            out["F"] = self.F
        return out


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.size:
            raise DimensionError(
                f"states {states.shape} do not match {times.size} time stamps")
        if times.size == 0 or times[0] != 0:
            raise FormatError("trajectory must start at t = 0")
        if np.any(np.diff(times) <= 0):
            raise FormatError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(states)):
            raise FormatError("trajectory contains non-finite states")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class StabilityReport:
    equilibrium: np.ndarray
    max_real_eigenvalue: float
    stable: bool

    @property
    def spectral_margin(self) -> float:
        return -self.max_real_eigenvalue

    def to_dict(self) -> dict:
        return {"stable": self.stable,
                "max_real_eigenvalue": self.max_real_eigenvalue,
                "spectral_margin": self.spectral_margin,
                "equilibrium": self.equilibrium.tolist()}


def _check_state(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n,):
        raise DimensionError(f"state has shape {x.shape}, expected ({net.n},)")
    return x


def vector_field(model: DynamicsModel, net: Network) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``x -> dx/dt`` with the model matrices precomputed."""
    W = net.adjacency
    B, R, F = model.B, model.R, model.F
    if model.kind == "PD":
        A = R * W - B * np.eye(net.n)
        return lambda x: A @ x
    return lambda x: F - B * x + R * x * (W @ x)


def derivative(model: DynamicsModel, net: Network, x) -> np.ndarray:
    x = _check_state(net, x)
    W = net.adjacency
    if model.kind == "PD":
        return -model.B * x + model.R * (W @ x)
    return model.F - model.B * x + model.R * x * (W @ x)


def jacobian_matrix(model: DynamicsModel, net: Network, x) -> np.ndarray:
    """Analytic Jacobian of the vector field at ``x`` (any point, not only equilibria)."""
    x = _check_state(net, x)
    W = net.adjacency
    if model.kind == "PD":
        return model.R * W - model.B * np.eye(net.n)
    J = model.R * x[:, None] * W
    J[np.diag_indices(net.n)] += -model.B + model.R * (W @ x)
    return J


def rk4_propagator(A: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step of ``dx/dt = A x`` as a matrix.

    For a linear field the four stages collapse to the degree-4 Taylor
    polynomial of ``exp(hA)``.
    """
    hA = h * A
    P = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, 5):
        term = term @ hA / k
        P = P + term
    return P


def _rk4_steps(fx, x, h, n_steps, record_every, t0=0.0, linear=None):
    """Advance ``n_steps`` classical RK4 steps, returning recorded states and final x.

    ``linear`` may hold the matrix of a linear field, in which case each
    step is a single product with the precomputed propagator.
    """
    n_rec = n_steps // record_every + 1
    out = np.empty((n_rec, x.size))
    out[0] = x
    half = 0.5 * h
    sixth = h / 6.0
    P = rk4_propagator(linear, h) if linear is not None else None
    for i in range(1, n_steps + 1):
        if P is not None:
            x = P @ x
        else:
            k1 = fx(x)
            k2 = fx(x + half * k1)
            k3 = fx(x + half * k2)
            k4 = fx(x + h * k3)
            x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if not (np.max(np.abs(x)) <= DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"state left |x| <= {DIVERGENCE_LIMIT:g} at t = {t0 + i * h:.6g}",
                time=t0 + i * h)
        if i % record_every == 0:
            out[i // record_every] = x
    return out, x


def integrate(model: DynamicsModel, net: Network, x0, step: float, horizon: float,
              record_every: int = 1) -> Trajectory:
    """Fixed-step classical RK4 from t = 0 to ``horizon``.

    The number of steps is ``round(horizon / step)`` when ``horizon`` is a
    multiple of ``step`` up to rounding, otherwise it is rounded up.  Only
    every ``record_every``-th state is stored, which keeps long fine-step
    runs affordable.
    """
    x0 = _check_state(net, x0)
    if not (step > 0 and horizon > 0):
        raise ParameterError("step and horizon must be positive")
    if step > horizon:
        raise ParameterError(f"step {step} exceeds horizon {horizon}")
    if not np.all(np.isfinite(x0)):
        raise ParameterError("initial state must be finite")
    ratio = horizon / step
    n_steps = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 * ratio else math.ceil(ratio)
    record_every = int(record_every)
    if record_every < 1 or n_steps % record_every:
        raise ParameterError(
            f"record_every={record_every} must divide the step count {n_steps}")
    linear = jacobian_matrix(model, net, x0) if model.kind == "PD" else None
    states, _ = _rk4_steps(vector_field(model, net), x0.copy(), float(step),
                           n_steps, record_every, linear=linear)
    times = np.arange(states.shape[0]) * (record_every * step)
    meta = {"model": model.kind, "params": model.params(), "step": float(step),
            "record_every": record_every}
    return Trajectory(times, states, meta)


def _stable_step(model, net, x) -> float:
    scale = np.max(np.sum(np.abs(jacobian_matrix(model, net, x)), axis=1))
    return 0.2 / max(scale, 1e-12)


def _newton(model, net, x, tol, max_iter):
    fx = derivative(model, net, x)
    for _ in range(max_iter):
        if np.max(np.abs(fx)) < tol:
            return x
        J = jacobian_matrix(model, net, x)
        try:
            x = x - np.linalg.solve(J, fx)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"singular Jacobian during Newton refinement: {exc}") from exc
        if not np.all(np.isfinite(x)):
            break
        fx = derivative(model, net, x)
    if np.all(np.isfinite(fx)) and np.max(np.abs(fx)) < tol:
        return x
    raise NonConvergenceError(
        f"Newton refinement stalled at max|dx/dt| = {np.max(np.abs(fx)):.3g} "
        f"(target {tol:g}); the system may not be Lyapunov stable")


def find_equilibrium(model: DynamicsModel, net: Network, x0, *,
                     max_time: float = 1e4, newton_tol: float = 1e-13,
                     max_newton: int = 50) -> np.ndarray:
    """Integrate toward the attracting fixed point, then polish with Newton.

    If the integration phase diverges or runs out of time, Newton is tried
    directly from ``x0`` so that unstable fixed points can still be located
    and handed to :func:`check_stability`.
    """
    x = _check_state(net, x0).copy()
    n = net.n
    fx = vector_field(model, net)
    target = 1e-10 * n
    h = _stable_step(model, net, x)
    t = 0.0
    chunk = 200
    converged = False
    try:
        while t < max_time:
            if np.linalg.norm(fx(x)) < target:
                converged = True
                break
            _, x = _rk4_steps(fx, x, h, chunk, chunk, t0=t)
            t += chunk * h
    except DivergenceError:
        converged = False
    if converged:
        return _newton(model, net, x, newton_tol, max_newton)
    log.info("integration did not settle within t=%g; trying Newton from x0", max_time)
    return _newton(model, net, _check_state(net, x0).copy(), newton_tol, max_newton)


def check_stability(model: DynamicsModel, net: Network, equilibrium) -> StabilityReport:
    from .spectral import jacobian

    op = jacobian(model, net, equilibrium)
    try:
        eig = np.linalg.eigvals(op.matrix)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"eigenvalue computation failed: {exc}") from exc
    max_re = float(np.max(eig.real))
    stable = max_re <= MARGINAL_TOL
    if stable and max_re > -MARGINAL_TOL:
        warnings.warn(f"marginally stable equilibrium (max Re = {max_re:.3g})",
                      RuntimeWarning, stacklevel=2)
    return StabilityReport(np.array(op.equilibrium), max_re, stable)


def sample_stable_model(kind: str, net: Network, seed: int, *,
                        B_range=(0.5, 1.5), F_range=(0.5, 1.5),
                        R_scale: float = 2.0, min_margin: float = 0.05,
                        max_halvings: int = 60):
    """Draw random admissible parameters for ``kind``.

    ``B`` (and ``F`` for MAK) are uniform on their ranges; ``R`` is uniform
    on ``[0, R_scale * B / rho(W)]`` and is halved until the equilibrium
    exists and its Jacobian has spectral margin at least ``min_margin * B``.
    Returns ``(model, equilibrium, report)``.
    """
    rng = np.random.default_rng(seed)
    B = float(rng.uniform(*B_range))
    F = float(rng.uniform(*F_range)) if kind.upper() == "MAK" else 0.0
    rho = float(np.max(np.abs(np.linalg.eigvals(net.adjacency))))
    R = float(rng.uniform(0.0, R_scale * B / max(rho, 1e-12)))
    for _ in range(max_halvings):
        model = DynamicsModel(kind, B=B, R=R, F=F)
        x_start = np.full(net.n, F / B)
        try:
            eq = find_equilibrium(model, net, x_start)
            report = check_stability(model, net, eq)
        except (NonConvergenceError, DivergenceError):
            report = None
        if report is not None and report.spectral_margin >= min_margin * B:
            if model.kind != "MAK" or np.all(eq > 0):
                return model, eq, report
        R *= 0.5
    raise StabilityError(f"no stable {kind} parameters found for seed {seed}")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.n
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i}" for i in range(n)])
        for t, row in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> Trajectory:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not rows or len(rows) < 2:
        raise FormatError(f"{path}: trajectory file has no data rows")
    header = rows[0]
    n = len(header) - 1
    if header[0] != "t" or header[1:] != [f"x_{i}" for i in range(n)]:
        raise FormatError(f"{path}: header must be t,x_0,...,x_{{n-1}}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != n + 1:
        raise FormatError(f"{path}: ragged rows")
    return Trajectory(data[:, 0], data[:, 1:], {"source": str(Path(path))})
