"""RMSE sweeps over sampling frequency and sample-set size.

One *instance* (network, model, equilibrium, eigenbasis, initial
deviation, ground-truth trajectory) is prepared per configuration and
shared read-only by every cell of the sweep.  A cell fixes the sampling
frequency ``F_s = fs_factor * Omega_c / pi`` and the number of sampled
nodes, recovers the trajectory on the reference grid and scores it.

All time grids live on one integer lattice of step ``h = pi / (L Omega_c)``
so that samples and evaluation instants are exact rows of the
ground-truth integration.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from functools import reduce
from pathlib import Path

import numpy as np
import yaml

from .dynamics import (DynamicsModel, Trajectory, check_stability,
                       find_equilibrium, integrate, sample_stable_model)
from .errors import (GridError, NetSamplingError, ParameterError,
                     StabilityError)
from .graph import Network, generate_network
from .sampling import (SampleRecord, arbitrary_init_projection, build_plan,
                       joint_recover, time_cutoff_arbitrary,
                       time_cutoff_bandlimited)
from .spectral import (BandSpec, decompose, gft, jacobian,
                       make_bandlimited_init, omega_for_band_size,
                       real_band_basis, support_bandwidth)

__all__ = ["SweepConfig", "Instance", "CellResult", "SweepResult", "rmse",
           "prepare_instance", "run_cell", "evaluate_cell", "run_sweep",
           "load_config", "preset_path", "PRESETS"]

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("F_s", "S_size", "rmse", "omega_c", "Omega_c", "rank_cert",
                 "clamped", "failed")
PRESETS = ("fig3", "fig4", "fig5", "fig3-n500", "fig4-n500", "fig5-n500")


@dataclass
class SweepConfig:
    """Everything needed to rebuild a sweep bit-for-bit.

    ``params`` set to ``None`` draws admissible model parameters from
    ``seed``; an ``R_rel`` entry gives the coupling in units of
    ``B / rho(W)``.  The initial deviation is bandlimited (from ``omega`` or,
    alternatively, the number of frequencies ``band_size``) or arbitrary
    (i.i.d. normal).  Its norm is ``amplitude``, or ``amplitude_ratio``
    times the equilibrium norm when that is given.
    """

    model: str = "PD"
    params: dict | None = None
    n: int = 100
    edge_probability: float = 0.08
    directed: bool = True
    init: str = "bandlimited"
    omega: float | None = None
    band_size: int | None = 10
    amplitude: float = 1.0
    amplitude_ratio: float | None = None
    epsilon_rel: float = 1e-3
    fs_factors: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    sample_sizes: list = field(default_factory=lambda: [2, 4, 6, 8, 10, 12, 16, 20])
    horizon: float | None = None
    eval_factor: float = 4.0
    decay: float = 1e-10
    substeps: int = 1
    seed: int = 0
    network_seed: int | None = None
    benchmark: bool = True

    def __post_init__(self):
        self.model = str(self.model).upper()
        if self.omega == "arbitrary":
            self.init, self.omega = "arbitrary", None
        if self.init not in ("bandlimited", "arbitrary"):
            raise ParameterError(f"init must be 'bandlimited' or 'arbitrary', got {self.init!r}")
        self.fs_factors = [float(f) for f in self.fs_factors]
        self.sample_sizes = [int(s) for s in self.sample_sizes]
        for name, grid in (("fs_factors", self.fs_factors), ("sample_sizes", self.sample_sizes)):
            if not grid:
                raise ParameterError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ParameterError(f"{name} must be strictly ascending")
        if min(self.fs_factors) <= 0:
            raise ParameterError("fs_factors must be positive")
        if min(self.sample_sizes) < 1 or max(self.sample_sizes) > self.n:
            raise ParameterError(f"sample_sizes must lie in 1..{self.n}")
        if self.init == "bandlimited" and self.omega is None and self.band_size is None:
            raise ParameterError("a bandlimited init needs omega or band_size")
        if not (self.epsilon_rel > 0 and self.eval_factor > 0 and self.substeps >= 1):
            raise ParameterError("epsilon_rel, eval_factor and substeps must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> SweepConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ParameterError(f"{path}: cannot read sweep config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParameterError(f"{path}: sweep config must be a mapping")
    return SweepConfig.from_dict(doc)


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ParameterError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return Path(__file__).with_name("presets") / f"{name}.yaml"


def rmse(reference: Trajectory, recovered, horizon: float | None = None) -> float:
    """Time- and node-averaged RMS error on a uniform grid covering ``[0, T)``."""
    recovered = np.asarray(recovered, dtype=float)
    if recovered.shape != reference.states.shape:
        raise GridError(f"recovered shape {recovered.shape} differs from "
                        f"reference {reference.states.shape}")
    times = reference.times
    if times.size < 2:
        raise GridError("need at least two grid points")
    dt = times[1] - times[0]
    if np.max(np.abs(np.diff(times) - dt)) > 1e-9 * max(dt, times[-1]):
        raise GridError("reference grid is not uniform")
    T = times.size * dt if horizon is None else float(horizon)
    N = reference.n
    sq = float(np.sum((recovered - reference.states) ** 2))
    return math.sqrt(dt / (N * T) * sq)


@dataclass
class Instance:
    config: SweepConfig
    network: Network
    model: DynamicsModel
    equilibrium: np.ndarray
    basis: object
    y0: np.ndarray
    band: BandSpec | None
    omega_c: float | None
    Omega_c: float
    clamped: bool
    epsilon: float
    lattice: int
    step: float
    eval_stride: int
    eval_count: int
    truth: np.ndarray  # deviations y on the fine lattice, (steps + 1, n)

    @property
    def eval_step(self) -> float:
        return self.eval_stride * self.step

    @property
    def horizon(self) -> float:
        return self.eval_count * self.eval_step

    @property
    def eval_times(self) -> np.ndarray:
        return np.arange(self.eval_count) * self.eval_step

    def reference(self) -> Trajectory:
        rows = self.truth[: self.eval_count * self.eval_stride: self.eval_stride]
        return Trajectory(self.eval_times, rows + self.equilibrium)

    def metadata(self) -> dict:
        return {
            "Omega_c": self.Omega_c,
            "omega_c": self.omega_c,
            "band_size": None if self.band is None else len(self.band),
            "band": None if self.band is None else list(self.band.indices),
            "clamped": self.clamped,
            "epsilon": self.epsilon,
            "y0_norm": float(np.linalg.norm(self.y0)),
            "equilibrium_norm": float(np.linalg.norm(self.equilibrium)),
            "horizon": self.horizon,
            "eval_step": self.eval_step,
            "integration_step": self.step,
            "model": self.model.kind,
            "params": self.model.params(),
            "seed": self.config.seed,
            "init": self.config.init,
            "lambda_max_mag": self.basis.lambda_max_mag,
            "condition_number": self.basis.condition,
        }


def _lcm(values):
    return reduce(lambda a, b: a * b // math.gcd(a, b), values, 1)


def _lattice(config: SweepConfig):
    """Fine-lattice size ``L`` per time unit ``pi / Omega_c`` and the grid strides."""
    fracs = [Fraction(f).limit_denominator(1 << 20) for f in config.fs_factors]
    ev = Fraction(config.eval_factor).limit_denominator(1 << 20)
    for given, fr in zip(config.fs_factors + [config.eval_factor], fracs + [ev]):
        if abs(float(fr) - given) > 1e-12 * given:
            raise ParameterError(f"rate factor {given} is not a simple rational number")
    L = _lcm([fr.numerator for fr in fracs + [ev]]) * config.substeps
    strides = {f: int(L * fr.denominator // fr.numerator)
               for f, fr in zip(config.fs_factors, fracs)}
    return L, strides, int(L * ev.denominator // ev.numerator)


def prepare_instance(config: SweepConfig) -> Instance:
    cfg = config
    net_seed = cfg.seed if cfg.network_seed is None else cfg.network_seed
    net = generate_network(cfg.n, cfg.edge_probability, net_seed, directed=cfg.directed)
    if cfg.params is None:
        model, eq, report = sample_stable_model(cfg.model, net, cfg.seed)
    else:
        params = dict(cfg.params)
        if "R_rel" in params:
            # coupling given relative to B / spectral radius of the adjacency
            rho = float(np.max(np.abs(np.linalg.eigvals(net.adjacency))))
            if rho == 0:
                raise ParameterError("R_rel is undefined for an adjacency with spectral radius 0")
            params["R"] = params.pop("R_rel") * params["B"] / rho
        model = DynamicsModel(cfg.model, **params)
        start = np.full(net.n, model.F / model.B)
        eq = find_equilibrium(model, net, start)
        report = check_stability(model, net, eq)
    if not report.stable:
        raise StabilityError(
            f"model is not stable: max Re eigenvalue {report.max_real_eigenvalue:.4g}")
    op = jacobian(model, net, eq)
    basis = decompose(op)

    amplitude = cfg.amplitude
    if cfg.amplitude_ratio is not None:
        amplitude = cfg.amplitude_ratio * float(np.linalg.norm(eq))
    if cfg.init == "bandlimited":
        omega = cfg.omega if cfg.omega is not None else omega_for_band_size(basis, cfg.band_size)
        y0 = make_bandlimited_init(basis, omega, amplitude, cfg.seed)
        omega_c, idx = support_bandwidth(basis, y0)
        band = BandSpec(omega_c, idx)
        epsilon = cfg.epsilon_rel * float(np.linalg.norm(y0))
        cut = time_cutoff_bandlimited(basis, band, float(np.linalg.norm(y0)), epsilon)
        slowest = float(np.max(basis.eigenvalues[list(idx)].real))
    else:
        rng = np.random.default_rng(cfg.seed)
        y0 = rng.standard_normal(net.n)
        y0 *= amplitude / np.linalg.norm(y0)
        band, omega_c = None, None
        epsilon = cfg.epsilon_rel * float(np.linalg.norm(y0))
        cut = time_cutoff_arbitrary(basis, float(np.linalg.norm(y0)), epsilon)
        slowest = float(np.max(basis.eigenvalues.real))
    if not slowest < 0:
        raise StabilityError("a mode of the initial condition does not decay")

    L, strides, eval_stride = _lattice(cfg)
    unit = math.pi / cut.Omega_c
    h = unit / L
    # keep the RK4 step well inside its stability region
    stiff = float(np.max(np.abs(basis.eigenvalues)))
    if h * stiff > 0.05:
        refine = math.ceil(h * stiff / 0.05)
        L *= refine
        h /= refine
        strides = {f: s * refine for f, s in strides.items()}
        eval_stride *= refine
    if cfg.horizon is None:
        target = (math.log(1.0 / cfg.decay) + math.log(basis.condition)) / -slowest
    else:
        target = float(cfg.horizon)
    eval_count = max(2, math.ceil(target / (eval_stride * h) - 1e-9))
    # samples continue past the scoring window so the sinc tail is not cut at T
    sample_span = math.ceil(1.2 * eval_count * eval_stride)
    block = _lcm(list(strides.values()) + [eval_stride])
    steps = math.ceil(sample_span / block) * block
    record = math.gcd(*(list(strides.values()) + [eval_stride]))

    traj = integrate(model, net, eq + y0, h, steps * h, record_every=record)
    truth = traj.states - eq
    inst = Instance(cfg, net, model, eq, basis, y0, band, omega_c, cut.Omega_c,
                    cut.clamped, epsilon, L // record, h * record,
                    eval_stride // record, eval_count, truth)
    inst._strides = {f: s // record for f, s in strides.items()}
    log.info("instance ready: Omega_c=%.6g, T=%.4g, %d lattice rows",
             inst.Omega_c, inst.horizon, truth.shape[0])
    return inst


@dataclass
class CellResult:
    fs_factor: float
    F_s: float
    S_size: int
    rmse: float
    omega_c: float | None
    Omega_c: float
    rank_cert: float
    clamped: bool
    failed: bool
    band_size: int = 0
    nodes: tuple = ()
    undersampled_graph: bool = False
    undersampled_time: bool = False
    truncation_floor: float = 0.0
    truncation_error: float = 0.0
    error: str = ""
    wall_time: float = 0.0

    def csv_row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(v).lower()
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(self.F_s), fmt(self.S_size), fmt(self.rmse), fmt(self.omega_c),
                fmt(self.Omega_c), fmt(self.rank_cert), fmt(self.clamped), fmt(self.failed)]


def _stride_for(inst: Instance, fs_factor: float) -> int:
    strides = getattr(inst, "_strides", {})
    if fs_factor in strides:
        return strides[fs_factor]
    fr = Fraction(fs_factor).limit_denominator(1 << 20)
    s = inst.lattice * fr.denominator / fr.numerator
    if abs(s - round(s)) > 1e-9 or round(s) < 1:
        raise GridError(f"F_s factor {fs_factor} does not sit on the instance lattice")
    return int(round(s))


def evaluate_cell(inst: Instance, fs_factor: float, S_size: int) -> CellResult:
    """Score one (sampling frequency, sample size) cell on a prepared instance."""
    t0 = time.perf_counter()
    F_s = fs_factor * inst.Omega_c / math.pi
    base = dict(fs_factor=float(fs_factor), F_s=F_s, S_size=int(S_size),
                omega_c=inst.omega_c, Omega_c=inst.Omega_c, clamped=inst.clamped)
    try:
        y0_norm = float(np.linalg.norm(inst.y0))
        floor = trunc = 0.0
        if inst.band is not None:
            band = inst.band
            arbitrary = False
        else:
            proj = arbitrary_init_projection(inst.basis, inst.y0, S_size)
            band = proj.band
            arbitrary = True
            dropped = inst.basis.basis @ (gft(inst.basis, inst.y0) - proj.coeffs)
            trunc = float(np.linalg.norm(dropped))
            R = real_band_basis(inst.basis, band.indices)
            resid = dropped.real - R @ np.linalg.lstsq(R, dropped.real, rcond=None)[0]
            floor = float(np.linalg.norm(resid)) / math.sqrt(inst.network.n * inst.eval_count)
        plan = build_plan(inst.basis, inst.equilibrium, band, S_size, y0_norm=y0_norm,
                          epsilon=inst.epsilon, F_s=F_s, arbitrary=arbitrary,
                          omega_c=inst.omega_c)
        stride = _stride_for(inst, fs_factor)
        rows = inst.truth[::stride][:, list(plan.nodes)]
        record = SampleRecord(plan.nodes, plan.F_s, rows)
        ref = inst.reference()
        rec = joint_recover(plan, record, ref.times, x_domain=True)
        err = rmse(ref, rec)
        return CellResult(**base, rmse=err, rank_cert=plan.rank_certificate, failed=False,
                          band_size=len(band), nodes=plan.nodes,
                          undersampled_graph=plan.undersampled_graph,
                          undersampled_time=plan.undersampled_time,
                          truncation_floor=floor, truncation_error=trunc,
                          wall_time=time.perf_counter() - t0)
    except NetSamplingError as exc:
        log.warning("cell F_s=%g |S|=%d failed: %s", F_s, S_size, exc)
        return CellResult(**base, rmse=float("nan"), rank_cert=float("nan"), failed=True,
                          error=f"{type(exc).__name__}: {exc}",
                          wall_time=time.perf_counter() - t0)


def run_cell(config: SweepConfig, fs_factor: float, S_size: int) -> CellResult:
    """Prepare the instance described by ``config`` and score a single cell."""
    return evaluate_cell(prepare_instance(config), fs_factor, S_size)


@dataclass
class SweepResult:
    cells: list
    metadata: dict

    @property
    def benchmark(self) -> list:
        n = self.metadata["n"]
        return [c for c in self.cells if c.S_size == n]

    def cell(self, fs_factor: float, S_size: int) -> CellResult:
        for c in self.cells:
            if c.fs_factor == fs_factor and c.S_size == S_size:
                return c
        raise KeyError((fs_factor, S_size))

    def curve(self, S_size: int) -> tuple[np.ndarray, np.ndarray]:
        """``(fs_factors, rmse)`` at fixed sample size."""
        cs = [c for c in self.cells if c.S_size == S_size]
        return np.array([c.fs_factor for c in cs]), np.array([c.rmse for c in cs])

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.failed]

    def truncation_report(self) -> list[dict]:
        """Measured truncation error of the mode projection next to the
        ``||y0|| (N - |S|) / N`` reading of its bound, one row per sample size."""
        n = self.metadata["n"]
        y0_norm = self.metadata["y0_norm"]
        rows, seen = [], set()
        for c in self.cells:
            if c.failed or c.S_size in seen:
                continue
            seen.add(c.S_size)
            rows.append({"S_size": c.S_size, "truncation_error": c.truncation_error,
                         "bound": y0_norm * (n - c.S_size) / n,
                         "rmse_floor": c.truncation_floor})
        return rows

    def to_csv(self) -> str:
        lines = [",".join(SWEEP_COLUMNS)]
        lines += [",".join(c.csv_row()) for c in self.cells]
        return "\n".join(lines) + "\n"

    def write(self, path) -> list[Path]:
        """Write the sweep CSV and one plot-data file per figure panel."""
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        stem = path.with_suffix("")
        fs = sorted({c.F_s for c in self.cells})
        sizes = sorted({c.S_size for c in self.cells})
        out = [path]
        panels = {
            "a": ("# F_s S_size rmse", [[c] for c in self.cells], ("F_s", "S_size", "rmse")),
            "b": ("# F_s rmse S_size  (one block per S_size)",
                  [[c for c in self.cells if c.S_size == s] for s in sizes],
                  ("F_s", "rmse", "S_size")),
            "c": ("# S_size rmse F_s  (one block per F_s)",
                  [[c for c in self.cells if c.F_s == f] for f in fs],
                  ("S_size", "rmse", "F_s")),
        }
        for key, (header, blocks, cols) in panels.items():
            p = Path(f"{stem}_panel_{key}.dat")
            text = [header]
            for i, block in enumerate(blocks):
                if i and key != "a":
                    text.append("")
                for c in block:
                    text.append(" ".join(repr(float(getattr(c, col))) if col != "S_size"
                                         else str(c.S_size) for col in cols))
            p.write_text("\n".join(text) + "\n", encoding="utf-8")
            out.append(p)
        if self.metadata.get("init") == "arbitrary":
            p = Path(f"{stem}_truncation.dat")
            text = ["# S_size truncation_error bound rmse_floor"]
            text += [f"{r['S_size']} {r['truncation_error']!r} {r['bound']!r} {r['rmse_floor']!r}"
                     for r in self.truncation_report()]
            p.write_text("\n".join(text) + "\n", encoding="utf-8")
            out.append(p)
        return out


def run_sweep(config: SweepConfig, jobs: int = 1, instance: Instance | None = None) -> SweepResult:
    """Evaluate every (F_s, |S|) cell plus the all-nodes benchmark column.

    Cells run on a thread pool of ``jobs`` workers over the shared
    instance; results are returned F_s-major regardless of completion order.
    """
    inst = prepare_instance(config) if instance is None else instance
    sizes = list(config.sample_sizes)
    if config.benchmark and config.n not in sizes:
        sizes.append(config.n)
    grid = [(f, s) for f in config.fs_factors for s in sizes]
    if jobs <= 1:
        cells = [evaluate_cell(inst, f, s) for f, s in grid]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(lambda fs: evaluate_cell(inst, *fs), grid))
    meta = inst.metadata()
    meta["n"] = config.n
    return SweepResult(cells, meta)
