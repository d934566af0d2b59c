"""Fixed node sampling sets, time cutoffs and joint time/graph recovery.

A :class:`SamplingPlan` fixes which nodes are observed (chosen once from
the spectral basis and never revisited), the matrix ``phi`` that lifts a
snapshot on those nodes back to the whole network, and the sampling rate.
Recovery of a sampled trajectory is ``phi @ Y_S @ Psi(t)`` where ``Psi``
holds the sinc interpolation weights of the uniform time samples.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.signal import fftconvolve

from .errors import (DimensionError, DivergentTransformError, FormatError,
                     GridError, InfeasibleBandError, ParameterError)
from .spectral import BandSpec, SpectralBasis, gft, real_band_basis

__all__ = [
    "SamplingPlan", "SampleRecord", "TimeCutoff", "Projection",
    "select_sampling_set", "brute_force_sampling_set", "reconstruction_matrix",
    "recover_snapshot", "analytic_fourier", "time_cutoff_bandlimited",
    "time_cutoff_upperbound", "time_cutoff_arbitrary", "sinc_reconstruct",
    "sinc_interpolate", "joint_recover", "arbitrary_init_projection",
    "build_plan", "save_plan", "load_plan", "sample_trajectory",
    "write_sample_csv", "read_sample_csv",
]

RANK_TOL = 1e-9
_SVD_BATCH_ELEMS = 4_000_000


class TimeCutoff(NamedTuple):
    Omega_c: float
    clamped: bool


class Projection(NamedTuple):
    band: BandSpec
    coeffs: np.ndarray


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    nodes: tuple
    band: BandSpec
    phi: np.ndarray
    omega_c: float | None
    Omega_c: float
    F_s: float
    epsilon: float
    rank_certificate: float
    equilibrium: np.ndarray
    clamped: bool = False
    undersampled_time: bool = False
    undersampled_graph: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        phi.setflags(write=False)
        eq = np.array(self.equilibrium, dtype=float)
        eq.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "equilibrium", eq)
        object.__setattr__(self, "nodes", tuple(int(i) for i in self.nodes))
        if phi.shape != (eq.size, len(self.nodes)):
            raise DimensionError(f"phi has shape {phi.shape}, expected "
                                 f"({eq.size}, {len(self.nodes)})")
        if not self.F_s > 0:
            raise ParameterError(f"sampling frequency must be positive, got {self.F_s}")

    @property
    def n(self) -> int:
        return self.equilibrium.size

    def with_rate(self, F_s: float) -> "SamplingPlan":
        """Same nodes and lifting matrix at a different sampling frequency."""
        return replace(self, F_s=float(F_s),
                       undersampled_time=F_s < self.Omega_c / math.pi * (1 - 1e-12))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "nodes": list(self.nodes),
            "band": self.band.to_dict(),
            "omega_c": self.omega_c,
            "Omega_c": self.Omega_c,
            "F_s": self.F_s,
            "epsilon": self.epsilon,
            "rank_certificate": self.rank_certificate,
            "clamped": self.clamped,
            "undersampled_time": self.undersampled_time,
            "undersampled_graph": self.undersampled_graph,
            "equilibrium": self.equilibrium.tolist(),
            "phi": self.phi.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplingPlan":
        try:
            band = BandSpec(doc["band"]["omega"], doc["band"]["indices"])
            return cls(nodes=doc["nodes"], band=band, phi=np.array(doc["phi"], float),
                       omega_c=doc["omega_c"], Omega_c=float(doc["Omega_c"]),
                       F_s=float(doc["F_s"]), epsilon=float(doc["epsilon"]),
                       rank_certificate=float(doc["rank_certificate"]),
                       equilibrium=np.array(doc["equilibrium"], float),
                       clamped=bool(doc.get("clamped", False)),
                       undersampled_time=bool(doc.get("undersampled_time", False)),
                       undersampled_graph=bool(doc.get("undersampled_graph", False)),
                       meta=doc.get("meta", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed plan document: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """Uniform samples ``values[k] = y_S(k / F_s)`` (deviations from equilibrium)."""

    nodes: tuple
    F_s: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.nodes):
            raise DimensionError(f"values shape {v.shape} does not match {len(self.nodes)} nodes")
        if v.shape[0] == 0:
            raise GridError("sample record is empty")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "nodes", tuple(int(i) for i in self.nodes))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) / self.F_s


# -- graph domain ------------------------------------------------------------

def _smallest_sv_batch(stack: np.ndarray) -> np.ndarray:
    out = np.empty(stack.shape[0])
    per = max(1, _SVD_BATCH_ELEMS // max(1, stack[0].size))
    for lo in range(0, stack.shape[0], per):
        out[lo:lo + per] = np.linalg.svd(stack[lo:lo + per], compute_uv=False)[:, -1]
    return out


def _smallest_sv(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def select_sampling_set(basis: SpectralBasis, band: BandSpec, size: int, *,
                        allow_undersampled: bool = False):
    """Greedy row selection on the band columns of the eigenbasis.

    Each step adds the node whose row maximizes the smallest singular
    value of the grown submatrix (lowest index on ties).  Returns
    ``(nodes, certificate)`` where ``nodes`` is in selection order and
    ``certificate`` is the smallest singular value of the final submatrix.
    With ``allow_undersampled`` a set smaller than the band is accepted and
    the certificate is then its smallest non-trivial singular value.
    """
    k = len(band)
    n = basis.n
    if k < 1:
        raise InfeasibleBandError("band is empty; there is nothing to sample")
    if not 1 <= size <= n:
        raise ParameterError(f"sample size must lie in 1..{n}, got {size}")
    if size < k and not allow_undersampled:
        raise ParameterError(f"sample size {size} is below the band size {k}")
    G = real_band_basis(basis, band.indices)
    if size == n:
        nodes = tuple(range(n))
        cert = _smallest_sv(G)
    else:
        chosen: list[int] = []
        remaining = np.arange(n)
        for _ in range(size):
            base = G[chosen]
            stack = np.concatenate(
                [np.broadcast_to(base, (remaining.size,) + base.shape),
                 G[remaining][:, None, :]], axis=1)
            scores = _smallest_sv_batch(stack)
            pick = int(np.argmax(scores))
            chosen.append(int(remaining[pick]))
            remaining = np.delete(remaining, pick)
        nodes = tuple(chosen)
        cert = _smallest_sv(G[list(nodes)])
    if cert <= RANK_TOL:
        raise InfeasibleBandError(
            f"band of {k} frequencies cannot be resolved from {size} nodes "
            f"(smallest singular value {cert:.3g})")
    return nodes, cert


def brute_force_sampling_set(basis: SpectralBasis, band: BandSpec, size: int):
    """Exhaustive search for the subset with the largest smallest singular value.

    Exponential in ``n``; intended as a test oracle for small graphs.
    """
    G = real_band_basis(basis, band.indices)
    best, best_cert = None, -1.0
    for subset in itertools.combinations(range(basis.n), size):
        cert = _smallest_sv(G[list(subset)])
        if cert > best_cert:
            best, best_cert = subset, cert
    return best, best_cert


def reconstruction_matrix(basis: SpectralBasis, nodes, band: BandSpec) -> np.ndarray:
    """``phi = Gamma_VN @ pinv(Gamma_SN)``, computed by least squares."""
    nodes = list(nodes)
    idx = list(band.indices)
    if not idx:
        raise InfeasibleBandError("band is empty")
    G = basis.basis[:, idx]
    G_S = G[nodes]
    X, _, rank, sv = np.linalg.lstsq(G_S, np.eye(len(nodes)), rcond=None)
    if sv.size == 0 or sv[-1] <= RANK_TOL or rank < min(G_S.shape):
        raise InfeasibleBandError(
            "sampling submatrix is rank deficient; the rank certificate does not hold")
    phi = G @ X
    residue = float(np.max(np.abs(phi.imag)))
    if residue > 1e-9 * max(1.0, float(np.max(np.abs(phi)))):
        raise InfeasibleBandError(f"lifting matrix has imaginary residue {residue:.3g}")
    return np.ascontiguousarray(phi.real)


def recover_snapshot(phi: np.ndarray, y_S) -> np.ndarray:
    y_S = np.asarray(y_S, dtype=float)
    if y_S.shape[0] != phi.shape[1]:
        raise DimensionError(f"got {y_S.shape[0]} samples for {phi.shape[1]} sampled nodes")
    return phi @ y_S


def arbitrary_init_projection(basis: SpectralBasis, y0, budget: int) -> Projection:
    """Keep the ``budget`` largest-magnitude graph Fourier modes of ``y0``.

    Conjugate pairs are kept or dropped together; if only one slot is left
    when a pair comes up, the budget is trimmed by one instead.
    """
    if budget < 1:
        raise ParameterError(f"budget must be at least 1, got {budget}")
    coef = gft(basis, np.asarray(y0, dtype=float))
    mags = np.abs(coef)
    ranked = sorted(range(basis.n), key=lambda j: (-mags[j], j))
    kept: set[int] = set()
    for j in ranked:
        if len(kept) >= budget:
            break
        if j in kept:
            continue
        k = int(basis.partner[j])
        if k == j:
            kept.add(j)
        elif len(kept) + 2 <= budget:
            kept.update((j, k))
        else:
            break
    if not kept:
        raise InfeasibleBandError(
            f"budget {budget} cannot hold the leading conjugate pair of modes")
    truncated = np.zeros_like(coef)
    idx = sorted(kept)
    truncated[idx] = coef[idx]
    return Projection(BandSpec(None, tuple(idx)), truncated)


# -- time domain -------------------------------------------------------------

def analytic_fourier(basis: SpectralBasis, y0_coeffs, band: BandSpec, node: int, Omega):
    """Closed-form ``Y_n(Omega)`` of ``y_n(t) = sum_j gamma_nj c_j exp(lambda_j t)``, t >= 0."""
    idx = np.array(band.indices, dtype=int)
    lam = basis.eigenvalues[idx]
    if np.any(lam.real >= 0):
        raise DivergentTransformError(
            "a supported mode has non-negative real part; the transform diverges")
    w = basis.basis[node, idx] * np.asarray(y0_coeffs)[idx]
    Omega = np.asarray(Omega, dtype=float)
    denom = -lam.real + 1j * (Omega[..., None] - lam.imag)
    return np.sum(w / denom, axis=-1)


def _cutoff(lam: np.ndarray, y0_norm: float, epsilon: float) -> TimeCutoff:
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not y0_norm >= 0:
        raise ParameterError(f"initial norm must be non-negative, got {y0_norm}")
    shift = float(np.max(np.abs(lam.imag)))
    radicand = (y0_norm / epsilon) ** 2 - float(np.min(lam.real)) ** 2
    if radicand < 0:
        return TimeCutoff(shift, True)
    return TimeCutoff(shift + math.sqrt(radicand), False)


def time_cutoff_bandlimited(basis: SpectralBasis, band: BandSpec, y0_norm: float,
                            epsilon: float) -> TimeCutoff:
    """Frequency above which every node's spectrum magnitude is below ``epsilon``.

    When ``y0_norm / epsilon`` is smaller than the largest decay rate the
    square-root term is clamped to zero and ``clamped`` is set.
    """
    if not band.indices:
        raise ParameterError("band is empty")
    return _cutoff(basis.eigenvalues[list(band.indices)], y0_norm, epsilon)


def time_cutoff_arbitrary(basis: SpectralBasis, y0_norm: float, epsilon: float) -> TimeCutoff:
    return _cutoff(basis.eigenvalues, y0_norm, epsilon)


def time_cutoff_upperbound(omega_c: float, lambda_max_mag: float, y0_norm: float,
                           epsilon: float) -> float:
    """Geometric upper bound on the time cutoff in terms of the graph cutoff.

    Branches whose radicand is negative are dropped; if both are, the
    configuration is outside the bound's domain.
    """
    if not (epsilon > 0 and lambda_max_mag > 0):
        raise ParameterError("epsilon and |lambda|_max must be positive")
    L = lambda_max_mag
    branches = []
    r1 = omega_c ** 2 - L ** 2
    if r1 >= 0:
        branches.append(math.sqrt(r1))
    r2 = 4 * L ** 2 - omega_c ** 2
    if r2 >= 0:
        branches.append(omega_c * math.sqrt(r2) / (2 * L))
    if not branches:
        raise ParameterError(
            f"omega_c={omega_c:g} is outside the bound's domain for |lambda|_max={L:g}: "
            "omega_c^2 - |lambda|_max^2 and 4|lambda|_max^2 - omega_c^2 are both negative")
    return min(branches) + y0_norm / epsilon


def sinc_reconstruct(samples, F_s: float, t):
    """Truncated Whittaker–Shannon sum over the available samples ``k = 0..K``."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise GridError("no samples to interpolate")
    if not F_s > 0:
        raise ParameterError("sampling frequency must be positive")
    t = np.asarray(t, dtype=float)
    k = np.arange(samples.size)
    return np.sinc(F_s * t[..., None] - k) @ samples


def _lattice_groups(u: np.ndarray, tol: float = 1e-9, max_groups: int = 256):
    """Split sample-index positions ``u`` into (fraction, members) groups."""
    m = np.floor(u + tol)
    r = u - m
    r[np.abs(r) < tol] = 0.0
    keys = np.round(r / tol).astype(np.int64)
    uniq, inverse = np.unique(keys, return_inverse=True)
    if uniq.size > max_groups:
        return None
    groups = []
    for g in range(uniq.size):
        members = np.flatnonzero(inverse == g)
        groups.append((float(np.mean(r[members])), m[members].astype(np.int64), members))
    return groups


def sinc_interpolate(values: np.ndarray, F_s: float, t) -> np.ndarray:
    """Evaluate ``sum_k values[k] sinc(F_s t - k)`` for many ``t`` and channels.

    ``values`` is ``(K+1, channels)``.  Evaluation times that share a
    fractional sample offset are handled as one FFT convolution, and times
    on the sample grid pick the sample directly (``sinc`` of a non-zero
    integer is zero).  Scattered times fall back to a direct sum.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return sinc_interpolate(values[:, None], F_s, t)[:, 0]
    t = np.asarray(t, dtype=float)
    K1, ch = values.shape
    out = np.zeros((t.size, ch))
    u = F_s * t
    groups = _lattice_groups(u)
    if groups is None:
        k = np.arange(K1)
        step = max(1, 2_000_000 // K1)
        for lo in range(0, t.size, step):
            out[lo:lo + step] = np.sinc(u[lo:lo + step, None] - k) @ values
        return out
    for r, m, members in groups:
        if r == 0.0:
            inside = (m >= 0) & (m < K1)
            out[members[inside]] = values[m[inside]]
            continue
        m0, m1 = int(m.min()), int(m.max())
        d = np.arange(m0 - (K1 - 1), m1 + 1) + r
        full = fftconvolve(values, np.sinc(d)[:, None], axes=0)
        out[members] = full[m - m0 + (K1 - 1)]
    return out


def joint_recover(plan: SamplingPlan, record: SampleRecord, eval_times, *,
                  x_domain: bool = False) -> np.ndarray:
    """Recovered signal at ``eval_times`` as a ``(len(eval_times), n)`` matrix.

    Interpolates each sampled node in time, then lifts every snapshot to
    the whole network with ``plan.phi``.  With ``x_domain`` the equilibrium
    is added back.
    """
    if tuple(record.nodes) != tuple(plan.nodes):
        raise GridError("sample record nodes do not match the plan's sampling set")
    if not math.isclose(record.F_s, plan.F_s, rel_tol=1e-9):
        raise GridError(f"record rate {record.F_s} differs from plan rate {plan.F_s}")
    eval_times = np.asarray(eval_times, dtype=float)
    if eval_times.ndim != 1:
        raise DimensionError("eval_times must be a vector")
    Z = sinc_interpolate(record.values, record.F_s, eval_times)
    y = Z @ plan.phi.T
    if x_domain:
        y = y + plan.equilibrium
    return y


# -- plan assembly and I/O ---------------------------------------------------

def build_plan(basis: SpectralBasis, equilibrium, band: BandSpec, size: int, *,
               y0_norm: float, epsilon: float, F_s: float | None = None,
               fs_factor: float = 1.0, arbitrary: bool = False,
               omega_c: float | None = None, meta: dict | None = None) -> SamplingPlan:
    """Select nodes, build the lifting matrix and the time cutoff for ``band``.

    The sampling frequency is ``F_s`` if given, otherwise
    ``fs_factor * Omega_c / pi``.  ``arbitrary`` switches the cutoff to
    the full spectrum.
    """
    nodes, cert = select_sampling_set(basis, band, size, allow_undersampled=True)
    phi = reconstruction_matrix(basis, nodes, band)
    cut = (time_cutoff_arbitrary(basis, y0_norm, epsilon) if arbitrary
           else time_cutoff_bandlimited(basis, band, y0_norm, epsilon))
    nyquist = cut.Omega_c / math.pi
    if F_s is None:
        F_s = fs_factor * nyquist
    if not F_s > 0:
        raise ParameterError(
            f"sampling frequency {F_s} is not positive (time cutoff {cut.Omega_c})")
    return SamplingPlan(
        nodes=nodes, band=band, phi=phi, omega_c=omega_c, Omega_c=cut.Omega_c,
        F_s=float(F_s), epsilon=float(epsilon), rank_certificate=cert,
        equilibrium=np.asarray(equilibrium, float), clamped=cut.clamped,
        undersampled_time=F_s < nyquist * (1 - 1e-12),
        undersampled_graph=size < len(band), meta=dict(meta or {}))


def save_plan(plan: SamplingPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_plan(path) -> SamplingPlan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot read plan: {exc}") from exc
    return SamplingPlan.from_dict(doc)


def sample_trajectory(times: np.ndarray, states: np.ndarray, plan: SamplingPlan,
                      F_s: float | None = None) -> SampleRecord:
    """Pick the rows of an x-domain trajectory that fall on the ``k / F_s`` grid."""
    F_s = plan.F_s if F_s is None else float(F_s)
    times = np.asarray(times, float)
    step = times[1] - times[0] if times.size > 1 else None
    if step is None:
        raise GridError("trajectory has a single time stamp")
    stride = 1.0 / (F_s * step)
    if abs(stride - round(stride)) > 1e-6 * stride or round(stride) < 1:
        raise GridError(f"sample interval 1/F_s = {1 / F_s:.6g} is not a multiple "
                        f"of the trajectory step {step:.6g}")
    stride = int(round(stride))
    rows = np.asarray(states)[::stride][:, list(plan.nodes)]
    return SampleRecord(plan.nodes, F_s, rows - plan.equilibrium[list(plan.nodes)])


def write_sample_csv(record: SampleRecord, path, plan: SamplingPlan) -> None:
    """Write sensor readings (x-domain) on the ``k / F_s`` grid."""
    readings = record.values + plan.equilibrium[list(record.nodes)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["t"] + [f"node_{i}" for i in record.nodes]) + "\n")
        for t, row in zip(record.times, readings):
            fh.write(",".join([f"{t:.17g}"] + [f"{v:.17g}" for v in row]) + "\n")


def read_sample_csv(path, plan: SamplingPlan) -> SampleRecord:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(lines) < 2:
        raise GridError(f"{path}: sample file has no samples")
    header = lines[0].split(",")
    if header[0] != "t" or not all(h.startswith("node_") for h in header[1:]):
        raise FormatError(f"{path}: header must be t,node_<i>,...")
    try:
        nodes = tuple(int(h[5:]) for h in header[1:])
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(nodes) + 1:
        raise FormatError(f"{path}: ragged sample rows")
    if nodes != plan.nodes:
        raise GridError(f"{path}: sampled nodes {nodes} differ from the plan's {plan.nodes}")
    times = data[:, 0]
    if times.size > 1:
        dt = np.diff(times)
        F_s = 1.0 / float(np.mean(dt))
        if np.max(np.abs(dt * F_s - 1)) > 1e-6 or abs(times[0]) > 1e-12:
            raise GridError(f"{path}: samples are not on a uniform grid starting at 0")
    else:
        F_s = plan.F_s
    if not math.isclose(F_s, plan.F_s, rel_tol=1e-6):
        raise GridError(f"{path}: sample rate {F_s:.9g} differs from plan rate {plan.F_s:.9g}")
    return SampleRecord(nodes, plan.F_s, data[:, 1:] - plan.equilibrium[list(nodes)])
