"""Linearization and graph-spectral machinery.

The graph operator is the Jacobian ``A`` of the network dynamics at its
equilibrium.  Its eigenvectors are the graph Fourier basis and its
eigenvalues the graph frequencies; a frequency ``lam`` is "low" (smooth)
when ``|lam - |lam|_max|`` is small.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsModel, derivative, jacobian_matrix
from .errors import (DegenerateError, DimensionError, InfeasibleBandError,
                     NonDiagonalizableError, ParameterError, SymmetryError)
from .graph import Network

__all__ = [
    "LinearOperator", "SpectralBasis", "BandSpec", "jacobian", "jacobian_fd",
    "decompose", "gft", "igft", "variation", "band_frequency_set",
    "omega_for_band_size", "make_bandlimited_init", "support_bandwidth",
    "real_band_basis",
]

COND_LIMIT = 1e10
DEFAULT_REL_TOL = 1e-9
BAND_NUDGE = 1e-12


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearOperator:
    matrix: np.ndarray
    equilibrium: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ParameterError("operator has non-finite entries")
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "equilibrium", _frozen(np.asarray(self.equilibrium, float)))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigendecomposition ``A = basis @ diag(eigenvalues) @ inverse_basis``.

    ``order`` lists eigen-indices smoothest first; ``partner[j]`` is the
    index of the complex conjugate of eigenvalue ``j`` (``j`` itself for
    real eigenvalues).
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    inverse_basis: np.ndarray
    lambda_max_mag: float
    order: np.ndarray
    partner: np.ndarray
    condition: float

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def distances(self) -> np.ndarray:
        """``|lambda_j - |lambda|_max|`` for every eigenvalue."""
        return np.abs(self.eigenvalues - self.lambda_max_mag)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "lambda_max_mag": self.lambda_max_mag,
            "order": [int(i) for i in self.order],
            "condition_number": self.condition,
        }


@dataclass(frozen=True)
class BandSpec:
    """A set of retained graph-frequency indices.

    ``omega`` is the bandwidth that produced the set, or ``None`` for a
    pseudo-band built from coefficient magnitudes.
    """

    omega: float | None
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(int(i) for i in self.indices)))

    def __len__(self):
        return len(self.indices)

    def to_dict(self) -> dict:
        return {"omega": self.omega, "indices": list(self.indices)}


def jacobian(model: DynamicsModel, net: Network, x_eq) -> LinearOperator:
    x_eq = np.asarray(x_eq, dtype=float)
    return LinearOperator(jacobian_matrix(model, net, x_eq), x_eq)


def jacobian_fd(model: DynamicsModel, net: Network, x_eq, h: float | None = None) -> LinearOperator:
    """Central finite-difference Jacobian, built column by column."""
    x_eq = np.asarray(x_eq, dtype=float)
    if h is None:
        h = 1e-6 * max(1.0, float(np.max(np.abs(x_eq))))
    if not h > 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")
    n = net.n
    J = np.empty((n, n))
    for m in range(n):
        e = np.zeros(n)
        e[m] = h
        J[:, m] = (derivative(model, net, x_eq + e) - derivative(model, net, x_eq - e)) / (2 * h)
    return LinearOperator(J, x_eq)


def _conjugate_partners(eigenvalues: np.ndarray) -> np.ndarray:
    n = eigenvalues.size
    scale = max(1.0, float(np.max(np.abs(eigenvalues)))) if n else 1.0
    partner = np.arange(n)
    is_real = np.abs(eigenvalues.imag) <= 1e-12 * scale
    taken = np.zeros(n, dtype=bool)
    for j in range(n):
        if is_real[j] or taken[j]:
            continue
        gap = np.abs(eigenvalues - np.conj(eigenvalues[j]))
        gap[is_real | taken] = np.inf
        gap[j] = np.inf
        k = int(np.argmin(gap))
        if not np.isfinite(gap[k]) or gap[k] > 1e-8 * scale:
            raise NonDiagonalizableError(f"eigenvalue {eigenvalues[j]} has no conjugate partner")
        partner[j], partner[k] = k, j
        taken[j] = taken[k] = True
    return partner


def decompose(op: LinearOperator) -> SpectralBasis:
    A = op.matrix
    try:
        lam, vec = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise NonDiagonalizableError(f"eigendecomposition failed: {exc}") from exc
    lam = lam.astype(complex)
    vec = vec.astype(complex)
    partner = _conjugate_partners(lam)
    real = partner == np.arange(lam.size)
    lam[real] = lam[real].real

    vec /= np.linalg.norm(vec, axis=0)
    # rotate the largest entry of each column onto the positive real axis
    lead = vec[np.argmax(np.abs(vec), axis=0), np.arange(lam.size)]
    vec *= np.conj(lead) / np.abs(lead)
    vec[:, real] = vec[:, real].real

    cond = float(np.linalg.cond(vec))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NonDiagonalizableError(
            f"eigenvector matrix condition number {cond:.3g} exceeds {COND_LIMIT:g}; "
            "the operator is (numerically) not diagonalizable")
    inv = np.linalg.inv(vec)
    lam_max = float(np.max(np.abs(lam)))
    dist = np.abs(lam - lam_max)
    order = np.argsort(dist, kind="stable")
    return SpectralBasis(_frozen(lam), _frozen(vec), _frozen(inv), lam_max,
                         _frozen(order), _frozen(partner), cond)


def gft(basis: SpectralBasis, y) -> np.ndarray:
    """Graph Fourier coefficients ``inverse_basis @ y`` (works column-wise on matrices)."""
    y = np.asarray(y)
    if y.shape[0] != basis.n:
        raise DimensionError(f"signal has {y.shape[0]} entries, basis has {basis.n}")
    return basis.inverse_basis @ y


def igft(basis: SpectralBasis, coeffs, real: bool = True) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    if coeffs.shape[0] != basis.n:
        raise DimensionError(f"got {coeffs.shape[0]} coefficients, basis has {basis.n}")
    y = basis.basis @ coeffs
    if not real:
        return y
    residue = float(np.max(np.abs(y.imag))) if y.size else 0.0
    if residue > 1e-9 * max(float(np.linalg.norm(y)), 1e-300):
        raise SymmetryError(
            f"synthesized signal has imaginary residue {residue:.3g}; "
            "coefficients are not conjugate-symmetric")
    return np.ascontiguousarray(y.real)


def variation(basis: SpectralBasis, op: LinearOperator, y) -> float:
    """Half the squared distance between ``y`` and its normalized shift."""
    if basis.lambda_max_mag == 0:
        raise DegenerateError("operator has |lambda|_max = 0; variation is undefined")
    y = np.asarray(y)
    r = y - (op.matrix @ y) / basis.lambda_max_mag
    return 0.5 * float(np.vdot(r, r).real)


def _close_pairs(basis: SpectralBasis, idx: set) -> set:
    missing = {int(basis.partner[j]) for j in idx} - idx
    if missing:
        warnings.warn(f"band splits conjugate pairs; adding partners {sorted(missing)}",
                      RuntimeWarning, stacklevel=3)
    return idx | missing


def band_frequency_set(basis: SpectralBasis, omega: float) -> BandSpec:
    omega = float(omega)
    if not omega >= 0:
        raise ParameterError(f"bandwidth must be non-negative, got {omega}")
    idx = set(np.flatnonzero(basis.distances < omega).tolist())
    return BandSpec(omega, tuple(_close_pairs(basis, idx)))


def omega_for_band_size(basis: SpectralBasis, size: int) -> float:
    """A bandwidth whose frequency set has exactly ``size`` members.

    Returns the midpoint between the ``size``-th and next distinct
    distance (or ``inf`` when ``size == n``).
    """
    if not 1 <= size <= basis.n:
        raise ParameterError(f"band size must lie in 1..{basis.n}, got {size}")
    d = np.sort(basis.distances)
    if size == basis.n:
        return float("inf")
    lo, hi = d[size - 1], d[size]
    if not hi > lo:
        raise InfeasibleBandError(
            f"no bandwidth selects exactly {size} frequencies "
            "(tied distances, e.g. a conjugate pair, straddle the cut)")
    return float(0.5 * (lo + hi))


def make_bandlimited_init(basis: SpectralBasis, omega, amplitude: float, seed: int,
                          band: BandSpec | None = None) -> np.ndarray:
    """Random real signal supported exactly on the band of ``omega``.

    Coefficients are standard normal (complex normal on conjugate pairs,
    mirrored onto the partner) and the result is rescaled to 2-norm
    ``amplitude``.
    """
    if not amplitude > 0:
        raise ParameterError(f"amplitude must be positive, got {amplitude}")
    if band is None:
        band = band_frequency_set(basis, omega)
    if not band.indices:
        raise InfeasibleBandError(f"band for omega={omega} is empty")
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(basis.n, dtype=complex)
    for j in band.indices:
        k = int(basis.partner[j])
        if k == j:
            coeffs[j] = rng.standard_normal()
        elif j < k:
            c = complex(rng.standard_normal(), rng.standard_normal())
            coeffs[j], coeffs[k] = c, np.conj(c)
    y = igft(basis, coeffs)
    return y * (amplitude / np.linalg.norm(y))


def support_bandwidth(basis: SpectralBasis, y, rel_tol: float = DEFAULT_REL_TOL):
    """Smallest bandwidth containing the GFT support of ``y``.

    Returns ``(omega_c, indices)``; a coefficient counts as supported when
    its magnitude is at least ``rel_tol`` times the largest one.  The
    threshold is raised to the roundoff level of the basis (``64 eps``
    times its condition number) when that is larger.
    """
    coef = np.abs(gft(basis, y))
    peak = float(np.max(coef)) if coef.size else 0.0
    if peak == 0:
        raise DegenerateError("signal is zero; it has no bandwidth")
    tol = max(rel_tol, 64 * np.finfo(float).eps * basis.condition)
    idx = np.flatnonzero(coef >= tol * peak)
    idx = np.array(sorted(_close_pairs(basis, set(idx.tolist()))))
    d = float(np.max(basis.distances[idx]))
    return d + BAND_NUDGE * max(1.0, d), tuple(int(i) for i in idx)


def real_band_basis(basis: SpectralBasis, indices) -> np.ndarray:
    """Real orthonormal recombination of the band columns.

    Each conjugate pair ``(g, conj(g))`` becomes ``(sqrt2 Re g, sqrt2 Im g)``,
    a unitary change of basis, so row-subset singular values are unchanged.
    """
    indices = list(indices)
    G = basis.basis[:, indices]
    out = np.empty(G.shape)
    pos = {j: c for c, j in enumerate(indices)}
    for c, j in enumerate(indices):
        k = int(basis.partner[j])
        if k == j:
            out[:, c] = G[:, c].real
        elif k not in pos:
            raise ParameterError(f"index set splits conjugate pair ({j}, {k})")
        elif j < k:
            out[:, c] = np.sqrt(2.0) * G[:, c].real
        else:
            out[:, c] = np.sqrt(2.0) * G[:, c].imag
    return out
