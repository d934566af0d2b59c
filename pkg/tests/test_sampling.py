import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from conftest import mak_instance, pd_instance
from netsampling.errors import (DivergentTransformError, FormatError, GridError,
                                InfeasibleBandError, ParameterError)
from netsampling.sampling import (SampleRecord, analytic_fourier,
                                  arbitrary_init_projection, brute_force_sampling_set,
                                  build_plan, joint_recover, load_plan, read_sample_csv,
                                  reconstruction_matrix, recover_snapshot, sample_trajectory,
                                  save_plan, select_sampling_set, sinc_interpolate,
                                  sinc_reconstruct, time_cutoff_arbitrary,
                                  time_cutoff_bandlimited, time_cutoff_upperbound,
                                  write_sample_csv)
from netsampling.spectral import (BandSpec, band_frequency_set, gft, make_bandlimited_init,
                                  omega_for_band_size)


def band_of(basis, size):
    return band_frequency_set(basis, omega_for_band_size(basis, size))


@pytest.fixture
def pd_band(pd_small):
    net, model, eq, basis = pd_small
    return basis, eq, band_of(basis, 7)


def test_greedy_set_recovers_band_exactly(pd_band):
    basis, eq, band = pd_band
    nodes, cert = select_sampling_set(basis, band, len(band))
    assert len(set(nodes)) == len(band) and cert > 1e-9
    phi = reconstruction_matrix(basis, nodes, band)
    y = make_bandlimited_init(basis, None, 1.0, 5, band=band)
    np.testing.assert_allclose(recover_snapshot(phi, y[list(nodes)]), y, atol=1e-12)


def test_greedy_is_nested_and_deterministic(pd_band):
    basis, _, band = pd_band
    a, _ = select_sampling_set(basis, band, 10)
    b, _ = select_sampling_set(basis, band, 12)
    assert b[:10] == a
    assert select_sampling_set(basis, band, 10) == select_sampling_set(basis, band, 10)


def test_full_sampling_shortcut(pd_band):
    basis, _, band = pd_band
    nodes, cert = select_sampling_set(basis, band, basis.n)
    assert nodes == tuple(range(basis.n))
    phi = reconstruction_matrix(basis, nodes, band)
    G = basis.basis[:, list(band.indices)]
    # with every node sampled phi is the oblique projector onto the band
    np.testing.assert_allclose(phi @ G, G, atol=1e-12)
    np.testing.assert_allclose(phi @ phi, phi, atol=1e-12)


def test_undersampled_needs_opt_in(pd_band):
    basis, _, band = pd_band
    with pytest.raises(ParameterError):
        select_sampling_set(basis, band, 3)
    nodes, cert = select_sampling_set(basis, band, 3, allow_undersampled=True)
    assert len(nodes) == 3 and cert > 0
    with pytest.raises(InfeasibleBandError):
        select_sampling_set(basis, BandSpec(None, ()), 3)


@pytest.mark.parametrize("seed", [0, 1, 3, 4])
def test_greedy_matches_brute_force_feasibility(seed):
    basis = pd_instance(n=7, p=0.4, seed=seed)[3]
    for size in range(1, 7):
        try:
            band = band_of(basis, size)
        except InfeasibleBandError:
            continue
        _, best = brute_force_sampling_set(basis, band, len(band))
        if best > 1e-9:
            _, cert = select_sampling_set(basis, band, len(band))
            assert cert > 1e-9
            assert cert <= best + 1e-12


def test_single_mode_budget_one(pd_small):
    basis = pd_small[3]
    j = int(np.flatnonzero(basis.partner == np.arange(basis.n))[0])
    y0 = basis.basis[:, j].real
    proj = arbitrary_init_projection(basis, y0, 1)
    assert proj.band.indices == (j,)
    np.testing.assert_allclose((basis.basis @ proj.coeffs).real, y0, atol=1e-12)


def test_arbitrary_projection_keeps_pairs(pd_small):
    basis = pd_small[3]
    y0 = np.random.default_rng(1).normal(size=basis.n)
    coef = gft(basis, y0)
    lead = int(np.argmax(np.abs(coef)))
    if basis.partner[lead] != lead:
        with pytest.raises(InfeasibleBandError):
            arbitrary_init_projection(basis, y0, 1)
    for budget in range(2, basis.n + 1):
        proj = arbitrary_init_projection(basis, y0, budget)
        idx = set(proj.band.indices)
        assert len(idx) in (budget, budget - 1)
        assert {int(basis.partner[j]) for j in idx} == idx
        kept = np.abs(coef[list(idx)]).min()
        dropped = np.delete(np.abs(coef), list(idx))
        if dropped.size and len(idx) == budget:
            assert kept >= dropped.max() - 1e-12
    assert len(arbitrary_init_projection(basis, y0, basis.n).band) == basis.n
    proj = arbitrary_init_projection(basis, y0, basis.n - 2)
    dropped = coef - proj.coeffs
    err = np.linalg.norm(y0 - (basis.basis @ proj.coeffs).real)
    assert err == pytest.approx(np.linalg.norm(basis.basis @ dropped), abs=1e-10)
    with pytest.raises(ParameterError):
        arbitrary_init_projection(basis, y0, 0)


def _quad_transform(basis, coeffs, band, node, Omega):
    idx = list(band.indices)
    w = basis.basis[node, idx] * coeffs[idx]
    lam = basis.eigenvalues[idx]

    def y(t):
        return float(np.real(np.sum(w * np.exp(lam * t))))

    re = quad(y, 0, np.inf, weight="cos", wvar=Omega, limlst=200)[0]
    im = -quad(y, 0, np.inf, weight="sin", wvar=Omega, limlst=200)[0]
    return complex(re, im)


@pytest.mark.parametrize("make", [pd_instance, mak_instance])
def test_analytic_fourier_matches_quadrature(make):
    basis = make(n=12, p=0.3, seed=1)[3]
    band = next(b for b in (band_frequency_set(basis, w) for w in np.sort(basis.distances)[3:] + 1e-9)
                if len(b) >= 4)
    y0 = make_bandlimited_init(basis, None, 1.0, 3, band=band)
    c = gft(basis, y0)
    for node, Omega in [(0, 0.3), (4, 1.7), (9, 4.0)]:
        ref = _quad_transform(basis, c, band, node, Omega)
        got = analytic_fourier(basis, c, band, node, Omega)
        assert abs(got - ref) <= 1e-6 * abs(ref)


def test_analytic_fourier_diverges_for_growing_mode(pd_small):
    basis = pd_small[3]
    band = BandSpec(None, (int(basis.order[0]),))
    lam = np.array(basis.eigenvalues)
    lam[band.indices[0]] = 0.1
    hacked = type(basis)(lam, basis.basis, basis.inverse_basis, basis.lambda_max_mag,
                         basis.order, basis.partner, basis.condition)
    with pytest.raises(DivergentTransformError):
        analytic_fourier(hacked, np.ones(basis.n), band, 0, 1.0)


def test_cutoff_bounds_spectrum(pd_band):
    basis, _, band = pd_band
    y0 = make_bandlimited_init(basis, None, 3.0, 0, band=band)
    c = gft(basis, y0)
    eps = 1e-3 * np.linalg.norm(y0)
    cut = time_cutoff_bandlimited(basis, band, np.linalg.norm(y0), eps)
    assert not cut.clamped
    for sign in (1, -1):
        Y = analytic_fourier(basis, c, band, np.arange(basis.n)[:, None], sign * cut.Omega_c)
        assert np.all(np.abs(Y) <= eps * (1 + 1e-9))
    full = time_cutoff_arbitrary(basis, np.linalg.norm(y0), eps)
    assert full.Omega_c >= np.max(np.abs(basis.eigenvalues.imag))


def test_cutoff_clamps_when_threshold_is_loose(pd_band):
    basis, _, band = pd_band
    cut = time_cutoff_bandlimited(basis, band, 1.0, 10.0)
    assert cut.clamped
    assert cut.Omega_c == pytest.approx(np.max(np.abs(basis.eigenvalues[list(band.indices)].imag)))
    with pytest.raises(ParameterError):
        time_cutoff_bandlimited(basis, band, 1.0, 0.0)


def _stable_band_points(omega_c, L, m=801):
    """Dense grid of stable points within omega_c of L and inside |z| <= L."""
    re, im = np.meshgrid(np.linspace(-L, 0, m), np.linspace(-L, L, m))
    z = re + 1j * im
    keep = (np.abs(z - L) < omega_c) & (np.abs(z) <= L) & (z.real < 0)
    return z[keep]


@settings(max_examples=50, deadline=None)
@given(w=st.floats(1.001, 1.414), L=st.floats(0.5, 3.0), ratio=st.floats(1.0, 1e4))
def test_upper_bound_dominates_stable_band(w, L, ratio):
    omega_c = w * L
    pts = _stable_band_points(omega_c, L)
    if pts.size == 0:
        return
    bound = time_cutoff_upperbound(omega_c, L, ratio, 1.0)
    worst_min_re = np.max(np.abs(pts.real))
    cutoff = np.max(np.abs(pts.imag)) + math.sqrt(max(ratio ** 2 - worst_min_re ** 2, 0.0))
    assert cutoff <= bound + 1e-9 * bound


def test_upper_bound_fails_beyond_sqrt2():
    # with omega_c > sqrt(2)|lambda|_max the band reaches i|lambda|_max, above the bound
    L, omega_c = 1.0, 1.9
    pts = _stable_band_points(omega_c, L)
    assert np.max(np.abs(pts.imag)) > time_cutoff_upperbound(omega_c, L, 0.0, 1.0) + 0.3


@pytest.mark.parametrize("seed", range(6))
def test_cutoff_within_bound_on_instances(seed):
    from netsampling.spectral import support_bandwidth
    basis = pd_instance(n=20, p=0.2, seed=seed)[3]
    L = basis.lambda_max_mag
    checked = 0
    for size in range(1, basis.n):
        try:
            band = band_of(basis, size)
        except InfeasibleBandError:
            continue
        y0 = make_bandlimited_init(basis, None, 1.0, seed, band=band)
        omega_c, idx = support_bandwidth(basis, y0)
        if omega_c > math.sqrt(2) * L:
            break
        cut = time_cutoff_bandlimited(basis, BandSpec(omega_c, idx), 1.0, 1e-3)
        assert cut.Omega_c <= time_cutoff_upperbound(omega_c, L, 1.0, 1e-3)
        checked += 1
    assert checked >= 1


def test_upper_bound_branches():
    L = 1.0
    # at omega_c = 2|lambda|_max the second branch vanishes and the min is 0
    assert time_cutoff_upperbound(2.0, L, 1.0, 1e-3) == pytest.approx(1e3)
    assert time_cutoff_upperbound(1.0, L, 1.0, 1.0) == pytest.approx(0.0 + 1.0)
    assert time_cutoff_upperbound(0.5, L, 0.0, 1.0) == pytest.approx(0.5 * math.sqrt(4 - 0.25) / 2)
    with pytest.raises(ParameterError):
        time_cutoff_upperbound(1.0, 0.0, 1.0, 1.0)


def test_sinc_engines_agree():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(40, 3))
    F_s = 2.5
    t_lat = np.arange(0, 16, 0.1)
    t_scatter = rng.uniform(0, 16, size=50)
    for t in (t_lat, t_scatter):
        direct = np.stack([sinc_reconstruct(vals[:, k], F_s, t) for k in range(3)], axis=1)
        np.testing.assert_allclose(sinc_interpolate(vals, F_s, t), direct, atol=1e-12)
    on_grid = np.arange(40) / F_s
    np.testing.assert_array_equal(sinc_interpolate(vals, F_s, on_grid), vals)
    with pytest.raises(GridError):
        sinc_reconstruct([], 1.0, [0.0])


def test_sinc_reproduces_bandlimited_tone():
    F_s = 4.0
    k = np.arange(4000)
    x = np.cos(2 * np.pi * 0.7 * k / F_s)
    t = np.linspace(400, 600, 333)
    err = sinc_interpolate(x, F_s, t) - np.cos(2 * np.pi * 0.7 * t)
    assert np.max(np.abs(err)) < 1e-2


def _plan(basis, eq, band, **kw):
    y0n = 1.0
    return build_plan(basis, eq, band, len(band), y0_norm=y0n, epsilon=1e-3, **kw)


def test_plan_json_roundtrip(tmp_path, pd_band):
    basis, eq, band = pd_band
    plan = _plan(basis, eq, band, meta={"note": "x"})
    save_plan(plan, tmp_path / "p.json")
    back = load_plan(tmp_path / "p.json")
    assert back.nodes == plan.nodes and back.band == plan.band
    np.testing.assert_array_equal(back.phi, plan.phi)
    assert back.F_s == plan.F_s and back.meta == {"note": "x"}
    (tmp_path / "bad.json").write_text('{"nodes": []}')
    with pytest.raises(FormatError):
        load_plan(tmp_path / "bad.json")


def test_plan_flags(pd_band):
    basis, eq, band = pd_band
    plan = _plan(basis, eq, band)
    assert plan.F_s == pytest.approx(plan.Omega_c / math.pi)
    assert not plan.undersampled_time and not plan.undersampled_graph
    slow = plan.with_rate(0.5 * plan.F_s)
    assert slow.undersampled_time and slow.nodes == plan.nodes
    small = build_plan(basis, eq, band, 3, y0_norm=1.0, epsilon=1e-3)
    assert small.undersampled_graph


def test_joint_recovery_of_exact_modal_signal(pd_band):
    basis, eq, band = pd_band
    y0 = make_bandlimited_init(basis, None, 1.0, 2, band=band)
    c = gft(basis, y0)
    plan = build_plan(basis, eq, band, len(band), y0_norm=1.0, epsilon=1e-2, fs_factor=4)
    idx = list(band.indices)

    def y_at(t):
        return np.real(np.exp(np.outer(t, basis.eigenvalues[idx])) * c[idx] @ basis.basis[:, idx].T)

    k = np.arange(int(60 * plan.F_s))
    Y = y_at(k / plan.F_s)
    record = SampleRecord(plan.nodes, plan.F_s, Y[:, list(plan.nodes)])
    t = k[:200:3] / plan.F_s
    np.testing.assert_allclose(joint_recover(plan, record, t), Y[:200:3], atol=1e-10)
    x = joint_recover(plan, record, t, x_domain=True)
    np.testing.assert_allclose(x - eq, Y[:200:3], atol=1e-10)
    with pytest.raises(GridError):
        joint_recover(plan, SampleRecord(plan.nodes, 2 * plan.F_s, record.values), t)


def test_sample_csv_roundtrip(tmp_path, pd_band):
    basis, eq, band = pd_band
    plan = _plan(basis, eq, band).with_rate(2.0)
    times = np.arange(0, 5.0001, 0.125)
    states = np.random.default_rng(0).normal(size=(times.size, basis.n))
    rec = sample_trajectory(times, states, plan)
    assert rec.values.shape == (11, len(plan.nodes))
    write_sample_csv(rec, tmp_path / "s.csv", plan)
    back = read_sample_csv(tmp_path / "s.csv", plan)
    np.testing.assert_allclose(back.values, rec.values, atol=1e-15)
    with pytest.raises(GridError):
        sample_trajectory(times, states, plan, F_s=3.0)
    (tmp_path / "empty.csv").write_text("t,node_0\n")
    with pytest.raises(GridError):
        read_sample_csv(tmp_path / "empty.csv", plan)
    with pytest.raises(GridError):
        read_sample_csv(tmp_path / "s.csv", plan.with_rate(4.0))


def test_sample_record_validation():
    with pytest.raises(GridError):
        SampleRecord((0,), 1.0, np.zeros((0, 1)))
    rec = SampleRecord((0, 1), 4.0, np.zeros((3, 2)))
    np.testing.assert_allclose(rec.times, [0, 0.25, 0.5])
