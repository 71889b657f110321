"""Oscillation functionals, norms, profiles, witnesses, and the
r-power comparison."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadlab import dyadic, oscillation as osc
from dyadlab.lattice import Box, LatticeDomain, SampledFunction, sample_symbol
from dyadlab.weights import ExponentSetup, bloom_weight, make_weight

TWO_OVER_E = 2.0 / math.e


@pytest.fixture(scope="module")
def dom():
    return LatticeDomain(d=1, m=10, L=1.0)


@pytest.fixture(scope="module")
def grid(dom):
    return dyadic.canonical_grid(dom)


@pytest.fixture(scope="module")
def logx(dom):
    return SampledFunction(dom, np.log(np.abs(dom.midpoints()[0])))


def test_constant_symbol_is_null(dom, grid):
    b = SampledFunction(dom, np.full(dom.n, 2.5))
    w = make_weight(dom, {"kind": "power", "beta": 0.5})
    Q = grid.cube_containing((0.25,), 3)
    for r in (1.0, 2.0):
        assert osc.oscillation(b, Q, nu=w, alpha=0.2, r=r) == 0.0


def test_coordinate_symbol_quarter(dom, grid):
    # midpoint sampling integrates |x - 1/2| exactly on [0,1)
    b = SampledFunction(dom, dom.midpoints()[0].copy())
    Q = grid.cube_containing((0.5,), 1)
    assert osc.oscillation(b, Q) == pytest.approx(0.25, abs=1e-14)


@pytest.mark.parametrize("t,gen", [(1.0, 1), (0.5, 2), (0.25, 3)])
def test_log_anchor_scale_invariant(logx, grid, t, gen):
    Q = grid.cube_containing((t / 2.0,), gen)
    value = osc.oscillation(logx, Q)
    assert abs(value - TWO_OVER_E) / TWO_OVER_E < 0.02


def test_unit_weight_reduces_to_length_normalization(logx, grid, dom):
    alpha = 0.3
    Q = grid.cube_containing((0.5,), 2)
    plain = osc.oscillation(logx, Q, alpha=0.0)
    scaled = osc.oscillation(logx, Q, alpha=alpha)
    assert scaled == pytest.approx(Q.sidelength**-alpha * plain, rel=1e-12)


def test_r_monotonicity(logx, grid):
    w = make_weight(logx.domain, {"kind": "power", "beta": 0.5})
    Q = grid.cube_containing((0.5,), 1)
    values = [osc.oscillation(logx, Q, nu=w, alpha=0.1, r=r) for r in (1.0, 1.5, 2.0, 3.0)]
    for lo, hi in zip(values, values[1:]):
        assert hi >= lo * (1.0 - 1e-12)


def test_rejects_bad_parameters(logx, grid):
    Q = grid.cube_containing((0.5,), 1)
    with pytest.raises(ValueError):
        osc.oscillation(logx, Q, alpha=-0.1)
    with pytest.raises(ValueError):
        osc.oscillation(logx, Q, r=0.5)
    with pytest.raises(ValueError):
        osc.oscillation(logx, np.zeros(logx.domain.n, dtype=bool))


def test_region_forms_agree(logx, grid):
    Q = grid.cube_containing((0.5,), 2)
    by_cube = osc.oscillation(logx, Q)
    by_mask = osc.oscillation(logx, Q.flat_cells())
    by_box = osc.oscillation(logx, Q.box())
    assert by_mask == pytest.approx(by_cube, rel=1e-14)
    assert by_box == pytest.approx(by_cube, rel=1e-14)


def test_shifted_cube_region_matches_overlap_oracle(dom):
    b = SampledFunction(dom, np.cos(3.0 * dom.midpoints()[0]))
    cube = dyadic.grids(dom)[1].cube(3, (2,))
    idx, w = osc.region_cells(dom, cube)
    # oracle: clipped per-cell overlap lengths against every piece
    edges = -dom.L + dom.h * np.arange(dom.n + 1)
    ow = np.zeros(dom.n)
    for lo, hi in cube.pieces():
        ow += np.clip(np.minimum(edges[1:], hi[0]) - np.maximum(edges[:-1], lo[0]), 0.0, None)
    got = np.zeros(dom.n)
    np.add.at(got, idx, w)
    np.testing.assert_allclose(got, ow, atol=1e-15)
    mean = (b.values * ow).sum() / ow.sum()
    want = (np.abs(b.values - mean) * ow).sum() / ow.sum()
    assert osc.oscillation(b, cube) == pytest.approx(want, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    re=st.floats(-5, 5, allow_nan=False),
    im=st.floats(-5, 5, allow_nan=False),
    t=st.floats(-3, 3, allow_nan=False),
)
def test_shift_invariance_and_scaling(re, im, t):
    dom = LatticeDomain(d=1, m=6, L=1.0)
    grid = dyadic.canonical_grid(dom)
    rng = np.random.default_rng(11)
    b = SampledFunction(dom, rng.standard_normal(dom.n) + 1j * rng.standard_normal(dom.n))
    Q = grid.cube_containing((0.5,), 1)
    base = osc.oscillation(b, Q)
    shifted = SampledFunction(dom, b.values + complex(re, im))
    assert osc.oscillation(shifted, Q) == pytest.approx(base, rel=1e-12, abs=1e-12)
    scaled = SampledFunction(dom, t * b.values)
    assert osc.oscillation(scaled, Q) == pytest.approx(abs(t) * base, rel=1e-12, abs=1e-12)


# -- norms --------------------------------------------------------------------


def test_bmo_norm_constant_zero(dom):
    b = SampledFunction(dom, np.ones(dom.n))
    mu = make_weight(dom, {"kind": "unit"})
    lam = make_weight(dom, {"kind": "power", "beta": 0.5})
    setup = ExponentSetup(2.0, 2.0, 1)
    frac = osc.bmo_norm(b, mode="fractional", mu=mu, lam=lam, setup=setup)
    tw = osc.bmo_norm(b, mode="two-weight", mu=mu, lam=lam, setup=setup)
    assert frac.supremum == 0.0
    assert tw.supremum == 0.0


@pytest.mark.parametrize(
    "p,q,mu_spec,lam_spec",
    [
        (2.0, 2.0, {"kind": "power", "beta": 0.5}, {"kind": "unit"}),
        (2.0, 4.0, {"kind": "power", "beta": 0.5}, {"kind": "power", "beta": -0.25}),
        (3.0, 3.0, {"kind": "logsmooth", "amplitude": 0.8, "modes": 3, "seed": 5}, {"kind": "unit"}),
    ],
)
def test_per_cube_norm_sandwich(dom, logx, p, q, mu_spec, lam_spec):
    """two-weight <= fractional <= [mu][lam] * two-weight, cube by cube."""
    from dyadlab.weights import apq_characteristic

    setup = ExponentSetup(p, q, 1)
    mu = make_weight(dom, mu_spec)
    lam = make_weight(dom, lam_spec)
    nu = bloom_weight(mu, lam, setup)
    frac = osc.bmo_norm(b=logx, mode="fractional", nu=nu, alpha=setup.alpha)
    tw = osc.bmo_norm(b=logx, mode="two-weight", mu=mu, lam=lam, setup=setup)
    cmu = apq_characteristic(mu, mu, p, p).supremum
    clam = apq_characteristic(lam, lam, q, q).supremum
    assert len(frac.values) == len(tw.values)
    assert np.all(tw.values <= frac.values * (1.0 + 1e-9))
    assert np.all(frac.values <= cmu * clam * tw.values * (1.0 + 1e-9))


def test_norm_triangle_inequality(dom, logx):
    b2 = SampledFunction(dom, np.cos(4.0 * dom.midpoints()[0]))
    combo = SampledFunction(dom, logx.values + 1j * b2.values)
    n1 = osc.bmo_norm(logx).supremum
    n2 = osc.bmo_norm(b2).supremum
    nc = osc.bmo_norm(combo).supremum
    assert nc <= n1 + n2 + 1e-12


def test_norm_explicit_family_is_restriction(dom, logx, grid):
    sub = dyadic.enumerate_cubes(grid, ell_min=0.25)
    report = osc.bmo_norm(logx, family=sub)
    full = osc.bmo_norm(logx)
    assert report.supremum <= full.supremum + 1e-15
    assert len(report.values) == len(sub)


# -- profiles -----------------------------------------------------------------


def test_profile_monotone_and_null_for_constant(dom):
    b = SampledFunction(dom, np.full(dom.n, 3.0))
    prof = osc.vmo_profile(b)
    assert np.all(prof.per_scale_sup == 0.0)
    assert np.all(prof.distance == 0.0)
    prof_log = osc.vmo_profile(SampledFunction(dom, np.log(np.abs(dom.midpoints()[0]))))
    assert np.all(np.diff(prof_log.small_scale) <= 1e-15)
    assert np.all(np.diff(prof_log.large_scale) >= -1e-15)
    assert np.all(np.diff(prof_log.distance) <= 1e-15)


def test_smooth_profile_obeys_lipschitz_oracle(dom):
    bump = sample_symbol(dom, {"kind": "bump", "center": [0.0], "radius": 0.75})
    lip = np.max(np.abs(np.diff(bump.values))) / dom.h
    prof = osc.vmo_profile(bump)
    assert np.all(prof.per_scale_sup <= lip * prof.scales / 2.0 + 1e-12)
    # small scales genuinely vanish
    assert prof.small_scale[-1] < 0.01


def test_log_profile_floor(dom, logx):
    prof = osc.vmo_profile(logx)
    # cubes [0, 2^-j) keep the 2/e oscillation; >= 64-cell scales within 2%
    fine = dom.m - 6
    assert np.all(prof.small_scale[: fine + 1] >= TWO_OVER_E * 0.98)
    # 4-cell quadrature floor of the same closed form
    assert np.all(prof.small_scale >= 0.6)


# -- witnesses ----------------------------------------------------------------


@pytest.fixture(scope="module")
def dom12():
    return LatticeDomain(d=1, m=12, L=1.0)


@pytest.fixture(scope="module")
def log12(dom12):
    return SampledFunction(dom12, np.log(np.abs(dom12.midpoints()[0])))


def test_small_scale_witness_for_log(log12):
    fam = osc.vmo_witness(log12, c0=0.5, mode="small-scale")
    assert fam is not None and fam.mode == "small-scale"
    assert len(fam) >= 5
    assert all(v >= 0.25 for v in fam.oscillations)
    allcells = np.concatenate([mask for _, mask in fam.entries])
    assert np.unique(allcells).size == allcells.size  # E pairwise disjoint
    for cube, mask in fam.entries:
        ncells = cube.flat_cells().size
        assert 8 * (ncells - mask.size) <= ncells  # |E| >= (1 - theta)|Q|


def test_witness_modes_for_smooth_symbol(dom12):
    bump = sample_symbol(dom12, {"kind": "bump", "center": [0.0], "radius": 0.75})
    assert osc.vmo_witness(bump, c0=0.1, mode="small-scale") is None
    assert osc.vmo_witness(bump, c0=0.1, mode="far-away") is None


def test_witness_none_for_constant(dom12):
    b = SampledFunction(dom12, np.zeros(dom12.n))
    assert osc.vmo_witness(b, c0=0.1) is None


def test_far_away_witness_for_boundary_comb(dom12):
    mids = dom12.midpoints()[0]
    vals = np.where(np.abs(mids) > 0.4, np.sign(np.sin(2**9 * np.pi * mids)), 0.0)
    comb = SampledFunction(dom12, vals)
    fam = osc.vmo_witness(comb, c0=0.5, mode="far-away")
    assert fam is not None and fam.mode == "far-away"
    dists = [cube.dist_to_origin() for cube, _ in fam.entries]
    assert dists == sorted(dists)
    assert dists[-1] >= 0.75 * dom12.L
    allcells = np.concatenate([mask for _, mask in fam.entries])
    assert np.unique(allcells).size == allcells.size


def test_large_scale_witness_for_log(log12):
    fam = osc.vmo_witness(log12, c0=0.5, mode="large-scale")
    assert fam is not None and len(fam) >= 2
    vols = [cube.volume for cube, _ in fam.entries]
    assert vols == sorted(vols)
    allcells = np.concatenate([mask for _, mask in fam.entries])
    assert np.unique(allcells).size == allcells.size
    assert all(v >= 0.25 for v in fam.oscillations)


# -- power comparison ---------------------------------------------------------


def test_jn_constant_trivial(dom, grid):
    b = SampledFunction(dom, np.ones(dom.n))
    w = make_weight(dom, {"kind": "unit"})
    rep = osc.jn_verify(b, w, p=2.0, r=2.0, alpha=0.0, root=grid.cube_containing((0.5,), 1))
    assert rep.r_norm == 0.0 and rep.one_norm == 0.0
    assert rep.ratio == 1.0
    assert rep.sparse_ratio == 0.0


def test_jn_log_lebesgue_fixture(dom, grid, logx):
    rep = osc.jn_verify(logx, make_weight(dom, {"kind": "unit"}), p=2.0, r=2.0,
                        alpha=0.0, root=grid.cube_containing((0.5,), 1))
    assert rep.ratio >= 1.0 - 1e-9
    assert rep.ratio == pytest.approx(1.3538715943472384, rel=1e-12)
    assert rep.sparse_ratio == pytest.approx(1.2699572405735884, rel=1e-12)


def test_jn_weighted_endpoint(dom, grid, logx):
    w = make_weight(dom, {"kind": "power", "beta": 0.5})
    rep = osc.jn_verify(logx, w, p=2.0, r=2.0, alpha=0.0,
                        root=grid.cube_containing((0.5,), 1))
    assert rep.ratio >= 1.0 - 1e-9
    assert rep.sparse_ratio <= 4.0  # C_impl = 2^d * LAMBDA
    assert rep.membership["ok"]


def test_jn_rejects_r_beyond_dual_exponent(dom, grid, logx):
    w = make_weight(dom, {"kind": "unit"})
    with pytest.raises(ValueError):
        osc.jn_verify(logx, w, p=2.0, r=2.5, alpha=0.0,
                      root=grid.cube_containing((0.5,), 1))


def test_jn_random_symbols_hold_bounds():
    dom = LatticeDomain(d=1, m=8, L=1.0)
    grid = dyadic.canonical_grid(dom)
    root = grid.cube_containing((0.5,), 1)
    w = make_weight(dom, {"kind": "power", "beta": 0.5})
    for seed in range(10):
        rng = np.random.default_rng(2000 + seed)
        b = SampledFunction(dom, np.cumsum(rng.standard_normal(dom.n)) / 16.0)
        rep = osc.jn_verify(b, w, p=2.0, r=1.5, alpha=0.1, root=root)
        assert rep.ratio >= 1.0 - 1e-9
        assert rep.sparse_ratio <= 4.0
