"""Weighted mean-oscillation functionals over cubes and cell sets.

For a weight nu, an exponent alpha >= 0 and a region E (a cube or any
cell set), the basic functional is

    osc(b; E) = nu(E)^{-alpha/d} * (1/nu(E)) * integral_E |b - <b>_E|,

with <b>_E the plain (unweighted) average of b over E.  The r-th power
variant replaces the inner integral by an L^r mean against the measure
nu dx:

    osc_r(b; E) = nu(E)^{-alpha/d}
                  * ( (1/nu(E)) int_E (|b - <b>_E| / nu)^r dnu )^{1/r},

which reduces to osc at r = 1 and is nondecreasing in r by Jensen's
inequality, cube by cube.

Two norm normalizations over a cube family:

* fractional: sup_Q osc(b; Q) with the nu-normalization above;
* two-weight: sup_Q int_Q |b - <b>_Q| / (mu^p(Q)^{1/p} lam^{-q'}(Q)^{1/q'}).

When nu is the intermediate weight of (mu, lam) at exponents (p, q),
every cube's fractional value equals its two-weight value times the mass
ratio checked by weights.bloom_sandwich_report, so the two norms agree
up to [mu][lam] cube by cube; tests assert this both ways.

Vanishing-oscillation diagnostics discretize three failure modes:
small scales, large scales, and regions escaping to infinity.  Profile
curves are cumulative suprema over shrinking cube families, so they are
monotone in their parameter by construction.  Witness extraction keeps a
removal budget theta = 1/8 per selected cube: later selections may eat
at most theta of an earlier cube's volume, which keeps |E| >= (1-theta)|Q|
and, verified numerically per pair, osc(b; E) >= c0/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dyadlab import dyadic
from dyadlab.lattice import Box, LatticeDomain, SampledFunction
from dyadlab.weights import ExponentSetup, Weight

_GEN_FLOOR_CELLS = 4  # profile curves stop at cubes of side 4h


# -- region resolution -------------------------------------------------------


def _axis_overlaps(dom: LatticeDomain, lo: float, hi: float):
    g0 = dom.grid_coord(lo)
    g1 = dom.grid_coord(hi)
    i0 = int(math.floor(g0))
    i1 = int(math.ceil(g1))
    idx = np.arange(i0, min(i1, dom.n))
    w = np.minimum(idx + 1.0, g1) - np.maximum(idx, g0)
    keep = w > 0.0
    return idx[keep], w[keep] * dom.h

def region_cells(domain: LatticeDomain, region) -> tuple[np.ndarray, np.ndarray]:
    """Resolve a region to (flat cell indices, per-cell volume weights)."""
    if isinstance(region, dyadic.DyadicCube):
        if region.grid.is_canonical:
            idx = region.flat_cells()
            return idx, np.full(idx.size, domain.cell_volume)
        pieces = region.pieces()
        all_idx, all_w = [], []
        for lo, hi in pieces:
            per_axis = [_axis_overlaps(domain, lo[ax], hi[ax]) for ax in range(domain.d)]
            if domain.d == 1:
                all_idx.append(per_axis[0][0])
                all_w.append(per_axis[0][1])
            else:
                r_idx, r_w = per_axis[0]
                c_idx, c_w = per_axis[1]
                flat = (r_idx[:, None] * domain.n + c_idx[None, :]).reshape(-1)
                all_idx.append(flat)
                all_w.append(np.outer(r_w, c_w).reshape(-1))
        return np.concatenate(all_idx), np.concatenate(all_w)
    if isinstance(region, Box):
        per_axis = [_axis_overlaps(domain, region.lo[ax], region.hi[ax]) for ax in range(domain.d)]
        if domain.d == 1:
            return per_axis[0][0], per_axis[0][1]
        r_idx, r_w = per_axis[0]
        c_idx, c_w = per_axis[1]
        flat = (r_idx[:, None] * domain.n + c_idx[None, :]).reshape(-1)
        return flat, np.outer(r_w, c_w).reshape(-1)
    arr = np.asarray(region)
    if arr.dtype == bool:
        idx = np.flatnonzero(arr.reshape(-1))
    else:
        idx = arr.reshape(-1).astype(np.int64)
    if idx.size == 0:
        raise ValueError("empty region")
    return idx, np.full(idx.size, domain.cell_volume)


def oscillation(
    b: SampledFunction,
    region,
    nu: Weight | None = None,
    alpha: float = 0.0,
    r: float = 1.0,
) -> float:
    """osc_r(b; region) for a cube, box, or cell set; exact on the lattice."""
    if alpha < 0.0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if r < 1.0:
        raise ValueError(f"r must be >= 1, got {r}")
    dom = b.domain
    if nu is not None and nu.domain != dom:
        raise ValueError("nu must live on the domain of b")
    idx, w = region_cells(dom, region)
    bv = b.values.reshape(-1)[idx]
    vol = float(w.sum())
    mean = np.sum(w * bv) / vol
    dev = np.abs(bv - mean)
    if nu is None:
        nu_cells = np.ones(idx.size)
    else:
        nu_cells = nu.values.reshape(-1)[idx]
    nu_mass = float(np.sum(w * nu_cells))
    if r == 1.0:
        inner = float(np.sum(w * dev)) / nu_mass
    else:
        inner = (float(np.sum(w * (dev / nu_cells) ** r * nu_cells)) / nu_mass) ** (1.0 / r)
    return nu_mass ** (-alpha / dom.d) * inner


# -- cube-family reports -----------------------------------------------------


@dataclass
class OscillationReport:
    values: np.ndarray
    cubes: list
    supremum: float
    argmax_cube: object
    mode: str
    flags: set = field(default_factory=set)


def _gen_mean(dom: LatticeDomain, arr: np.ndarray, generation: int) -> np.ndarray:
    cells = 2 ** (dom.m - generation)
    if dom.d == 1:
        return arr.reshape(2**generation, cells).mean(axis=1)
    g = 2**generation
    return arr.reshape(g, cells, g, cells).mean(axis=(1, 3))


def _broadcast(dom: LatticeDomain, table: np.ndarray, generation: int) -> np.ndarray:
    cells = 2 ** (dom.m - generation)
    if dom.d == 1:
        return np.repeat(table, cells)
    return np.repeat(np.repeat(table, cells, axis=0), cells, axis=1)


def _generation_oscillations(
    b: SampledFunction,
    generation: int,
    nu: Weight | None,
    alpha: float,
    r: float,
) -> np.ndarray:
    """Vectorized osc_r over all canonical generation-j cubes."""
    dom = b.domain
    vol = (dom.width * 2.0**-generation) ** dom.d
    mean = _broadcast(dom, _gen_mean(dom, b.values, generation), generation)
    dev = np.abs(b.values - mean)
    if nu is None:
        nu_mass = np.full((2**generation,) * dom.d, vol)
        inner_avg = _gen_mean(dom, dev if r == 1.0 else dev**r, generation)
    else:
        nu_mass = _gen_mean(dom, nu.values, generation) * vol
        if r == 1.0:
            inner_avg = _gen_mean(dom, dev, generation)
        else:
            inner_avg = _gen_mean(dom, (dev / nu.values) ** r * nu.values, generation)
    integral = inner_avg * vol
    if r == 1.0:
        inner = integral / nu_mass
    else:
        inner = (integral / nu_mass) ** (1.0 / r)
    return nu_mass ** (-alpha / dom.d) * inner


def _generation_two_weight(
    b: SampledFunction, generation: int, mu: Weight, lam: Weight, setup: ExponentSetup
) -> np.ndarray:
    dom = b.domain
    vol = (dom.width * 2.0**-generation) ** dom.d
    mean = _broadcast(dom, _gen_mean(dom, b.values, generation), generation)
    dev_int = _gen_mean(dom, np.abs(b.values - mean), generation) * vol
    mu_mass = _gen_mean(dom, mu.power(setup.p).values, generation) * vol
    lam_mass = _gen_mean(dom, lam.power(-setup.q_prime).values, generation) * vol
    return dev_int / (mu_mass ** (1.0 / setup.p) * lam_mass ** (1.0 / setup.q_prime))


def bmo_norm(
    b: SampledFunction,
    mode: str = "fractional",
    nu: Weight | None = None,
    alpha: float | None = None,
    mu: Weight | None = None,
    lam: Weight | None = None,
    setup: ExponentSetup | None = None,
    family="canonical",
    r: float = 1.0,
) -> OscillationReport:
    """Supremum of the chosen per-cube functional over a cube family.

    mode "fractional" uses (nu, alpha) or derives them from (mu, lam,
    setup); mode "two-weight" needs (mu, lam, setup) and has no r knob.
    """
    dom = b.domain
    if mode not in ("fractional", "two-weight"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "two-weight":
        if mu is None or lam is None or setup is None:
            raise ValueError("two-weight mode needs mu, lam and setup")
        if r != 1.0:
            raise ValueError("two-weight mode is defined at r = 1")
    else:
        if nu is None and not (mu is not None and lam is not None and setup is not None):
            if alpha is None:
                alpha = 0.0
        if nu is None and mu is not None and lam is not None and setup is not None:
            from dyadlab.weights import bloom_weight

            nu = bloom_weight(mu, lam, setup)
        if alpha is None:
            alpha = setup.alpha if setup is not None else 0.0
    if isinstance(family, str) and family == "canonical":
        cubes = dyadic.enumerate_cubes(dyadic.canonical_grid(dom))
        values = np.empty(len(cubes))
        tables = {}
        for j in range(dom.m + 1):
            if mode == "fractional":
                tables[j] = _generation_oscillations(b, j, nu, alpha, r)
            else:
                tables[j] = _generation_two_weight(b, j, mu, lam, setup)
        for i, cube in enumerate(cubes):
            values[i] = tables[cube.generation][cube.index]
    else:
        cubes = list(family)
        if not cubes:
            raise ValueError("cube family is empty")
        values = np.empty(len(cubes))
        for i, cube in enumerate(cubes):
            if mode == "fractional":
                values[i] = oscillation(b, cube, nu=nu, alpha=alpha, r=r)
            else:
                idx, w = region_cells(dom, cube)
                bv = b.values.reshape(-1)[idx]
                mean = np.sum(w * bv) / w.sum()
                dev_int = float(np.sum(w * np.abs(bv - mean)))
                mu_mass = float(np.sum(w * mu.power(setup.p).values.reshape(-1)[idx]))
                lam_mass = float(
                    np.sum(w * lam.power(-setup.q_prime).values.reshape(-1)[idx])
                )
                values[i] = dev_int / (
                    mu_mass ** (1.0 / setup.p) * lam_mass ** (1.0 / setup.q_prime)
                )
    sup_idx = int(np.argmax(values))
    return OscillationReport(
        values=values,
        cubes=cubes,
        supremum=float(values[sup_idx]),
        argmax_cube=cubes[sup_idx],
        mode=mode,
    )


# -- vanishing-oscillation profile and witnesses -----------------------------


@dataclass
class VMOProfile:
    scales: np.ndarray          # cube sides, coarse to fine
    per_scale_sup: np.ndarray   # sup over cubes of exactly that side
    small_scale: np.ndarray     # sup over side <= scales[j]
    large_scale: np.ndarray     # sup over side >= scales[j]
    radii: np.ndarray
    distance: np.ndarray        # sup over dist(Q, 0) >= radii[k]


def _cube_distance_table(dom: LatticeDomain, generation: int) -> np.ndarray:
    ell = dom.width * 2.0**-generation
    k = np.arange(2**generation)
    lo = -dom.L + k * ell
    hi = lo + ell
    dist_axis = np.maximum(np.maximum(lo, -hi), 0.0)
    if dom.d == 1:
        return dist_axis
    return np.sqrt(dist_axis[:, None] ** 2 + dist_axis[None, :] ** 2)


def vmo_profile(
    b: SampledFunction,
    nu: Weight | None = None,
    alpha: float = 0.0,
    r: float = 1.0,
    radii=None,
) -> VMOProfile:
    """Monotone oscillation envelopes in scale and in distance from 0.

    Curves stop at cubes of side 4h; below that the per-cube means are
    supported on too few cells to say anything about the symbol."""
    dom = b.domain
    j_max = dom.m - int(math.log2(_GEN_FLOOR_CELLS))
    gens = list(range(j_max + 1))
    per_scale = np.empty(len(gens))
    osc_tables = []
    dist_tables = []
    for j in gens:
        table = _generation_oscillations(b, j, nu, alpha, r)
        osc_tables.append(table)
        dist_tables.append(_cube_distance_table(dom, j))
        per_scale[j] = float(np.max(table))
    small = np.maximum.accumulate(per_scale[::-1])[::-1]
    large = np.maximum.accumulate(per_scale)
    if radii is None:
        radii = dom.L * np.array([0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75])
    radii = np.asarray(radii, dtype=float)
    distance = np.empty(radii.size)
    for k, rad in enumerate(radii):
        best = 0.0
        for j in gens:
            sel = dist_tables[j] >= rad
            if np.any(sel):
                best = max(best, float(np.max(osc_tables[j][sel])))
        distance[k] = best
    scales = dom.width * 2.0 ** (-np.array(gens, dtype=float))
    return VMOProfile(
        scales=scales,
        per_scale_sup=per_scale,
        small_scale=small,
        large_scale=large,
        radii=radii,
        distance=distance,
    )


@dataclass
class WitnessFamily:
    mode: str
    threshold: float
    entries: list  # (DyadicCube, flat cell indices of E)
    oscillations: list  # verified osc(b; E) per entry

    def __len__(self):
        return len(self.entries)


def _candidate_cubes(b, nu, alpha, r, c0):
    dom = b.domain
    grid = dyadic.canonical_grid(dom)
    out = []
    for j in range(dom.m + 1):
        table = _generation_oscillations(b, j, nu, alpha, r)
        hits = np.argwhere(np.atleast_1d(table) >= c0)
        for idx in hits:
            cube = grid.cube(j, tuple(int(v) for v in idx))
            out.append((cube, float(table[tuple(idx)])))
    return out


def _verify_entries(b, nu, alpha, r, c0, picked):
    entries, oscs = [], []
    for cube, mask in picked:
        if mask.size == 0:
            continue
        val = oscillation(b, mask, nu=nu, alpha=alpha, r=r)
        if val >= c0 / 2.0:
            entries.append((cube, mask))
            oscs.append(val)
    return entries, oscs


def _witness_small(b, nu, alpha, r, c0, theta, min_pairs):
    """Greedy subsequence extraction with integer-exact removal budgets.

    A candidate nested inside an accepted cube A must (a) keep A's total
    removal within theta*|A| and (b) be at most (theta/4)*|A_min| for its
    nearest accepted ancestor.  The step rule caps each nested chain's
    removal at (theta/4)/(1 - theta/4) < theta, so budgets only bind when
    several disjoint chains share an ancestor.  All checks are exact cell
    counts."""
    cands = _candidate_cubes(b, nu, alpha, r, c0)
    # big first; deterministic tie-break by generation and index
    cands.sort(key=lambda t: (-t[0].volume, t[0].generation, t[0].index))
    inv_theta = round(1.0 / theta)
    for inv in (inv_theta, 2 * inv_theta):
        accepted = []  # [cube, cells, removed cell count]
        for cube, _val in cands:
            cells = cube.flat_cells()
            ancestors = [a for a in accepted if a[0].contains_cube(cube)]
            if ancestors:
                nearest = min(ancestors, key=lambda a: a[1].size)
                if 4 * inv * cells.size > nearest[1].size:
                    continue
                if any(inv * (a[2] + cells.size) > a[1].size for a in ancestors):
                    continue
                for a in ancestors:
                    a[2] += cells.size
            accepted.append([cube, cells, 0])
        picked = []
        for i, (cube, cells, _removed) in enumerate(accepted):
            later = [a[1] for a in accepted[i + 1 :]]
            if later:
                mask = np.setdiff1d(cells, np.concatenate(later))
            else:
                mask = cells
            picked.append((cube, mask))
        entries, oscs = _verify_entries(b, nu, alpha, r, c0, picked)
        if len(entries) >= min_pairs:
            return WitnessFamily("small-scale", c0, entries, oscs)
    return None


def _witness_far(b, nu, alpha, r, c0, min_pairs, escape_radius):
    """Disjoint cubes at distances increasing by at least L/8 per step,
    required to reach escape_radius; E = Q throughout."""
    cands = _candidate_cubes(b, nu, alpha, r, c0)
    cands.sort(key=lambda t: (t[0].dist_to_origin(), t[0].generation, t[0].index))
    step = b.domain.L / 8.0
    accepted = []
    used = np.empty(0, dtype=np.int64)
    last = None
    for cube, _val in cands:
        dist = cube.dist_to_origin()
        if dist <= 0.0:
            continue
        if last is not None and dist < last + step:
            continue
        cells = cube.flat_cells()
        if np.intersect1d(cells, used).size:
            continue
        accepted.append((cube, cells))
        used = np.concatenate([used, cells])
        last = dist
    if not accepted or accepted[-1][0].dist_to_origin() < escape_radius:
        return None
    entries, oscs = _verify_entries(b, nu, alpha, r, c0, accepted)
    if len(entries) >= min_pairs:
        return WitnessFamily("far-away", c0, entries, oscs)
    return None


def _witness_large(b, nu, alpha, r, c0, min_pairs):
    """Nested escape to ever larger cubes: E strips off everything already
    used, oscillation re-verified on each strip before acceptance."""
    cands = _candidate_cubes(b, nu, alpha, r, c0)
    cands.sort(key=lambda t: (t[0].volume, t[0].generation, t[0].index))
    picked = []
    used = np.empty(0, dtype=np.int64)
    last_vol = None
    for cube, _val in cands:
        cells = cube.flat_cells()
        if last_vol is None:
            picked.append((cube, cells))
            used = cells
            last_vol = cube.volume
            continue
        if cube.volume < 2.0 * last_vol:
            continue
        mask = np.setdiff1d(cells, used)
        if 2 * mask.size < cells.size:
            continue
        if oscillation(b, mask, nu=nu, alpha=alpha, r=r) < c0 / 2.0:
            continue
        picked.append((cube, mask))
        used = np.union1d(used, cells)
        last_vol = cube.volume
    entries, oscs = _verify_entries(b, nu, alpha, r, c0, picked)
    if len(entries) >= min_pairs:
        return WitnessFamily("large-scale", c0, entries, oscs)
    return None


def vmo_witness(
    b: SampledFunction,
    nu: Weight | None = None,
    alpha: float = 0.0,
    c0: float = 0.5,
    mode: str | None = None,
    r: float = 1.0,
    theta: float = 0.125,
    min_pairs: int = 2,
    escape_radius: float | None = None,
) -> WitnessFamily | None:
    """Disjoint (Q, E) pairs witnessing osc >= c0/2 in the requested
    failure mode, or None when no family of min_pairs exists.

    Far-away families must reach escape_radius (default 3L/4): on a
    bounded domain a sequence that stalls at moderate distance says
    nothing about behaviour at infinity."""
    if escape_radius is None:
        escape_radius = 0.75 * b.domain.L
    searchers = {
        "small-scale": lambda: _witness_small(b, nu, alpha, r, c0, theta, min_pairs),
        "far-away": lambda: _witness_far(b, nu, alpha, r, c0, min_pairs, escape_radius),
        "large-scale": lambda: _witness_large(b, nu, alpha, r, c0, min_pairs),
    }
    if mode is not None:
        if mode not in searchers:
            raise ValueError(f"unknown witness mode {mode!r}")
        return searchers[mode]()
    for name in ("small-scale", "far-away", "large-scale"):
        found = searchers[name]()
        if found is not None:
            return found
    return None


# -- power-bootstrap verification --------------------------------------------


@dataclass
class JNReport:
    r: float
    r_norm: float
    one_norm: float
    ratio: float              # r_norm / one_norm, >= 1 per cube by Jensen
    root_r_oscillation: float
    sparse_bound: float       # family-summed right-hand side
    sparse_ratio: float       # root_r_oscillation / sparse_bound
    family_size: int
    membership: dict


def jn_verify(
    b: SampledFunction,
    w: Weight,
    p: float,
    r: float,
    alpha: float,
    root: dyadic.DyadicCube,
) -> JNReport:
    """Compare the r-oscillation norm with the r = 1 norm on the dyadic
    subcubes of a root cube, and the root's r-oscillation against the
    stopping-family bound

        ( w(Q0)^{-(1+alpha*r/d)} * sum_S osc_1(b;Q)^r w(Q)^{1+alpha*r/d} )^{1/r}.
    """
    from dyadlab import sparse as sparse_mod
    from dyadlab.weights import membership_surrogate

    dom = b.domain
    p_prime = p / (p - 1.0)
    if not (1.0 <= r <= p_prime):
        raise ValueError(f"need 1 <= r <= p' = {p_prime}, got r={r}")
    if not root.grid.is_canonical:
        raise ValueError("root cube must be canonical")
    subcubes = dyadic.enumerate_cubes(root.grid, ancestor=root)
    r_vals = np.array([oscillation(b, Q, nu=w, alpha=alpha, r=r) for Q in subcubes])
    one_vals = np.array([oscillation(b, Q, nu=w, alpha=alpha, r=1.0) for Q in subcubes])
    r_norm = float(np.max(r_vals))
    one_norm = float(np.max(one_vals))
    family = sparse_mod.cz_augment(b, root)
    exponent = 1.0 + alpha * r / dom.d
    w_flat = w.values.reshape(-1)
    total = 0.0
    for entry in family.entries:
        cells = entry.cube.flat_cells()
        w_mass = float(w_flat[cells].sum()) * dom.cell_volume
        osc1 = oscillation(b, entry.cube, nu=w, alpha=alpha, r=1.0)
        total += osc1**r * w_mass**exponent
    root_cells = root.flat_cells()
    w_root = float(w_flat[root_cells].sum()) * dom.cell_volume
    sparse_bound = (total / w_root**exponent) ** (1.0 / r)
    root_r = oscillation(b, root, nu=w, alpha=alpha, r=r)
    # degenerate symbols: 0 <= C * 0 holds, report neutral ratios
    if one_norm > 0.0:
        ratio = r_norm / one_norm
    else:
        ratio = 1.0 if r_norm == 0.0 else math.inf
    if sparse_bound > 0.0:
        sparse_ratio = root_r / sparse_bound
    else:
        sparse_ratio = 0.0 if root_r == 0.0 else math.inf
    return JNReport(
        r=r,
        r_norm=r_norm,
        one_norm=one_norm,
        ratio=ratio,
        root_r_oscillation=root_r,
        sparse_bound=sparse_bound,
        sparse_ratio=sparse_ratio,
        family_size=len(family.entries),
        membership=membership_surrogate(w, p),
    )
