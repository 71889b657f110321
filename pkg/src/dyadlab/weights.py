"""Positive weights on the lattice and their Muckenhoupt-type bookkeeping.

Exponent conventions, for 1 < p <= q < infinity:

* alpha/d = 1/p - 1/q, so alpha = 0 exactly when p = q.
* The joint characteristic is
      [sigma, omega]_{A_{p,q}} = sup_Q <sigma^q>_Q^{1/q} <omega^{-p'}>_Q^{1/p'},
  with plain (unweighted) cube averages, and [w]_{A_p} is recovered as
  apq(w^{1/p}, w^{1/p}, p, p)^p.
* Given mu in A_{p,p} and lambda in A_{q,q}, the intermediate weight is
      nu = (mu/lambda)^{1/(1 + alpha/d)},
  and for every cube the two-sided bound
      1 <= <mu^p>_Q^{1/p} <lambda^{-q'}>_Q^{1/q'} / <nu>_Q^{1 + alpha/d}
        <= [mu]_{A_{p,p}} [lambda]_{A_{q,q}}
  holds (Jensen and Hoelder on the left, the two characteristics on the
  right).  Both steps are inequalities between weighted means of the cell
  values, so they hold verbatim for lattice averages; the report checks
  them cube by cube.
* With s = 2/(1 + alpha/d), nu^{1/s} = (mu/lambda)^{1/2} and
  [nu^{1/s}]_{A_{s,s}} <= ([mu]_{A_{p,p}} [lambda]_{A_{q,q}})^{1/2}.

Weights are stored with their logarithms and all powers are formed in
log space; powered values above 1e300 are clipped and flagged rather
than raised, so near-divergent reports stay readable.

Membership in A_{p,p} has no finite-resolution criterion, so the
surrogate used throughout is: the characteristic is finite at the
working resolution and moves by at most 10% when the lattice is
coarsened one level.  Reports carry a flag, never an error, when the
surrogate fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from dyadlab import dyadic
from dyadlab.lattice import LatticeDomain, SampledFunction

_CLIP = 1e300
_LOG_CLIP = math.log(_CLIP)

_WEIGHT_KINDS = ("unit", "power", "logsmooth")


@dataclass(frozen=True)
class ExponentSetup:
    """Integrability exponents (p, q) in dimension d, with 1 < p <= q."""

    p: float
    q: float
    d: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if not (1.0 < self.p <= self.q < math.inf):
            raise ValueError(f"need 1 < p <= q < inf, got p={self.p}, q={self.q}")

    @property
    def p_prime(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def q_prime(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def alpha(self) -> float:
        return self.d * (1.0 / self.p - 1.0 / self.q)

    @property
    def alpha_frac(self) -> float:
        """alpha/d = 1/p - 1/q."""
        return 1.0 / self.p - 1.0 / self.q

    @property
    def bloom_exponent(self) -> float:
        """Exponent of mu/lambda in the intermediate weight: 1/(1 + alpha/d)."""
        return 1.0 / (1.0 + self.alpha_frac)

    @property
    def t(self) -> float:
        return (1.0 / self.p + 1.0 - 1.0 / self.q) / (1.0 / self.q + 1.0 - 1.0 / self.p)

    @property
    def s(self) -> float:
        """Intermediate integrability index 1 + 1/t = 2/(1 + alpha/d)."""
        return 1.0 + 1.0 / self.t


@dataclass(frozen=True)
class Weight:
    """Positive cell weight; powers are taken in log space."""

    domain: LatticeDomain
    values: np.ndarray
    log_values: np.ndarray
    tag: str = "weight"
    spec: tuple | None = None

    def function(self) -> SampledFunction:
        return SampledFunction(self.domain, self.values)

    def power(self, exponent: float) -> SampledFunction:
        """w^exponent, clipped at 1e300; pair with power_overflows."""
        logs = exponent * self.log_values
        return SampledFunction(self.domain, np.exp(np.minimum(logs, _LOG_CLIP)))

    def power_overflows(self, exponent: float) -> bool:
        return bool(np.max(exponent * self.log_values) > _LOG_CLIP)

    def mass(self) -> float:
        return float(np.sum(self.values)) * self.domain.cell_volume

    def coarsen(self) -> "Weight":
        """Weight at one level coarser; resamples analytic specs, else
        block-averages the cell values."""
        coarse = self.domain.coarsen()
        if self.spec is not None:
            return make_weight(coarse, dict(self.spec))
        v = self.values
        if self.domain.d == 1:
            cv = v.reshape(coarse.n, 2).mean(axis=1)
        else:
            cv = v.reshape(coarse.n, 2, coarse.n, 2).mean(axis=(1, 3))
        return as_weight(SampledFunction(coarse, cv), tag=self.tag + "+coarse")


def as_weight(f: SampledFunction, tag: str = "weight", spec: dict | None = None) -> Weight:
    values = np.real(f.values)
    if np.iscomplexobj(f.values) and np.any(f.values.imag != 0.0):
        raise ValueError("weights must be real")
    if np.any(values <= 0.0) or not np.all(np.isfinite(values)):
        raise ValueError("weights must be strictly positive and finite")
    return Weight(
        f.domain,
        values.astype(np.float64),
        np.log(values).astype(np.float64),
        tag=tag,
        spec=tuple(sorted(spec.items())) if spec is not None else None,
    )


def make_weight(domain: LatticeDomain, spec: dict) -> Weight:
    """Catalog weights: unit, |x|^beta, or a seeded log-smooth sample."""
    spec = dict(spec)
    kind = spec.get("kind")
    if kind not in _WEIGHT_KINDS:
        raise ValueError(f"unknown weight kind {kind!r}")
    mids = domain.midpoints()
    if kind == "unit":
        logw = np.zeros(domain.shape)
        tag = "unit"
    elif kind == "power":
        beta = float(spec.get("beta", 0.0))
        r = np.sqrt(sum(m**2 for m in mids))
        logw = beta * np.log(r)
        tag = f"power[{beta:g}]"
    else:
        amplitude = float(spec.get("amplitude", 0.5))
        modes = int(spec.get("modes", 3))
        seed = int(spec.get("seed", 0))
        rng = np.random.default_rng(seed)
        logw = np.zeros(domain.shape)
        for k in range(1, modes + 1):
            a = rng.uniform(-amplitude, amplitude) / k
            phase = rng.uniform(0.0, 2.0 * np.pi)
            if domain.d == 1:
                proj = mids[0]
            else:
                theta = rng.uniform(0.0, 2.0 * np.pi)
                proj = mids[0] * np.cos(theta) + mids[1] * np.sin(theta)
            logw = logw + a * np.cos(np.pi * k * proj / domain.L + phase)
        tag = f"logsmooth[{seed}]"
    values = np.exp(logw)
    return Weight(domain, values, logw, tag=tag, spec=tuple(sorted(spec.items())))


@dataclass
class CharacteristicReport:
    """Per-cube characteristic values over a cube family."""

    values: np.ndarray
    cubes: list
    supremum: float
    argmax_cube: object
    family: str
    flags: set = field(default_factory=set)

    def __post_init__(self):
        if self.values.size and not math.isclose(
            self.supremum, float(np.max(self.values)), rel_tol=1e-12
        ):
            raise ValueError("supremum must equal the max of the per-cube values")


def _resolve_family(domain: LatticeDomain, family) -> tuple[list, str]:
    if isinstance(family, str):
        if family == "canonical":
            return dyadic.enumerate_cubes(dyadic.canonical_grid(domain)), "canonical"
        if family == "all-grids":
            cubes = []
            for grid in dyadic.grids(domain):
                cubes.extend(dyadic.enumerate_cubes(grid))
            return cubes, "all-grids"
        raise ValueError(f"unknown family descriptor {family!r}")
    cubes = list(family)
    if not cubes:
        raise ValueError("cube family is empty")
    return cubes, "explicit"


def _family_averages(f: SampledFunction, cubes: list, descriptor: str) -> np.ndarray:
    """Plain averages of f over the cubes; canonical families go through
    the vectorized per-generation path."""
    if descriptor == "canonical":
        dom = f.domain
        tables = [dyadic.generation_averages(f, j) for j in range(dom.m + 1)]
        out = np.empty(len(cubes))
        for i, cube in enumerate(cubes):
            out[i] = np.real(tables[cube.generation][cube.index])
        return out
    return np.array([np.real(dyadic.cube_average(f, cube)) for cube in cubes])


def apq_characteristic(
    sigma: Weight,
    omega: Weight,
    p: float,
    q: float,
    family="canonical",
) -> CharacteristicReport:
    """[sigma, omega]_{A_{p,q}} over a cube family, with per-cube values."""
    if not (1.0 < p < math.inf and 1.0 < q < math.inf):
        raise ValueError(f"need 1 < p, q < inf, got p={p}, q={q}")
    if sigma.domain != omega.domain:
        raise ValueError("sigma and omega must share a domain")
    p_prime = p / (p - 1.0)
    flags = set()
    if sigma.power_overflows(q) or omega.power_overflows(-p_prime):
        flags.add("overflow")
    sig_q = sigma.power(q)
    om_pp = omega.power(-p_prime)
    cubes, descriptor = _resolve_family(sigma.domain, family)
    a = _family_averages(sig_q, cubes, descriptor)
    b = _family_averages(om_pp, cubes, descriptor)
    values = a ** (1.0 / q) * b ** (1.0 / p_prime)
    if not np.all(np.isfinite(values)):
        flags.add("overflow")
        values = np.nan_to_num(values, posinf=_CLIP)
    sup_idx = int(np.argmax(values))
    return CharacteristicReport(
        values=values,
        cubes=cubes,
        supremum=float(values[sup_idx]),
        argmax_cube=cubes[sup_idx],
        family=descriptor,
        flags=flags,
    )


def ap_characteristic(w: Weight, p: float, family="canonical") -> CharacteristicReport:
    """[w]_{A_p} = apq(w^{1/p}, w^{1/p}, p, p)^p, reported per cube."""
    root = Weight(w.domain, np.exp(w.log_values / p), w.log_values / p, tag=w.tag + f"^(1/{p:g})")
    rep = apq_characteristic(root, root, p, p, family=family)
    values = rep.values**p
    sup_idx = int(np.argmax(values))
    return CharacteristicReport(
        values=values,
        cubes=rep.cubes,
        supremum=float(values[sup_idx]),
        argmax_cube=rep.cubes[sup_idx],
        family=rep.family,
        flags=set(rep.flags),
    )


def bloom_weight(mu: Weight, lam: Weight, setup: ExponentSetup) -> Weight:
    """nu = (mu/lambda)^{1/(1 + alpha/d)}."""
    if mu.domain != lam.domain:
        raise ValueError("mu and lambda must share a domain")
    if mu.domain.d != setup.d:
        raise ValueError("setup dimension does not match the weights")
    e = setup.bloom_exponent
    logs = e * (mu.log_values - lam.log_values)
    return Weight(mu.domain, np.exp(logs), logs, tag=f"bloom({mu.tag},{lam.tag})")


def membership_surrogate(w: Weight, p: float, rel_tol: float = 0.10) -> dict:
    """Finite characteristic, stable within rel_tol under one coarsening."""
    fine = apq_characteristic(w, w, p, p)
    coarse_w = w.coarsen()
    coarse = apq_characteristic(coarse_w, coarse_w, p, p)
    drift = abs(fine.supremum - coarse.supremum) / max(fine.supremum, coarse.supremum)
    ok = (
        math.isfinite(fine.supremum)
        and "overflow" not in fine.flags
        and drift <= rel_tol
    )
    return {
        "characteristic": fine.supremum,
        "coarse_characteristic": coarse.supremum,
        "drift": drift,
        "ok": ok,
    }


@dataclass
class SandwichReport:
    cubes: list
    ratios: np.ndarray
    lower: float
    upper: float
    mu_characteristic: float
    lam_characteristic: float
    s: float
    intermediate_characteristic: float
    intermediate_bound: float
    membership: dict
    flags: set = field(default_factory=set)

    @property
    def min_ratio(self) -> float:
        return float(np.min(self.ratios))

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    def holds(self, rel_tol: float = 1e-9) -> bool:
        sandwich = self.min_ratio >= self.lower * (1.0 - rel_tol) and self.max_ratio <= (
            self.upper * (1.0 + rel_tol)
        )
        intermediate = self.intermediate_characteristic <= self.intermediate_bound * (1.0 + rel_tol)
        return bool(sandwich and intermediate)


def bloom_sandwich_report(
    mu: Weight,
    lam: Weight,
    setup: ExponentSetup,
    family="canonical",
) -> SandwichReport:
    """Cube-by-cube two-sided bound on the mass ratio
    <mu^p>^{1/p} <lambda^{-q'}>^{1/q'} / <nu>^{1 + alpha/d}, plus the
    intermediate-weight characteristic bound at s = 2/(1 + alpha/d)."""
    if mu.domain != lam.domain or mu.domain.d != setup.d:
        raise ValueError("weights and setup must share domain and dimension")
    flags = set()
    nu = bloom_weight(mu, lam, setup)
    p, q = setup.p, setup.q
    cubes, descriptor = _resolve_family(mu.domain, family)
    if mu.power_overflows(p) or lam.power_overflows(-setup.q_prime):
        flags.add("overflow")
    mu_p = _family_averages(mu.power(p), cubes, descriptor)
    lam_qp = _family_averages(lam.power(-setup.q_prime), cubes, descriptor)
    nu_avg = _family_averages(nu.function(), cubes, descriptor)
    ratios = mu_p ** (1.0 / p) * lam_qp ** (1.0 / setup.q_prime) / nu_avg ** (
        1.0 + setup.alpha_frac
    )
    mu_char = apq_characteristic(mu, mu, p, p, family=family).supremum
    lam_char = apq_characteristic(lam, lam, q, q, family=family).supremum
    half_log = (mu.log_values - lam.log_values) / 2.0
    nu_root = Weight(mu.domain, np.exp(half_log), half_log, tag="bloom^(1/s)")
    s = setup.s
    inter = apq_characteristic(nu_root, nu_root, s, s, family=family).supremum
    membership = {
        "mu": membership_surrogate(mu, p),
        "lam": membership_surrogate(lam, q),
    }
    if not membership["mu"]["ok"] or not membership["lam"]["ok"]:
        flags.add("membership-surrogate-failed")
    return SandwichReport(
        cubes=cubes,
        ratios=ratios,
        lower=1.0,
        upper=mu_char * lam_char,
        mu_characteristic=mu_char,
        lam_characteristic=lam_char,
        s=s,
        intermediate_characteristic=inter,
        intermediate_bound=math.sqrt(mu_char * lam_char),
        membership=membership,
        flags=flags,
    )


@dataclass(frozen=True)
class AInftyEstimate:
    delta: float
    constant: float
    flags: frozenset
    samples: int


def ainfty_decay_estimate(
    w: Weight,
    samples: int = 200,
    seed: int = 0,
    min_generation: int = 0,
) -> AInftyEstimate:
    """Largest delta with w(E)/w(Q) <= (|E|/|Q|)^delta over sampled pairs
    E subset Q (cell subsets of canonical cubes); the constant stays 1.

    A small delta signals mass concentrated on a thin subset; equality of
    all sampled ratios (constant weight) is flagged as degenerate."""
    dom = w.domain
    grid = dyadic.canonical_grid(dom)
    rng = np.random.default_rng(seed)
    flat = w.values.reshape(-1)
    ratios = []
    used = 0
    while used < samples:
        j = int(rng.integers(min_generation, dom.m))  # need >= 2 cells
        idx = tuple(int(rng.integers(0, 2**j)) for _ in range(dom.d))
        cube = grid.cube(j, idx)
        cells = cube.flat_cells()
        count = cells.size
        k = int(rng.integers(1, count))
        sub = rng.choice(cells, size=k, replace=False)
        u = math.log(k / count)
        mass_q = float(flat[cells].sum())
        mass_e = float(flat[sub].sum())
        v = math.log(mass_e / mass_q)
        if u == 0.0:
            continue
        ratios.append(v / u)
        used += 1
    ratios = np.array(ratios)
    delta = float(np.min(ratios))
    flags = set()
    if float(np.max(ratios) - np.min(ratios)) <= 1e-9:
        flags.add("degenerate")
    if delta < 0.05:
        flags.add("small-delta")
    return AInftyEstimate(delta=delta, constant=1.0, flags=frozenset(flags), samples=used)
