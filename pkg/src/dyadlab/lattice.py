"""Midpoint-sampled functions on a uniform lattice over [-L, L)^d.

Conventions shared by every module in the package:

* The domain is the half-open box [-L, L)^d split into n = 2**m equal
  cells per axis, h = 2*L/n.  Cell k (per axis) is [-L + k*h, -L + (k+1)*h)
  and carries its midpoint -L + (k + 1/2)*h as sample point.  n is even,
  so no midpoint ever hits the origin and symbols singular at 0 (log|x|,
  negative powers of |x|) stay finite on the lattice.
* A sampled function is identified with the piecewise-constant function
  equal to the cell value on each cell.  Integrals, averages and norms
  are integrals of that piecewise-constant function, so quadrature
  identities (additivity, exactness on indicators) hold exactly rather
  than approximately.
* Integrals over boxes are O(1) prefix-table queries.  Prefix tables are
  accumulated in extended precision and rounded to working precision
  once, so a box split into aligned halves recombines to the unsplit
  value at the 1e-12 relative level.
* Boxes are half-open.  Lattice-aligned boxes take the pure prefix
  path; arbitrary boxes are still integrated exactly (endpoint cells
  contribute fractionally to the piecewise-constant integral).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

# Total cell count guard.  Dense per-cell state beyond this is unusable.
MAX_CELLS = 2**28
# Snap tolerance for box endpoints, in units of h.
_ALIGN_TOL = 1e-9

# Extended-precision accumulators for prefix builds (80-bit on x86).
_ACC_REAL = np.longdouble
_ACC_COMPLEX = np.clongdouble

_CACHE_SCHEMA = 1


@dataclass(frozen=True)
class LatticeDomain:
    """Uniform lattice on [-L, L)^d with 2**m cells per axis."""

    d: int
    m: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if not (2 <= self.m <= 14):
            raise ValueError(f"m must be in [2, 14], got {self.m}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be positive and finite, got {self.L}")
        if self.n**self.d > MAX_CELLS:
            raise ValueError(f"cell count {self.n**self.d} exceeds {MAX_CELLS}")

    @property
    def n(self) -> int:
        return 2**self.m

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def width(self) -> float:
        return 2.0 * self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axis_midpoints(self) -> np.ndarray:
        k = np.arange(self.n)
        return -self.L + (k + 0.5) * self.h

    def midpoints(self) -> tuple[np.ndarray, ...]:
        """Midpoint coordinate arrays, one per axis, each of shape `shape`."""
        mids = self.axis_midpoints()
        if self.d == 1:
            return (mids,)
        return (mids[:, None] * np.ones((1, self.n)), np.ones((self.n, 1)) * mids[None, :])

    def coarsen(self) -> "LatticeDomain":
        if self.m <= 2:
            raise ValueError("cannot coarsen below m = 2")
        return LatticeDomain(self.d, self.m - 1, self.L)

    def grid_coord(self, x: float, axis_tol: float = _ALIGN_TOL) -> float:
        """Map a coordinate to cell units in [0, n], snapping near-integers."""
        g = (x + self.L) / self.h
        r = round(g)
        if abs(g - r) <= axis_tol:
            g = float(r)
        if g < 0.0 or g > self.n:
            raise ValueError(f"coordinate {x} outside [-L, L]")
        return g

    def cell_span(self, box: "Box") -> tuple[tuple[int, int], ...]:
        """Integer cell ranges of a lattice-aligned box; rejects misaligned ones."""
        spans = []
        for ax in range(self.d):
            g0 = self.grid_coord(box.lo[ax])
            g1 = self.grid_coord(box.hi[ax])
            if g0 != int(g0) or g1 != int(g1):
                raise ValueError(f"box {box} is not lattice-aligned on axis {ax}")
            spans.append((int(g0), int(g1)))
        return tuple(spans)


@dataclass(frozen=True)
class Box:
    """Half-open axis-aligned box, one (lo, hi) pair per axis."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("lo and hi must be non-empty and of equal length")
        for a, b in zip(self.lo, self.hi):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ValueError(f"need finite lo < hi per axis, got {self.lo}, {self.hi}")

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        out = 1.0
        for a, b in zip(self.lo, self.hi):
            out *= b - a
        return out

    @staticmethod
    def interval(lo: float, hi: float) -> "Box":
        return Box((lo,), (hi,))

    @staticmethod
    def from_cells(domain: LatticeDomain, spans: Sequence[tuple[int, int]]) -> "Box":
        lo = tuple(-domain.L + s[0] * domain.h for s in spans)
        hi = tuple(-domain.L + s[1] * domain.h for s in spans)
        return Box(lo, hi)


def _padded_prefix_1d(v: np.ndarray) -> np.ndarray:
    acc_dtype = _ACC_COMPLEX if np.iscomplexobj(v) else _ACC_REAL
    out = np.zeros(v.shape[0] + 1, dtype=v.dtype)
    out[1:] = np.cumsum(v.astype(acc_dtype)).astype(v.dtype)
    return out


def _padded_prefix_2d(v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full rectangle table plus row/column partials for fractional queries."""
    acc_dtype = _ACC_COMPLEX if np.iscomplexobj(v) else _ACC_REAL
    n0, n1 = v.shape
    acc = v.astype(acc_dtype)
    row_acc = np.cumsum(acc, axis=1)
    full = np.zeros((n0 + 1, n1 + 1), dtype=v.dtype)
    full[1:, 1:] = np.cumsum(row_acc, axis=0).astype(v.dtype)
    row = np.zeros((n0, n1 + 1), dtype=v.dtype)
    row[:, 1:] = row_acc.astype(v.dtype)
    col = np.zeros((n0 + 1, n1), dtype=v.dtype)
    col[1:, :] = np.cumsum(acc, axis=0).astype(v.dtype)
    return full, row, col


def _split_coord(domain: LatticeDomain, x: float) -> tuple[int, float]:
    g = domain.grid_coord(x)
    i = int(np.floor(g))
    t = g - i
    if i == domain.n:
        i, t = domain.n, 0.0
    return i, t


class SampledFunction:
    """Cell values on a LatticeDomain plus cached prefix tables."""

    def __init__(self, domain: LatticeDomain, values: np.ndarray):
        values = np.asarray(values)
        if values.shape != domain.shape:
            raise ValueError(f"values shape {values.shape} != domain shape {domain.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        dtype = np.complex128 if np.iscomplexobj(values) else np.float64
        self.domain = domain
        self.values = values.astype(dtype)
        self._prefix = None
        self._abs_prefix = None

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def with_values(self, values: np.ndarray) -> "SampledFunction":
        return SampledFunction(self.domain, values)

    def abs(self) -> "SampledFunction":
        return SampledFunction(self.domain, np.abs(self.values))

    # -- prefix machinery -------------------------------------------------

    def _tables(self):
        if self._prefix is None:
            if self.domain.d == 1:
                self._prefix = (_padded_prefix_1d(self.values),)
            else:
                self._prefix = _padded_prefix_2d(self.values)
        return self._prefix

    def _abs_tables(self):
        if self._abs_prefix is None:
            av = np.abs(self.values)
            if self.domain.d == 1:
                self._abs_prefix = (_padded_prefix_1d(av),)
            else:
                self._abs_prefix = _padded_prefix_2d(av)
        return self._abs_prefix

    def _interval_integral(self, lo, hi, tables) -> complex:
        dom = self.domain
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != (dom.d,) or hi.shape != (dom.d,):
            raise ValueError("lo/hi must have one entry per axis")
        for a, b in zip(lo, hi):
            if b < a:
                raise ValueError("need hi >= lo per axis")
        if np.any(hi == lo):
            return 0.0
        ends = [( _split_coord(dom, lo[ax]), _split_coord(dom, hi[ax])) for ax in range(dom.d)]
        if dom.d == 1:
            (i0, t0), (i1, t1) = ends[0]
            p = tables[0]
            v = self.values if tables is self._prefix else np.abs(self.values)
            out = p[i1] - p[i0]
            if t1 > 0.0:
                out = out + t1 * v[i1]
            if t0 > 0.0:
                out = out - t0 * v[i0]
            return out * dom.h
        full, row, col = tables
        v = self.values if tables is self._prefix else np.abs(self.values)

        def corner(i, s, j, t):
            # Integral over [0, i+s) x [0, j+t) in cell units.
            out = full[i, j]
            if s > 0.0:
                out = out + s * row[i, j]
            if t > 0.0:
                out = out + t * col[i, j]
            if s > 0.0 and t > 0.0:
                out = out + s * t * v[i, j]
            return out

        (i0, s0), (i1, s1) = ends[0]
        (j0, t0), (j1, t1) = ends[1]
        total = (
            corner(i1, s1, j1, t1)
            - corner(i0, s0, j1, t1)
            - corner(i1, s1, j0, t0)
            + corner(i0, s0, j0, t0)
        )
        return total * dom.h**2

    # -- queries -----------------------------------------------------------

    def interval_integral(self, lo, hi) -> complex:
        """Exact integral of the piecewise-constant function over a box."""
        return self._interval_integral(lo, hi, self._tables())

    def interval_integral_abs(self, lo, hi) -> float:
        out = self._interval_integral(lo, hi, self._abs_tables())
        return float(np.real(out))

    def box_integral(self, box: Box) -> complex:
        spans = self.domain.cell_span(box)
        lo = [-self.domain.L + s[0] * self.domain.h for s in spans]
        hi = [-self.domain.L + s[1] * self.domain.h for s in spans]
        return self._interval_integral(lo, hi, self._tables())

    def box_integral_abs(self, box: Box) -> float:
        spans = self.domain.cell_span(box)
        lo = [-self.domain.L + s[0] * self.domain.h for s in spans]
        hi = [-self.domain.L + s[1] * self.domain.h for s in spans]
        return float(np.real(self._interval_integral(lo, hi, self._abs_tables())))

    def box_average(self, box: Box) -> complex:
        return self.box_integral(box) / box.volume

    def total_integral(self) -> complex:
        lo = [-self.domain.L] * self.domain.d
        hi = [self.domain.L] * self.domain.d
        return self.interval_integral(lo, hi)

    def mask_integral(self, mask: np.ndarray) -> complex:
        """Integral over an arbitrary cell set (flat indices or boolean mask)."""
        flat = self.values.reshape(-1)
        if mask.dtype == bool:
            sel = flat[mask.reshape(-1)]
        else:
            sel = flat[mask]
        return complex(sel.sum()) * self.domain.cell_volume

    # -- persistence -------------------------------------------------------

    def export_csv(self, path) -> None:
        dom = self.domain
        mids = dom.midpoints()
        flat = self.values.reshape(-1)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["cell"] + [f"x{ax}" for ax in range(dom.d)] + ["re", "im"]
            writer.writerow(header)
            coords = [m.reshape(-1) for m in mids]
            for idx in range(flat.size):
                rowvals = [str(idx)]
                rowvals += [format(c[idx], ".17g") for c in coords]
                rowvals += [format(flat[idx].real, ".17g"), format(flat[idx].imag, ".17g")]
                writer.writerow(rowvals)

    def save_cache(self, path) -> None:
        """Dump values plus prefix tables; format is private and versioned."""
        tables = self._tables()
        payload = {f"prefix{i}": t for i, t in enumerate(tables)}
        np.savez(
            path,
            schema=np.int64(_CACHE_SCHEMA),
            d=np.int64(self.domain.d),
            m=np.int64(self.domain.m),
            L=np.float64(self.domain.L),
            values=self.values,
            **payload,
        )

    @staticmethod
    def load_cache(path) -> "SampledFunction":
        with np.load(path, allow_pickle=False) as data:
            if int(data["schema"]) != _CACHE_SCHEMA:
                raise ValueError(f"unsupported cache schema {int(data['schema'])}")
            dom = LatticeDomain(int(data["d"]), int(data["m"]), float(data["L"]))
            f = SampledFunction(dom, data["values"])
            tables = []
            i = 0
            while f"prefix{i}" in data:
                tables.append(data[f"prefix{i}"])
                i += 1
            if tables:
                f._prefix = tuple(tables)
        return f


def indicator(domain: LatticeDomain, box: Box) -> SampledFunction:
    """Indicator of a lattice-aligned box as a sampled function."""
    spans = domain.cell_span(box)
    values = np.zeros(domain.shape)
    if domain.d == 1:
        values[spans[0][0] : spans[0][1]] = 1.0
    else:
        values[spans[0][0] : spans[0][1], spans[1][0] : spans[1][1]] = 1.0
    return SampledFunction(domain, values)


def weighted_lp_norm(f: SampledFunction, p: float, weight: SampledFunction | None = None) -> float:
    """Multiplier-weighted norm (h^d * sum |f*w|^p)^(1/p); p = inf gives max."""
    if p != np.inf and p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    mag = np.abs(f.values)
    if weight is not None:
        if weight.domain != f.domain:
            raise ValueError("weight and f must share a domain")
        mag = mag * np.abs(weight.values)
    if p == np.inf:
        return float(mag.max())
    acc = np.sum(mag.astype(_ACC_REAL) ** p) * _ACC_REAL(f.domain.cell_volume)
    return float(acc ** (1.0 / _ACC_REAL(p)))


# -- symbol catalog ---------------------------------------------------------

_SYMBOL_KINDS = ("constant", "coordinate", "abs_power", "log_abs", "bump")


@dataclass(frozen=True)
class SymbolTerm:
    """One catalog term; a symbol is a finite sum of terms."""

    kind: str
    coefficient: complex = 1.0 + 0.0j
    exponent: float = 1.0
    axis: int = 0
    center: tuple[float, ...] = (0.0,)
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in _SYMBOL_KINDS:
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.kind == "bump" and self.radius <= 0:
            raise ValueError("bump radius must be positive")


def parse_symbol(spec) -> tuple[SymbolTerm, ...]:
    """Normalize a symbol spec (term, dict, or sequence of either) to terms."""
    if isinstance(spec, SymbolTerm):
        return (spec,)
    if isinstance(spec, dict):
        spec = [spec]
    terms = []
    for item in spec:
        if isinstance(item, SymbolTerm):
            terms.append(item)
            continue
        item = dict(item)
        kind = item.pop("kind")
        coeff = item.pop("coefficient", 1.0)
        if isinstance(coeff, (list, tuple)):
            coeff = complex(coeff[0], coeff[1])
        else:
            coeff = complex(coeff)
        kwargs = {"kind": kind, "coefficient": coeff}
        if "exponent" in item:
            kwargs["exponent"] = float(item.pop("exponent"))
        if "axis" in item:
            kwargs["axis"] = int(item.pop("axis"))
        if "center" in item:
            c = item.pop("center")
            kwargs["center"] = tuple(float(x) for x in (c if isinstance(c, (list, tuple)) else (c,)))
        if "radius" in item:
            kwargs["radius"] = float(item.pop("radius"))
        if item:
            raise ValueError(f"unknown symbol keys {sorted(item)}")
        terms.append(SymbolTerm(**kwargs))
    if not terms:
        raise ValueError("empty symbol spec")
    return tuple(terms)


def _eval_term(domain: LatticeDomain, term: SymbolTerm) -> np.ndarray:
    mids = domain.midpoints()
    if term.kind == "constant":
        return np.ones(domain.shape)
    if term.kind == "coordinate":
        if not (0 <= term.axis < domain.d):
            raise ValueError(f"axis {term.axis} out of range for d={domain.d}")
        return mids[term.axis].copy()
    r = np.sqrt(sum(m**2 for m in mids))
    if term.kind == "abs_power":
        if term.exponent <= -domain.d / 2.0:
            raise ValueError(f"abs_power exponent must exceed -d/2, got {term.exponent}")
        return r**term.exponent
    if term.kind == "log_abs":
        return np.log(r)
    # bump: C-infinity, == 1 at the center, supported on |x - c| < radius
    center = term.center if len(term.center) == domain.d else term.center + (0.0,) * (domain.d - len(term.center))
    s2 = sum((m - c) ** 2 for m, c in zip(mids, center)) / term.radius**2
    out = np.zeros(domain.shape)
    inside = s2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
    return out


def sample_symbol(domain: LatticeDomain, spec) -> SampledFunction:
    """Sample a catalog symbol (finite complex combination of terms)."""
    terms = parse_symbol(spec)
    total = np.zeros(domain.shape, dtype=np.complex128)
    for term in terms:
        total = total + term.coefficient * _eval_term(domain, term)
    if not np.all(np.isfinite(total)):
        raise ValueError("symbol evaluates to a non-finite value at a midpoint")
    if np.all(total.imag == 0.0):
        return SampledFunction(domain, total.real)
    return SampledFunction(domain, total)
