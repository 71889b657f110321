"""Config-driven experiment runner.

Configs are JSON (schema 1): a lattice domain, an exponent pair, weight
and symbol specs from the catalogs, optionally a kernel, and one of the
eight experiment ids.  `run` executes the experiment, writes one CSV
per result table plus a summary.json with per-assertion pass/fail, and
returns 0 only if every hard assertion passed (1 on assertion failure
with the first failure echoed, 2 on an unusable config).  `sweep`
repeats the experiment along one axis -- m, p, q, pq, or symbol -- one
row per point with row-level status; points run concurrently under a
worker cap but every file is written from the coordinating thread.

Floats are always formatted with 17 significant digits, so identical
config and seeds reproduce byte-identical CSVs.  No plotting: tables
are long-format, the CSV is the plot interface.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dyadlab import dyadic, normest, oscillation, sparse
from dyadlab.lattice import LatticeDomain, SampledFunction, sample_symbol
from dyadlab.operators import assemble, make_kernel
from dyadlab.weights import (
    ExponentSetup,
    apq_characteristic,
    bloom_sandwich_report,
    bloom_weight,
    make_weight,
    membership_surrogate,
)

SCHEMA_VERSION = 1
WORKER_ENV = "DYADLAB_WORKERS"
HARD_TOL = 1e-9

EXPERIMENTS = (
    "weights-check",
    "bloom-verify",
    "bmo-compute",
    "jn-verify",
    "sparse-dominate",
    "commutator-sweep",
    "compactness-profile",
    "vmo-witness",
)
SWEEP_AXES = ("m", "p", "q", "pq", "symbol")
_KNOWN_KEYS = frozenset(
    {"schema", "experiment", "domain", "exponents", "weights", "symbols",
     "kernel", "seeds", "params", "out", "sweep"}
)
_NEED_SYMBOLS = frozenset(
    {"bmo-compute", "jn-verify", "commutator-sweep", "compactness-profile",
     "vmo-witness"}
)
_NEED_KERNEL = frozenset({"commutator-sweep", "compactness-profile"})


class ConfigError(ValueError):
    """Unusable configuration; maps to exit code 2."""


@dataclass
class RunContext:
    """Resolved objects for one experiment execution."""

    experiment: str
    domain: LatticeDomain
    setup: ExponentSetup
    mu: object
    lam: object
    symbols: list  # (id, SampledFunction) pairs
    kernel: object  # KernelSpec or None
    seeds: tuple
    params: dict


@dataclass
class ExperimentResult:
    tables: dict  # name -> (header, rows)
    assertions: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    headline: dict = field(default_factory=dict)

    @property
    def hard_failures(self) -> list:
        return [a for a in self.assertions if a["hard"] and not a["ok"]]


def _assertion(name: str, ok: bool, hard: bool = True, detail: str = "") -> dict:
    return {"name": name, "ok": bool(ok), "hard": hard, "detail": detail}


# -- config loading ------------------------------------------------------------


def _load(config) -> dict:
    if isinstance(config, dict):
        return copy.deepcopy(config)
    path = Path(config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _build_context(cfg: dict) -> RunContext:
    """Resolve a validated config into live objects; ConfigError on anything off."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    schema = cfg.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema!r}")
    experiment = cfg.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")

    dom_spec = dict(cfg.get("domain") or {})
    try:
        domain = LatticeDomain(
            d=int(dom_spec.pop("d", 1)),
            m=int(dom_spec.pop("m", 8)),
            L=float(dom_spec.pop("L", 1.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain: {exc}") from exc
    if dom_spec:
        raise ConfigError(f"unknown domain keys: {sorted(dom_spec)}")

    exp_spec = dict(cfg.get("exponents") or {})
    try:
        setup = ExponentSetup(
            p=float(exp_spec.pop("p", 2.0)), q=float(exp_spec.pop("q", 2.0)), d=domain.d
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad exponents: {exc}") from exc
    if exp_spec:
        raise ConfigError(f"unknown exponent keys: {sorted(exp_spec)}")

    w_spec = dict(cfg.get("weights") or {})
    mu_spec = w_spec.pop("mu", {"kind": "unit"})
    lam_spec = w_spec.pop("lambda", {"kind": "unit"})
    if w_spec:
        raise ConfigError(f"unknown weight slots: {sorted(w_spec)} (use mu / lambda)")
    try:
        mu = make_weight(domain, mu_spec)
        lam = make_weight(domain, lam_spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad weight spec: {exc}") from exc

    symbols = []
    seen = set()
    for entry in cfg.get("symbols") or []:
        if not isinstance(entry, dict) or "id" not in entry or "terms" not in entry:
            raise ConfigError("each symbol needs an 'id' and 'terms'")
        sid = str(entry["id"])
        if sid in seen:
            raise ConfigError(f"duplicate symbol id {sid!r}")
        seen.add(sid)
        try:
            symbols.append((sid, sample_symbol(domain, entry["terms"])))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad symbol {sid!r}: {exc}") from exc
    if experiment in _NEED_SYMBOLS and not symbols:
        raise ConfigError(f"experiment {experiment} needs at least one symbol")

    kernel = None
    if cfg.get("kernel") is not None:
        k_spec = dict(cfg["kernel"])
        variant = k_spec.pop("variant", None)
        if variant == "custom":
            raise ConfigError("custom kernels need a Python evaluator; not configurable")
        try:
            kernel = make_kernel(variant, k_spec)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad kernel spec: {exc}") from exc
        if kernel.d != domain.d:
            raise ConfigError(
                f"kernel {variant!r} lives at d={kernel.d}, domain has d={domain.d}"
            )
    if experiment in _NEED_KERNEL and kernel is None:
        raise ConfigError(f"experiment {experiment} needs a kernel")

    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, (list, tuple)) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    ):
        raise ConfigError("seeds must be a list of integers")

    params = cfg.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping")

    return RunContext(
        experiment=experiment,
        domain=domain,
        setup=setup,
        mu=mu,
        lam=lam,
        symbols=symbols,
        kernel=kernel,
        seeds=tuple(seeds),
        params=dict(params),
    )


# -- experiments ---------------------------------------------------------------


def _cube_key(cube) -> tuple:
    return cube.generation, "_".join(str(i) for i in cube.index)


def _exp_weights_check(ctx: RunContext) -> ExperimentResult:
    """A_p / A_{p,q} characteristics with a divergence diagnostic (never hard)."""
    rows, flags = [], []
    for name, w, exponent in (("mu", ctx.mu, ctx.setup.p), ("lambda", ctx.lam, ctx.setup.q)):
        info = membership_surrogate(w, exponent)
        rows.append(
            (name, exponent, info["characteristic"], info["coarse_characteristic"],
             info["drift"], info["ok"])
        )
        if not info["ok"]:
            flags.append(f"divergence:{name}")
    joint = apq_characteristic(ctx.mu, ctx.lam, ctx.setup.p, ctx.setup.q)
    gen, idx = _cube_key(joint.argmax_cube)
    joint_rows = [(ctx.setup.p, ctx.setup.q, joint.supremum, gen, idx,
                   ";".join(sorted(joint.flags)))]
    assertions = [
        _assertion("characteristics-finite",
                   all(math.isfinite(float(r[2])) for r in rows),
                   hard=True,
                   detail="surrogate characteristics are finite on the lattice"),
    ]
    headline = {"char_mu": float(rows[0][2]), "char_lambda": float(rows[1][2]),
                "char_joint": joint.supremum}
    return ExperimentResult(
        tables={
            "weights": (("weight", "exponent", "characteristic",
                         "coarse_characteristic", "drift", "ok"), rows),
            "joint": (("p", "q", "characteristic", "argmax_generation",
                       "argmax_index", "flags"), joint_rows),
        },
        assertions=assertions,
        flags=flags,
        headline=headline,
    )


def _exp_bloom_verify(ctx: RunContext) -> ExperimentResult:
    rep = bloom_sandwich_report(ctx.mu, ctx.lam, ctx.setup)
    rows = [(*_cube_key(c), float(r)) for c, r in zip(rep.cubes, rep.ratios)]
    summary_rows = [(rep.min_ratio, rep.max_ratio, rep.upper, rep.s,
                     rep.intermediate_characteristic, rep.intermediate_bound)]
    assertions = [
        _assertion("sandwich-holds", rep.holds(HARD_TOL),
                   detail=f"ratios in [{rep.min_ratio:.6g}, {rep.max_ratio:.6g}], "
                          f"upper bound {rep.upper:.6g}"),
        _assertion("intermediate-ainfty",
                   rep.intermediate_characteristic
                   <= rep.intermediate_bound * (1.0 + HARD_TOL),
                   detail=f"[nu^(1/s)]_(s,s) = {rep.intermediate_characteristic:.6g} "
                          f"vs sqrt([mu][lambda]) = {rep.intermediate_bound:.6g}"),
    ]
    flags = sorted(rep.flags)
    return ExperimentResult(
        tables={
            "sandwich_cubes": (("generation", "index", "ratio"), rows),
            "sandwich_summary": (("min_ratio", "max_ratio", "upper", "s",
                                  "intermediate_characteristic",
                                  "intermediate_bound"), summary_rows),
        },
        assertions=assertions,
        flags=flags,
        headline={"min_ratio": rep.min_ratio, "max_ratio": rep.max_ratio},
    )


def _exp_bmo_compute(ctx: RunContext) -> ExperimentResult:
    rows, assertions, headline = [], [], {}
    for sid, b in ctx.symbols:
        rep = oscillation.bmo_norm(
            b, mode="fractional", mu=ctx.mu, lam=ctx.lam, setup=ctx.setup,
            r=float(ctx.params.get("r", 1.0)),
        )
        gen, idx = _cube_key(rep.argmax_cube)
        rows.append((sid, rep.mode, rep.supremum, gen, idx))
        assertions.append(
            _assertion(f"bmo-finite:{sid}", math.isfinite(rep.supremum),
                       detail=f"sup = {rep.supremum:.6g}")
        )
        headline[f"bmo_{sid}"] = rep.supremum
    return ExperimentResult(
        tables={"bmo": (("symbol", "mode", "bmo", "argmax_generation",
                         "argmax_index"), rows)},
        assertions=assertions,
        headline=headline,
    )


def _exp_jn_verify(ctx: RunContext) -> ExperimentResult:
    r = float(ctx.params.get("r", 2.0))
    grid = dyadic.canonical_grid(ctx.domain)
    root = grid.cube(1, (1,) * ctx.domain.d)  # [0, L)^d: origin on the boundary
    bound = sparse.cz_constant(ctx.domain.d)
    rows, assertions, headline = [], [], {}
    for sid, b in ctx.symbols:
        rep = oscillation.jn_verify(b, ctx.mu, ctx.setup.p, r, ctx.setup.alpha, root)
        rows.append((sid, rep.r, rep.r_norm, rep.one_norm, rep.ratio,
                     rep.root_r_oscillation, rep.sparse_bound, rep.sparse_ratio,
                     rep.family_size))
        assertions.append(
            _assertion(f"jn-monotone:{sid}", rep.ratio >= 1.0 - HARD_TOL,
                       detail=f"r-norm / 1-norm = {rep.ratio:.6g}")
        )
        assertions.append(
            _assertion(f"jn-sparse:{sid}",
                       rep.sparse_ratio <= bound * (1.0 + HARD_TOL),
                       detail=f"sparse ratio {rep.sparse_ratio:.6g} vs C = {bound:g}")
        )
        headline[f"jn_ratio_{sid}"] = rep.ratio
    return ExperimentResult(
        tables={"jn": (("symbol", "r", "r_norm", "one_norm", "ratio",
                        "root_r_oscillation", "sparse_bound", "sparse_ratio",
                        "family_size"), rows)},
        assertions=assertions,
        headline=headline,
    )


def _random_symbol(domain: LatticeDomain, seed: int) -> SampledFunction:
    rng = np.random.default_rng(seed)
    if domain.d == 1:
        vals = np.cumsum(rng.standard_normal(domain.n)) / 32.0
    else:
        vals = rng.standard_normal(domain.shape)
    return SampledFunction(domain, vals)


def _exp_sparse_dominate(ctx: RunContext) -> ExperimentResult:
    grid = dyadic.canonical_grid(ctx.domain)
    root = grid.cube(0, (0,) * ctx.domain.d)
    bound = sparse.cz_constant(ctx.domain.d)
    cases = list(ctx.symbols)
    cases.extend((f"seed{s}", _random_symbol(ctx.domain, s)) for s in ctx.seeds)
    if not cases:
        raise ConfigError("sparse-dominate needs symbols or seeds")
    rows, assertions = [], []
    worst = 0.0
    for sid, b in cases:
        family = sparse.cz_augment(b, root)
        verdict = sparse.is_sparse(family)
        ratio = sparse.augmentation_ratio(b, root, family)
        worst = max(worst, ratio)
        rows.append((sid, len(family.entries), verdict.ok, ratio, bound))
        assertions.append(
            _assertion(f"sparse:{sid}", verdict.ok,
                       detail=verdict.reason if not verdict.ok else "1/2-sparse")
        )
        assertions.append(
            _assertion(f"domination:{sid}", ratio <= bound * (1.0 + HARD_TOL),
                       detail=f"max cell ratio {ratio:.6g} vs C = {bound:g}")
        )
    return ExperimentResult(
        tables={"sparse": (("symbol", "entries", "sparse_ok", "max_ratio",
                            "bound"), rows)},
        assertions=assertions,
        headline={"worst_ratio": worst},
    )


def _exp_commutator_sweep(ctx: RunContext) -> ExperimentResult:
    op = assemble(ctx.kernel, ctx.domain)
    sweep_rows = normest.bmo_vs_norm_sweep(
        ctx.symbols, op, ctx.mu, ctx.lam, ctx.setup,
        budget=int(ctx.params.get("budget", 8)),
        probe_generation=int(ctx.params.get("probe_generation", 3)),
    )
    rows, assertions, headline = [], [], {}
    for row in sweep_rows:
        sid = row["symbol"]
        rows.append((sid, row["bmo"], row["norm"], row["probe"],
                     row["norm_over_bmo"], row["probe_over_norm"]))
        if math.isfinite(row["probe"]):
            assertions.append(
                _assertion(f"probe-below-norm:{sid}",
                           row["probe"] <= row["norm"] * (1.0 + HARD_TOL),
                           detail=f"probe {row['probe']:.6g} vs norm {row['norm']:.6g}")
            )
        headline[f"norm_{sid}"] = row["norm"]
        headline[f"bmo_{sid}"] = row["bmo"]
        headline[f"ratio_{sid}"] = row["norm_over_bmo"]
    flags = [f"probe-refused:{r['symbol']}" for r in sweep_rows
             if not math.isfinite(r["probe"])]
    return ExperimentResult(
        tables={"commutator": (("symbol", "bmo", "norm", "probe", "norm_over_bmo",
                                "probe_over_norm"), rows)},
        assertions=assertions,
        flags=flags,
        headline=headline,
    )


def _exp_compactness_profile(ctx: RunContext) -> ExperimentResult:
    eps_list = tuple(float(e) for e in ctx.params.get(
        "eps_list", (0.5, 0.25, 0.125, 0.0625, 0.03125)))
    k_list = tuple(float(k) for k in ctx.params.get("k_list", (1.0, 2.0, 4.0, 8.0)))
    budget = int(ctx.params.get("budget", 8))
    tail_rows, sparse_rows, flags, headline = [], [], [], {}
    for sid, b in ctx.symbols:
        rep = normest.compactness_profile(
            b, ctx.kernel, ctx.setup, eps_list, ctx.mu, ctx.lam,
            k_list=k_list, budget=budget,
        )
        tail_rows.extend((sid, e, t) for e, t in zip(rep.eps_list, rep.tail_norms))
        sparse_rows.extend((sid, k, t) for k, t in zip(rep.k_list, rep.sparse_tail_norms))
        first, last = rep.tail_norms[0], rep.tail_norms[-1]
        ratio = last / first if first > 0.0 else 0.0
        headline[f"tail_ratio_{sid}"] = ratio
        if first > 0.0 and ratio <= 0.25:
            flags.append(f"tail-decays:{sid}")
        elif ratio >= 0.5:
            flags.append(f"tail-floor:{sid}")
        flags.extend(f"{f}:{sid}" for f in sorted(rep.flags))
    # Trend is a diagnostic, not an assertion: the dichotomy is symbol-specific.
    return ExperimentResult(
        tables={
            "tails": (("symbol", "eps", "tail_norm"), tail_rows),
            "sparse_tails": (("symbol", "k", "tail_norm"), sparse_rows),
        },
        flags=flags,
        headline=headline,
    )


def _exp_vmo_witness(ctx: RunContext) -> ExperimentResult:
    nu = bloom_weight(ctx.mu, ctx.lam, ctx.setup)
    alpha = ctx.setup.alpha
    r = float(ctx.params.get("r", 1.0))
    profile_rows, distance_rows, witness_rows = [], [], []
    assertions, flags = [], []
    for sid, b in ctx.symbols:
        prof = oscillation.vmo_profile(b, nu, alpha, r=r)
        profile_rows.extend(
            (sid, s, ps, sm, lg)
            for s, ps, sm, lg in zip(prof.scales, prof.per_scale_sup,
                                     prof.small_scale, prof.large_scale)
        )
        distance_rows.extend((sid, rad, d) for rad, d in zip(prof.radii, prof.distance))
        witness = oscillation.vmo_witness(
            b, nu, alpha,
            c0=float(ctx.params.get("c0", 0.5)),
            mode=ctx.params.get("mode"),
            r=r,
            theta=float(ctx.params.get("theta", 0.125)),
            min_pairs=int(ctx.params.get("min_pairs", 2)),
        )
        if witness is None:
            witness_rows.append((sid, "none", "", "", "", "", ""))
            flags.append(f"no-witness:{sid}")
            continue
        for k, ((cube, core), osc) in enumerate(
            zip(witness.entries, witness.oscillations)
        ):
            gen, idx = _cube_key(cube)
            witness_rows.append((sid, "found", witness.mode, gen, idx,
                                 int(core.size), float(osc)))
        assertions.append(
            _assertion(f"witness-oscillation:{sid}",
                       all(o >= witness.threshold * (1.0 - HARD_TOL)
                           for o in witness.oscillations),
                       detail=f"{len(witness)} pairs at threshold "
                              f"{witness.threshold:.6g} in mode {witness.mode}")
        )
    return ExperimentResult(
        tables={
            "profile": (("symbol", "scale", "per_scale_sup", "small_scale_sup",
                         "large_scale_sup"), profile_rows),
            "distance": (("symbol", "radius", "distance_sup"), distance_rows),
            "witness": (("symbol", "status", "mode", "generation", "index",
                         "core_cells", "oscillation"), witness_rows),
        },
        assertions=assertions,
        flags=flags,
    )


_EXPERIMENT_FUNCS = {
    "weights-check": _exp_weights_check,
    "bloom-verify": _exp_bloom_verify,
    "bmo-compute": _exp_bmo_compute,
    "jn-verify": _exp_jn_verify,
    "sparse-dominate": _exp_sparse_dominate,
    "commutator-sweep": _exp_commutator_sweep,
    "compactness-profile": _exp_compactness_profile,
    "vmo-witness": _exp_vmo_witness,
}


# -- report emission -----------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (np.floating,)):
        return format(float(value), ".17g")
    return str(value)


def emit_report(experiment: str, result: ExperimentResult, out_dir: Path,
                config_echo: dict) -> list:
    """One CSV per table plus summary.json; returns the written paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output dir {out_dir}: {exc}") from exc
    written = []
    for name, (header, rows) in result.tables.items():
        path = out_dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        written.append(path)
    summary = {
        "experiment": experiment,
        "schema": SCHEMA_VERSION,
        "assertions": result.assertions,
        "hard_passed": sum(1 for a in result.assertions if a["hard"] and a["ok"]),
        "hard_failed": len(result.hard_failures),
        "flags": sorted(result.flags),
        "headline": result.headline,
        "config": config_echo,
    }
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    written.append(path)
    return written


def _resolve_out(cfg: dict, out_dir, default_leaf: str) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.get("out"):
        return Path(cfg["out"])
    return Path("runs") / default_leaf


# -- run / sweep ---------------------------------------------------------------


def run(config, out_dir=None, seed=None, workers=None) -> int:
    """Execute one experiment; 0 pass / 1 hard-assertion failure / 2 bad config."""
    del workers  # accepted for CLI symmetry; single runs are serial
    try:
        cfg = _load(config)
        if seed is not None:
            cfg["seeds"] = [int(seed)]
        ctx = _build_context(cfg)
        result = _EXPERIMENT_FUNCS[ctx.experiment](ctx)
        out = _resolve_out(cfg, out_dir, ctx.experiment)
        files = emit_report(ctx.experiment, result, out, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # Library-level rejections (bad eps lists, degenerate probes, ...)
        # are configuration mistakes, not assertion failures.
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for a in result.assertions:
        kind = "hard" if a["hard"] else "soft"
        print(f"{'PASS' if a['ok'] else 'FAIL'} [{kind}] {a['name']}: {a['detail']}")
    for flag in sorted(result.flags):
        print(f"FLAG {flag}")
    print(f"wrote {len(files)} files to {out}")
    failures = result.hard_failures
    if failures:
        first = failures[0]
        print(f"first failure: {first['name']}: {first['detail']}", file=sys.stderr)
        return 1
    return 0


def _worker_cap(workers, n_points: int) -> int:
    env = os.environ.get(WORKER_ENV)
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"{WORKER_ENV} must be an integer, got {env!r}")
    elif workers is not None:
        cap = int(workers)
    else:
        cap = 4
    if cap < 1:
        raise ConfigError("worker cap must be >= 1")
    return min(cap, max(1, n_points))


def _point_config(cfg: dict, axis: str, value) -> dict:
    point = copy.deepcopy(cfg)
    point.pop("sweep", None)
    point.pop("out", None)
    if axis == "m":
        if value != int(value):
            raise ConfigError(f"m must be an integer, got {value!r}")
        point.setdefault("domain", {})["m"] = int(value)
    elif axis in ("p", "q"):
        point.setdefault("exponents", {})[axis] = float(value)
    elif axis == "pq":
        point.setdefault("exponents", {})
        point["exponents"]["p"] = float(value)
        point["exponents"]["q"] = float(value)
    else:  # symbol
        keep = [s for s in point.get("symbols") or [] if str(s.get("id")) == str(value)]
        if not keep:
            raise ConfigError(f"sweep symbol {value!r} not among config symbols")
        point["symbols"] = keep
    return point


def _point_tag(axis: str, value) -> str:
    if isinstance(value, float) and value == int(value):
        return f"{axis}-{int(value)}"
    return f"{axis}-{value}"


def _run_point(point_cfg: dict):
    ctx = _build_context(point_cfg)
    return _EXPERIMENT_FUNCS[ctx.experiment](ctx)


def sweep(config, out_dir=None, seed=None, workers=None) -> int:
    """Repeat the configured experiment along one axis, one row per point."""
    try:
        cfg = _load(config)
        if seed is not None:
            cfg["seeds"] = [int(seed)]
        spec = cfg.get("sweep")
        if not isinstance(spec, dict):
            raise ConfigError("sweep needs a 'sweep' object with axis and values")
        axis = spec.get("axis")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
        values = spec.get("values")
        if not isinstance(values, (list, tuple)):
            raise ConfigError("sweep values must be a list")
        experiment = cfg.get("experiment")
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        cap = _worker_cap(workers, len(values))
        out = _resolve_out(cfg, out_dir, f"sweep-{experiment}")
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    points = []
    for value in values:
        try:
            points.append((value, _point_config(cfg, axis, value), None))
        except ConfigError as exc:
            points.append((value, None, str(exc)))

    outcomes = []
    with ThreadPoolExecutor(max_workers=cap) as pool:
        futures = []
        for value, point_cfg, err in points:
            if point_cfg is None:
                futures.append(None)
            else:
                futures.append(pool.submit(_run_point, point_cfg))
        for (value, point_cfg, err), future in zip(points, futures):
            if future is None:
                outcomes.append((value, "config-error", err, None))
                continue
            try:
                outcomes.append((value, "ok", "", future.result()))
            except (ConfigError, ValueError) as exc:
                outcomes.append((value, "config-error", str(exc), None))
            except Exception as exc:  # row-level status, not a crashed sweep
                outcomes.append((value, "error", f"{type(exc).__name__}: {exc}", None))

    headline_keys = sorted(
        {k for _, _, _, res in outcomes if res is not None for k in res.headline}
    )
    header = [axis, "status", "detail", "hard_passed", "hard_failed", *headline_keys]
    rows, any_bad = [], False
    for value, status, detail, res in outcomes:
        if res is None:
            rows.append([_fmt(value), status, detail, "", "",
                         *[""] * len(headline_keys)])
            any_bad = True
            continue
        failed = len(res.hard_failures)
        passed = sum(1 for a in res.assertions if a["hard"] and a["ok"])
        status = "ok" if failed == 0 else "assertion-failed"
        any_bad = any_bad or failed > 0
        point_dir = out / _point_tag(axis, value)
        emit_report(cfg["experiment"], res, point_dir, {"axis": axis, "value": value})
        rows.append([
            _fmt(value), status, detail, str(passed), str(failed),
            *[_fmt(res.headline[k]) if k in res.headline else ""
              for k in headline_keys],
        ])

    path = out / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path} ({len(rows)} points)")
    return 1 if any_bad else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dyadlab",
        description="Dyadic two-weight commutator experiments from JSON configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "execute one experiment"),
                           ("sweep", "repeat an experiment along one axis")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, help="path to a JSON config")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="replace the config seed list with this one seed")
        sp.add_argument("--workers", type=int, default=None,
                        help=f"sweep worker cap (env {WORKER_ENV} overrides)")
    args = parser.parse_args(argv)
    command = run if args.command == "run" else sweep
    return command(args.config, out_dir=args.out, seed=args.seed,
                   workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
