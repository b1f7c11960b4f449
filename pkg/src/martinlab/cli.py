"""Command line runner: ``martinlab run <config.json>`` and ``martinlab list-studies``.

A config is one JSON document naming a study, the process, the domain and
per-study parameters. Every run writes results.csv, meta.json and
summary.txt into its output directory, all three or none.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import counterexample as cx
from . import geometry as geo
from . import kernels as kn
from . import potential as pt
from .mc import ReliabilityError, workers
from .sampler import estimate_exit_time, walk_batch

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

STUDIES = {
    "kernels": {
        "anchor": "Lemma 4.2 (Dynkin formula on the ball) and the ball exit kernels",
        "params": ["radii", "x", "n"],
        "needs": ["process"],
        "about": "Poisson-kernel normalisation, Ikeda-Watanabe identity, exit time, exit-law KS test",
    },
    "oscillation": {
        "anchor": "Lemma 4.4 (oscillation reduction), relative oscillation",
        "params": ["f", "g", "radii", "m_points", "n"],
        "needs": ["process", "domain", "boundary"],
        "about": "sup/inf of f/g over D cap B(x0, r) along a dyadic schedule, fitted contraction",
    },
    "boundary-limit": {
        "anchor": "Theorem 3.1 (boundary limit via ring functionals)",
        "params": ["f", "g", "radii", "n_outer", "pointwise_x", "n_pointwise"],
        "needs": ["process", "domain", "boundary"],
        "about": "lim M_{r,inf}(f)/M_{r,inf}(g) against the pointwise ratio f(x)/g(x)",
    },
    "accessibility": {
        "anchor": "Remark 3.2 (accessible / inaccessible boundary points)",
        "params": ["radii", "n_outer"],
        "needs": ["process", "domain", "boundary"],
        "about": "divergence of M_{r,R}(s_{D cap B(x0,R)}) as r -> 0",
    },
    "martin": {
        "anchor": "Martin kernel as the boundary limit of Green-function ratios; Theorem 3.7(b) formula",
        "params": ["route", "x", "z", "approach", "n", "cutoff"],
        "needs": ["process", "domain", "boundary"],
        "about": "Martin kernel by Green ratios and by the nu-weighted Green integral",
    },
    "counterexample": {
        "anchor": "mixture Example (Brownian motion plus stable process)",
        "params": ["c1", "c2", "alpha", "xs", "n", "refine"],
        "needs": [],
        "about": "gap f(x)/g(x) - f(-x)/g(-x) on (-1, 1) minus {0}, with a c1 = 0 control",
    },
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_point = {"type": "array", "items": _num, "minItems": 1}
_radii = {"type": "array", "items": _pos, "minItems": 1}
_pieces = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 3, "maxItems": 3,
              "prefixItems": [_num, {"type": ["number", "null"]}, _num]},
}

_PARAMS = {
    "kernels": {"radii": _radii, "x": _point, "n": _posint},
    "oscillation": {"f": _pieces, "g": _pieces, "radii": _radii, "m_points": _posint,
                    "n": _posint},
    "boundary-limit": {"f": _pieces, "g": _pieces, "radii": _radii, "n_outer": _posint,
                       "pointwise_x": {"type": "array", "items": _pos},
                       "n_pointwise": _posint},
    "accessibility": {"radii": _radii, "n_outer": _posint},
    "martin": {"route": {"enum": ["green-ratio", "inaccessible", "both"]}, "x": _point,
               "z": _point, "approach": {"type": "array", "items": _point, "minItems": 1},
               "n": _posint, "cutoff": {"type": "number", "minimum": 0}},
    "counterexample": {"c1": {"type": "number", "minimum": 0}, "c2": _pos,
                       "alpha": {"type": "number", "exclusiveMinimum": 1, "exclusiveMaximum": 2},
                       "xs": {"type": "array", "items": _pos, "minItems": 1}, "n": _posint,
                       "refine": {"type": "boolean"}, "control": {"type": "boolean"},
                       "eps0": _pos, "kappa": _pos, "kappa_bm": _pos},
}

_REQUIRED = {
    "kernels": [],
    "oscillation": ["f", "g", "radii"],
    "boundary-limit": ["f", "g", "radii"],
    "accessibility": ["radii"],
    "martin": ["x", "approach"],
    "counterexample": ["xs"],
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["study"],
    "properties": {
        "study": {"enum": list(STUDIES)},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "process": {
            "type": "object", "additionalProperties": False, "required": ["d", "alpha"],
            "properties": {"d": _posint,
                           "alpha": {"type": "number", "exclusiveMinimum": 0,
                                     "exclusiveMaximum": 2}},
        },
        "domain": {"type": "object"},
        "boundary": {
            "type": "object", "additionalProperties": False, "required": ["x0", "R"],
            "properties": {"x0": _point, "R": _pos, "xref": _point},
        },
        "params": {"type": "object"},
    },
    "allOf": [
        {"if": {"properties": {"study": {"const": name}}},
         "then": {"required": STUDIES[name]["needs"],
                  "properties": {"params": {"type": "object", "additionalProperties": False,
                                            "required": _REQUIRED[name],
                                            "properties": _PARAMS[name]}}}}
        for name in STUDIES
    ],
}


class ConfigError(ValueError):
    pass


class StudyError(RuntimeError):
    def __init__(self, op: str, err: Exception):
        super().__init__(f"{op}: {err}")
        self.op = op


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from e
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})") from e
    validate_config(cfg, str(path))
    return cfg


def validate_config(cfg, where: str = "config") -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        loc = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: field {loc}: {e.message}")
    params = cfg.get("params", {})
    radii = params.get("radii")
    if cfg["study"] != "kernels" and radii is not None and any(b >= a for a, b in zip(radii, radii[1:])):
        raise ConfigError(f"{where}: field params.radii: must be strictly decreasing")
    if "domain" in cfg:
        try:
            dom = geo.from_json(cfg["domain"])
        except (KeyError, TypeError, ValueError, geo.DomainError) as e:
            raise ConfigError(f"{where}: field domain: {e}") from e
        d = cfg.get("process", {}).get("d")
        if d is not None and dom.dim != d:
            raise ConfigError(f"{where}: field domain: dimension {dom.dim} != process.d {d}")
    for key in ("f", "g"):
        for i, (lo, hi, _) in enumerate(params.get(key, [])):
            if hi is not None and not hi > lo:
                raise ConfigError(f"{where}: field params.{key}.{i}: need lo < hi")


# ---------------------------------------------------------------------------------------
# studies


@dataclass
class Report:
    rows: list = field(default_factory=list)
    lines: list = field(default_factory=list)

    def add(self, quantity: str, r, mean, stderr=0.0, n=0, seed=0):
        self.rows.append((quantity, r, float(mean), float(stderr), int(n), int(seed)))

    def say(self, line: str):
        self.lines.append(line)


def _guard(op):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except (ReliabilityError, geo.EmptyRegionError, ArithmeticError,
                    kn.CapabilityError) as e:
                raise StudyError(op, e) from e
        return inner
    return wrap


def _pieces(raw):
    return tuple((float(lo), math.inf if hi is None else float(hi), float(w)) for lo, hi, w in raw)


def _process(cfg):
    return kn.ProcessSpec(cfg["process"]["d"], cfg["process"]["alpha"])


def _harmonic(spec, dom, raw):
    if spec.d != 1:
        raise ConfigError("interval data f, g are available in d = 1 only")
    return pt.IntervalData(_pieces(raw), dom)


@_guard("kernels")
def study_kernels(cfg, seed, rep: Report):
    spec = _process(cfg)
    p = cfg.get("params", {})
    radii = p.get("radii", [0.5, 1.0, 2.0])
    n = p.get("n", 100_000)
    ok = True
    if spec.d <= 2:
        for r in radii:
            x = np.zeros(spec.d)
            x[0] = 0.3 * r
            mass = pt.poisson_mass(spec, r, x)
            rep.add("poisson_mass", r, mass)
            ok &= abs(mass - 1.0) < 1e-6
        rep.say(f"poisson normalization {'pass' if ok else 'FAIL'}")
    else:
        rep.say("poisson normalization skipped (d > 2)")
    if spec.supports_green and spec.d <= 2:
        x = np.array(p.get("x", [0.3] + [0.2] * (spec.d - 1)), dtype=float)
        y = np.array([1.3] + [0.4] * (spec.d - 1))
        lhs, rhs, gap = pt.ikeda_watanabe_check(spec, 1.0, x, y)
        rep.add("ikeda_watanabe_gap", 1.0, gap)
        rep.say(f"ikeda-watanabe identity {'pass' if gap < 1e-4 else 'FAIL'} (gap {gap:.3e})")
    else:
        rep.say("ikeda-watanabe identity not applicable (needs alpha < d)")
    exact = float(kn.ball_exit_time(spec, 1.0, np.zeros(spec.d)))
    ball = geo.Ball(np.zeros(spec.d), 1.0)
    est = estimate_exit_time(spec, ball, np.zeros(spec.d), n, seed)
    rep.add("exit_time_exact", 0.0, exact)
    rep.add("exit_time_mc", 0.0, est.mean, est.stderr, est.n, seed)
    rep.say(f"exit time of the unit ball at 0: {exact:.17g}")
    # off-centre start: the walk takes many steps, so the estimate is genuinely random
    x = np.zeros(spec.d)
    x[0] = 0.5
    exact = float(kn.ball_exit_time(spec, 1.0, x))
    est = estimate_exit_time(spec, ball, x, n, seed + 1)
    z = abs(est.mean - exact) / est.stderr
    rep.add("exit_time_exact", 0.5, exact)
    rep.add("exit_time_mc", 0.5, est.mean, est.stderr, est.n, seed + 1)
    rep.say(f"exit time at distance 0.5: exact {exact:.6f}, walk-on-spheres "
            f"{est.mean:.6f} +- {est.stderr:.6f} ({'pass' if z < 3 else 'FAIL'}, z = {z:.2f})")
    if spec.d == 1 and spec.supports_green:
        for r in radii:
            _, _, gap = pt.dynkin_check(spec, r, 0.3 * r, ((lambda y: 1.0), ()))
            rep.add("dynkin_gap", r, gap)
            ok &= gap < 1e-4
        rep.say(f"dynkin identity on the ball {'pass' if ok else 'FAIL'}")
    b = walk_batch(spec, ball, np.zeros(spec.d), n, seed, key=(1,))
    from scipy import stats
    radius = np.linalg.norm(b.exit_points, axis=1)
    ks = stats.kstest(radius, lambda t: kn.ball_exit_radial_cdf(spec, t))
    rep.add("exit_law_ks_pvalue", 1.0, ks.pvalue, 0.0, n, seed)
    rep.say(f"exit law KS p-value {ks.pvalue:.4f} ({'pass' if ks.pvalue > 0.01 else 'FAIL'})")


def _boundary(cfg):
    b = cfg["boundary"]
    return np.array(b["x0"], dtype=float), float(b["R"]), b.get("xref")


@_guard("oscillation")
def study_oscillation(cfg, seed, rep: Report):
    spec = _process(cfg)
    dom = geo.from_json(cfg["domain"])
    x0, _, _ = _boundary(cfg)
    p = cfg["params"]
    f, g = _harmonic(spec, dom, p["f"]), _harmonic(spec, dom, p["g"])
    m, n = p.get("m_points", 8), p.get("n", 100_000)
    spreads, errs, radii = [], [], []
    for r in p["radii"]:
        o = pt.oscillation(spec, f, g, x0, r, m, n, seed)
        if o.vacuous:
            rep.say(f"r={r:g}: D cap B(x0, r) looks empty, oscillation vacuous")
            continue
        rep.add("osc_ratio", r, o.ratio, o.ratio_err, n, seed)
        rep.add("osc_spread", r, o.spread, o.spread_err, n, seed)
        spreads.append(o.spread)
        errs.append(o.spread_err)
        radii.append(r)
    if len(radii) >= 3:
        fac, upper, _, _ = pt.fit_contraction(radii, spreads, errs)
        rep.add("contraction_factor", "", fac, 0.0, n, seed)
        rep.add("contraction_factor_upper95", "", upper, 0.0, n, seed)
        rep.say(f"per-octave contraction factor {fac:.4f} (95% upper {upper:.4f}): "
                f"{'contracting' if upper < 1 else 'not significant'}")


@_guard("boundary-limit")
def study_boundary_limit(cfg, seed, rep: Report):
    spec = _process(cfg)
    dom = geo.from_json(cfg["domain"])
    x0, R, _ = _boundary(cfg)
    p = cfg["params"]
    f, g = _harmonic(spec, dom, p["f"]), _harmonic(spec, dom, p["g"])
    n = p.get("n_outer", 100_000)
    bl = pt.boundary_limit(spec, f, g, x0, R, p["radii"], n, 1, seed)
    for row in bl.rows:
        rep.add("ring_ratio", row["r"], row["ratio"], row["ratio_se"], n, seed)
    rep.add("limit", "", bl.limit.mean, bl.limit.stderr, bl.limit.n, seed)
    rep.say(f"boundary limit {bl.limit.mean:.6f} +- {bl.limit.stderr:.6f} "
            f"({'stabilized' if bl.stabilized else 'NOT stabilized'})")
    npw = p.get("n_pointwise", 100_000)
    for xs in p.get("pointwise_x", []):
        x = x0.copy()
        x[0] += xs
        _, _, q = pt.pointwise_ratio(spec, f, g, x, npw, seed)
        rep.add("pointwise_ratio", xs, q.mean, q.stderr, npw, seed)
        rel = abs(q.mean / bl.limit.mean - 1)
        rep.say(f"pointwise f/g at distance {xs:g}: {q.mean:.6f} +- {q.stderr:.6f} "
                f"(relative difference {rel:.4f})")


@_guard("accessibility")
def study_accessibility(cfg, seed, rep: Report):
    spec = _process(cfg)
    dom = geo.from_json(cfg["domain"])
    x0, R, _ = _boundary(cfg)
    p = cfg["params"]
    n = p.get("n_outer", 20_000)
    res = pt.classify_accessibility(spec, dom, x0, R, p["radii"], n, 1, seed)
    for row in res.rows():
        rep.add("M", row["r"], row["M"], row["M_se"], n, seed)
        rep.add("increment", row["r"], row["increment"], row["increment_se"], n, seed)
    rep.add("slope", "", res.slope, res.slope_se, n, seed)
    rep.add("plateau_slope", "", res.plateau_slope, res.plateau_se, n, seed)
    rep.say(f"verdict: {res.verdict} (slope {res.slope:.4f} +- {res.slope_se:.4f})")


@_guard("martin")
def study_martin(cfg, seed, rep: Report):
    spec = _process(cfg)
    dom = geo.from_json(cfg["domain"])
    x0, _, xref = _boundary(cfg)
    p = cfg["params"]
    if xref is None:
        raise ConfigError("field boundary.xref: required for the martin study")
    z = np.array(p.get("z", x0), dtype=float)
    x = np.array(p["x"], dtype=float)
    n = p.get("n", 100_000)
    route = p.get("route", "green-ratio")
    res = None
    if route in ("green-ratio", "both"):
        res = pt.martin_kernel_green_ratio(spec, dom, x, xref, z, p["approach"], n, seed)
        for row in res.rows:
            rep.add("green_ratio", row["dist"], row["ratio"], row["ratio_se"], n, seed)
        rep.add("martin_green_ratio", "", res.kernel.mean, res.kernel.stderr, res.kernel.n, seed)
        rep.say(f"Martin kernel (Green ratio) {res.kernel.mean:.6f} +- {res.kernel.stderr:.6f}")
        if isinstance(dom, geo.Ball):
            exact = pt.ball_martin_kernel(spec, x - dom.center, np.asarray(xref) - dom.center,
                                          z - dom.center, dom.radius)
            rep.add("martin_closed_form", "", exact)
            rep.say(f"closed-form ball Martin kernel {exact:.6f} "
                    f"(relative difference {abs(res.kernel.mean / exact - 1):.4f})")
    if route in ("inaccessible", "both"):
        cut = p.get("cutoff", 0.0)
        e = pt.martin_kernel_inaccessible(spec, dom, x, xref, z, n, seed, cutoff=cut)
        rep.add("martin_nu_integral", cut, e.mean, e.stderr, e.n, seed)
        rep.say(f"Martin kernel (nu-weighted Green integral, cutoff {cut:g}) "
                f"{e.mean:.6f} +- {e.stderr:.6f}")
        if res is not None:
            comb = math.hypot(e.stderr, res.kernel.stderr)
            agree = abs(e.mean - res.kernel.mean) <= 3 * comb
            rep.say(f"routes {'agree' if agree else 'DISAGREE'} within 3 combined standard errors")


@_guard("counterexample")
def study_counterexample(cfg, seed, rep: Report):
    p = cfg["params"]
    base = dict(c1=p.get("c1", 1.0), c2=p.get("c2", 1.0), alpha=p.get("alpha", 1.5))
    for k in ("eps0", "kappa", "kappa_bm"):
        if k in p:
            base[k] = p[k]
    n = p.get("n", 1_000_000)
    runs = [("", cx.MixtureSpec(**base))]
    if p.get("refine", False):
        ms = runs[0][1]
        runs += [("_dt_half", ms.halved_dt()), ("_eps_half", ms.halved_eps())]
    if p.get("control", True):
        runs.append(("_control", cx.MixtureSpec(**{**base, "c1": 0.0})))
    for tag, ms in runs:
        gaps = []
        for x in p["xs"]:
            r = cx.gap_statistic(ms, x, n, seed)
            rep.add("gap" + tag, x, r.gap.mean, r.gap.stderr, r.gap.n, seed)
            rep.add("w" + tag, x, r.w.mean, r.w.stderr, r.w.n, seed)
            rep.add("absorbed" + tag, x, r.absorbed_fraction, 0.0, r.gap.n, seed)
            gaps.append(r.gap)
        positive = all(gp.mean - 1.96 * gp.stderr > 0 for gp in gaps)
        label = tag.lstrip("_") or "main"
        rep.say(f"{label} (c1={ms.c1:g}): gap " + ", ".join(
            f"{gp.mean:.4f}+-{gp.stderr:.4f}" for gp in gaps)
            + f"; sign {'positive' if positive else 'not resolved'}")


RUNNERS = {
    "kernels": study_kernels,
    "oscillation": study_oscillation,
    "boundary-limit": study_boundary_limit,
    "accessibility": study_accessibility,
    "martin": study_martin,
    "counterexample": study_counterexample,
}


# ---------------------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def results_csv(rep: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "r", "mean", "stderr", "n", "seed"])
    for q, r, mean, se, n, seed in rep.rows:
        w.writerow([q, _fmt(r), _fmt(mean), _fmt(se), n, seed])
    return buf.getvalue()


def _versions() -> dict:
    import numba
    import scipy
    return {"martinlab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "jsonschema": metadata.version("jsonschema")}


def write_outputs(out: Path, files: dict[str, str]) -> None:
    """Write all files into a fresh directory and move it into place in one rename."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text)
        old = None
        if out.exists():
            old = out.with_name(f".{out.name}.old-{os.getpid()}")
            os.replace(out, old)
        os.replace(tmp, out)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run(config_path, threads: int | None = None, seed: int | None = None,
        out: str | None = None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    seed = cfg.get("seed", 0) if seed is None else seed
    out_dir = Path(os.environ.get("MARTINLAB_OUT") or out or cfg.get("output", "martinlab-out"))
    rep = Report()
    t0 = time.time()
    try:
        with workers(threads or os.cpu_count() or 1):
            RUNNERS[cfg["study"]](cfg, seed, rep)
    except ConfigError as e:
        print(f"config error: {config_path}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StudyError as e:
        print(f"runtime error in {e}", file=sys.stderr)
        return EXIT_RUNTIME
    wall = time.time() - t0
    meta = {"config": cfg, "seed": seed, "threads": threads or os.cpu_count(),
            "wall_time_s": wall, "versions": _versions()}
    summary = [f"study: {cfg['study']}", f"seed: {seed}", *rep.lines]
    write_outputs(out_dir, {"results.csv": results_csv(rep),
                            "meta.json": json.dumps(meta, indent=2, sort_keys=True) + "\n",
                            "summary.txt": "\n".join(summary) + "\n"})
    print("\n".join(summary))
    return EXIT_OK


def list_studies(as_json: bool = False) -> str:
    if as_json:
        return json.dumps(STUDIES, indent=2)
    lines = []
    for name, info in STUDIES.items():
        lines.append(f"{name}: {info['about']}")
        lines.append(f"    verifies: {info['anchor']}")
        lines.append(f"    params: {', '.join(info['params'])}")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="martinlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    pr = sub.add_parser("run", help="run a study described by a JSON config")
    pr.add_argument("config")
    pr.add_argument("--threads", type=int, default=None, help="worker count (default: all cores)")
    pr.add_argument("--seed", type=int, default=None, help="override the config seed")
    pl = sub.add_parser("list-studies", help="print the study catalog")
    pl.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    if args.cmd == "list-studies":
        print(list_studies(args.json))
        return EXIT_OK
    if args.threads is not None and args.threads < 1:
        ap.error("--threads must be >= 1")
    return run(args.config, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
