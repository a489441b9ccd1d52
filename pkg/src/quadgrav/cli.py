"""Command-line driver: ``quadgrav <command> [options]``.

Commands: check-flat, energy, classify, conserve, gauge, report.  Options
may also come from a sectioned ``key = value`` file given with ``--config``
(section ``[run]`` plus one section per command); flags override the file,
which overrides the defaults.  Exit codes: 0 when every check passes, 1 when
a check fails, 2 for configuration or domain errors, 3 when a limit does not
converge.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from . import classify as cls
from . import energy as en
from . import geometry as geo
from . import initdata as idt
from . import linearize as lin
from .geometry import CARTESIAN, SPHERICAL, ChartPoint, CouplingPair, MetricSpec

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGENT = 0, 1, 2, 3
COMMANDS = ("check-flat", "energy", "classify", "conserve", "gauge", "report")

DEFAULTS = {
    "format": "json", "tol": None, "radii": "50,100,200,400", "quad": "8x16", "seed": 0,
    "points": 20, "params": "", "metric": "sds", "background": "sds", "h": "family-tangent",
    "xi": "dt", "check": "div-p", "scan_ratios": False, "fsmk_domain": None, "family": None,
    "conformal_map": None, "slice": "schwarzschild", "mode": "lambda-ae", "alpha": None,
    "beta": None, "lapse": None, "shift": None, "conformal": None, "timing": False,
}

METRIC_DEFAULTS = {
    "schwarzschild": {"m": 1.0},
    "sds": {"m": 1.0, "lambda": 0.05},
    "reissner_nordstrom": {"r0": 1.0, "rq": 0.5},
    "fsmk": {"m": 1.0, "c1": 1.0, "c2": 0.5},
    "bumpy_static": {"m": 1.0, "q": 0.3},
    "polywave": {"amp": 0.5},
    "de_sitter_flat": {"lambda": 0.3},
}

TOLERANCES = {"check-flat": 1e-9, "energy": 0.01, "conserve-div-a": 1e-8, "conserve-p-eq-dq": 1e-8,
              "conserve-div-p": 1e-7, "gauge": 1e-9, "classify": 1e-10}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# reports


@dataclass
class Check:
    name: str
    value: object
    target: object
    tol: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "value": _plain(self.value), "target": _plain(self.target),
                "tol": self.tol, "pass": bool(self.passed)}


@dataclass
class RunReport:
    command: str
    config: dict
    checks: list = field(default_factory=list)
    timing_ms: float | None = None
    rows: list = field(default_factory=list)  # (radius, value) pairs for energy sweeps
    nonconvergent: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"command": self.command, "config": _plain(self.config),
                "checks": [c.to_dict() for c in self.checks], "timing_ms": self.timing_ms,
                "versions": {"quadgrav": __version__, "numpy": np.__version__}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        checks = [Check(c["name"], c["value"], c["target"], c["tol"], c["pass"]) for c in d["checks"]]
        return cls(d["command"], d["config"], checks, d["timing_ms"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.rows:
            w.writerow(["radius", "value"])
            for r, v in self.rows:
                w.writerow([repr(float(r)), repr(float(v))])
        else:
            w.writerow(["name", "value", "target", "tol", "pass"])
            for c in self.checks:
                d = c.to_dict()
                w.writerow([d["name"], json.dumps(d["value"]), json.dumps(d["target"]), d["tol"], d["pass"]])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{self.command}"]
        for c in self.checks:
            tgt = "" if c.target is None else f" target {_fmt(c.target)}"
            tol = "" if c.tol is None else f" tol {c.tol:g}"
            lines.append(f"  {'PASS' if c.passed else 'FAIL'} {c.name}: {_fmt(c.value)}{tgt}{tol}")
        return "\n".join(lines) + "\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return json.dumps(_plain(x))


# ---------------------------------------------------------------------------
# configuration


def parse_kv(text: str | None) -> dict:
    """``"m=1,lambda=0.1"`` -> ``{"m": 1.0, "lambda": 0.1}``; values must be numbers."""
    out = {}
    if not text:
        return out
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        k, v = k.strip(), v.strip()
        try:
            out[k] = float(v)
        except ValueError:
            raise ConfigError(f"{k} must be a number, got {v!r}") from None
    return out


def parse_radii(text) -> list:
    try:
        r = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as err:
        raise ConfigError(f"bad radii {text!r}") from err
    if len(r) < 3 or any(b <= a for a, b in zip(r, r[1:])) or r[0] <= 0:
        raise ConfigError("radii must be at least three strictly increasing positive numbers")
    return r


def parse_quad(text) -> en.SphereQuadrature:
    try:
        a, b = str(text).lower().split("x")
        return en.sphere_quadrature(int(a), int(b))
    except (ValueError, en.BadOrder) as err:
        raise ConfigError(f"bad quadrature {text!r} (use NxM)") from err


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadgrav", description="Quadratic-curvature gravity checks.")
    p.add_argument("command", choices=COMMANDS)
    a = p.add_argument
    a("--config", help="sectioned key=value file")
    a("--format", choices=("json", "csv", "text"))
    a("--tol", type=float)
    a("--radii")
    a("--quad", help="NxM sphere quadrature")
    a("--seed", type=int)
    a("--points", type=int)
    a("--params", help="k=v,... metric or slice parameters")
    a("--metric", help="catalog name or custom:NAME")
    a("--background")
    a("--h", help="catalog:NAME or family-tangent")
    a("--xi", help="Killing field: dt, rot_z, dx, boost_x")
    a("--check", choices=("div-a", "p-eq-dq", "div-p"))
    a("--scan-ratios", action="store_true", default=None)
    a("--fsmk-domain", help="m=..,lambda=..,mu=..")
    a("--family", choices=("a", "b"))
    a("--conformal-map", help="m=..,lambda=..,mu=..[,r=..]")
    a("--slice", help="flat, schwarzschild or conformally_flat")
    a("--mode", choices=("static", "lambda-ae"))
    a("--alpha", type=float)
    a("--beta", type=float)
    a("--lapse", help="a,rho for N = 1 + a r^-rho")
    a("--shift", help="b,rho for X^i = b r^-rho")
    a("--conformal", help="s,sigma for Omega = 1 + s r^-sigma")
    a("--timing", action="store_true", default=None)
    return p


def _read_config_file(path: str, command: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as err:
        raise ConfigError(f"cannot read config {path!r}: {err}") from err
    out = {}
    for section in ("run", command):
        if cp.has_section(section):
            for k, v in cp.items(section):
                key = k.replace("-", "_")
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key {k!r}")
                out[key] = v
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    d = DEFAULTS[key]
    if key in ("scan_ratios", "timing"):
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
    if key in ("seed", "points"):
        return int(value)
    if key in ("alpha", "beta", "tol"):
        return float(value)
    return value if d is None or isinstance(value, str) else value


def resolve_config(argv) -> tuple[str, dict]:
    ns = build_parser().parse_args(argv)
    cfg = dict(DEFAULTS)
    if ns.config:
        cfg.update({k: _coerce(k, v) for k, v in _read_config_file(ns.config, ns.command).items()})
    for k in DEFAULTS:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    try:
        cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return ns.command, cfg


def _metric_spec(name: str, params: str) -> MetricSpec:
    if name.startswith("custom:"):
        name = name.split(":", 1)[1]
    prm = dict(METRIC_DEFAULTS.get(name, {}))
    given = parse_kv(params)
    if name == "fsmk" and "mu" in given:
        prm = {"m": prm["m"]}
    prm.update(given)
    try:
        return MetricSpec(name, prm)
    except geo.BadParams as err:
        raise ConfigError(str(err)) from err


def _perturbation(text: str) -> lin.Perturbation:
    if text in ("family-tangent", "family_tangent"):
        return lin.Perturbation("family_tangent")
    if text.startswith("catalog:"):
        return lin.Perturbation(text.split(":", 1)[1])
    return lin.Perturbation(text)


def _couplings(cfg) -> CouplingPair:
    a = 1.0 if cfg["alpha"] is None else float(cfg["alpha"])
    b = 1.0 if cfg["beta"] is None else float(cfg["beta"])
    return CouplingPair(a, b)


def sample_points(spec: MetricSpec, n: int, seed: int) -> ChartPoint:
    """Seeded points inside the metric's static domain."""
    rng = np.random.default_rng(seed)
    e = spec.entry
    if e.native == CARTESIAN:
        c = rng.uniform(-1.0, 1.0, size=(n, 4))
        return ChartPoint(CARTESIAN, c)
    out = []
    for _ in range(1000 * n):
        r = rng.uniform(1.5, 10.0)
        ok = True
        if e.lapse is not None:
            ok = float(spec.lapse2(r)) > 0.05
        th = rng.uniform(0.3, math.pi - 0.3)
        ph = rng.uniform(0.0, 2 * math.pi)
        t = rng.uniform(-1.0, 1.0)
        if ok:
            out.append([t, r, th, ph])
        if len(out) == n:
            return ChartPoint(SPHERICAL, np.array(out))
    raise ConfigError("could not sample points in the static domain")


# ---------------------------------------------------------------------------
# commands


def run_check_flat(cfg) -> RunReport:
    spec = _metric_spec(cfg["metric"], cfg["params"])
    cp = _couplings(cfg)
    tol = cfg["tol"] or TOLERANCES["check-flat"]
    pts = sample_points(spec, int(cfg["points"]), int(cfg["seed"]))
    g = geo.eval_metric(spec, pts, 4)
    res = geo.a_tensor(g, cp, strict=False)
    val = float(np.max(np.abs(res.A.value))) / max(res.scale, 1e-300)
    rep = RunReport("check-flat", cfg)
    rep.checks.append(Check("max|A|/scale", val, 0.0, tol, val < tol))
    return rep


def run_energy(cfg) -> RunReport:
    cp = _couplings(cfg)
    radii = parse_radii(cfg["radii"])
    quad = parse_quad(cfg["quad"])
    tol = cfg["tol"] or TOLERANCES["energy"]
    if cfg["mode"] == "static":
        spec = _metric_spec(cfg["metric"], cfg["params"])
        target = None
        if spec.id == "fsmk" and cp.conformal and not spec.params.get("lambda", 0.0):
            target = en.fsmk_target(cp, geo.fsmk_coefficients(spec.params)[1])
        report = en.energy_static_report(spec, cp, radii, quad, target, tol)
    else:
        prm = parse_kv(cfg["params"])
        try:
            sl = idt.named_slice(cfg["slice"], prm)
        except idt.InitDataError as err:
            raise ConfigError(str(err)) from err
        if cfg["lapse"] or cfg["shift"]:
            N = X = None
            if cfg["lapse"]:
                a, rho = (float(v) for v in str(cfg["lapse"]).split(","))
                N = idt.power_lapse(a, rho)
            if cfg["shift"]:
                b, rho = (float(v) for v in str(cfg["shift"]).split(","))
                X = idt.power_shift([b, b, b], rho)
            sl = idt.with_observer(sl, N, X)
        sl = idt.prepare(sl)
        if cfg["conformal"]:
            s, sigma = (float(v) for v in str(cfg["conformal"]).split(","))
            sl = idt.conformal_slice(sl, idt.conformal_weight(s, sigma))
        report = en.energy_lambda_ae(sl, cp, radii, quad, tol=tol)
    rep = RunReport("energy", cfg)
    rep.rows = list(zip(report.radii, report.values))
    if report.limit is None:
        rep.nonconvergent = True
        rep.checks.append(Check("energy", None, report.target, tol, False))
        return rep
    passed = True if report.target is None else bool(report.passed)
    rep.checks.append(Check("energy", report.limit, report.target, tol if report.target is not None else None,
                            passed))
    rep.checks.append(Check("fit exponent", report.exponent, None, None, True))
    return rep


def run_classify(cfg) -> RunReport:
    rep = RunReport("classify", cfg)
    tol = cfg["tol"] or TOLERANCES["classify"]
    if cfg["scan_ratios"]:
        found = cls.scan_ratios()
        rep.checks.append(Check("special ratios", [str(f) for f in sorted(found)],
                                [str(f) for f in sorted(cls.SPECIAL_RATIOS)], None,
                                set(found) == set(cls.SPECIAL_RATIOS)))
    if cfg["fsmk_domain"]:
        d = parse_kv(cfg["fsmk_domain"])
        try:
            dom = cls.fsmk_domain(d.get("m", 0.0), d.get("lambda", 0.0), d.get("mu", 0.0), cfg["family"])
            ivs = [[iv.lo, iv.hi] for iv in dom.intervals]
            rep.checks.append(Check(f"domain {dom.label}", ivs, None, None, True))
        except cls.NotAdmissible as err:
            rep.checks.append(Check(f"domain {err.label}", [], None, None, True))
    if cfg["conformal_map"]:
        d = parse_kv(cfg["conformal_map"])
        m, lam, mu = d.get("m", 0.0), d.get("lambda", 0.0), d.get("mu", 0.0)
        r = d.get("r")
        if r is None:
            dom = cls.fsmk_domain(m, lam, mu) if m > 0 else None
            r = dom.intervals[0].midpoint() if dom else 1.0
        try:
            res = cls.conformal_to_sds(m, lam, mu, r)
        except cls.ClassifyError as err:
            raise ConfigError(str(err)) from err
        rep.checks.append(Check("lambda tilde", res.lam_tilde, cls.lambda_tilde(m, lam, mu), None, True))
        rep.checks.append(Check("map residual", res.residual, 0.0, tol, res.residual < tol))
    if not rep.checks or cfg["alpha"] is not None or cfg["beta"] is not None:
        cp = _couplings(cfg)
        try:
            f, g = cls.exponents(cp)
        except cls.DegenerateCoupling as err:
            raise ConfigError(str(err)) from err
        tag = cls.special_ratio(cp)
        rep.checks.append(Check("exponents", [complex(f), complex(g)] if isinstance(f, complex)
                                else [f, g], None, None, True))
        rep.checks.append(Check("special ratio", None if tag is None else str(tag), None, None, True))
    return rep


def run_conserve(cfg) -> RunReport:
    cp = _couplings(cfg)
    rep = RunReport("conserve", cfg)
    kind = cfg["check"]
    tol = cfg["tol"] or TOLERANCES[f"conserve-{kind}"]
    if kind == "div-a":
        spec = _metric_spec(cfg["metric"], cfg["params"])
        pts = sample_points(spec, min(int(cfg["points"]), 5), int(cfg["seed"]))
        c = geo.curvature_stack(geo.eval_metric(spec, pts, 5))
        A = geo.a_tensor(c, cp, strict=False)
        div = geo.divergence(A.A, c)
        val = float(np.max(np.abs(div.value))) / max(A.A.norm_scale(), 1e-300)
        rep.checks.append(Check("div A", val, 0.0, tol, val < tol))
        return rep
    spec = _metric_spec(cfg["background"], cfg["params"])
    h = _perturbation(cfg["h"])
    xi = lin.KillingField(cfg["xi"])
    pts = sample_points(spec, min(int(cfg["points"]), 3), int(cfg["seed"]))
    worst = 0.0
    for k in range(pts.coords.shape[0]):
        p = ChartPoint(pts.chart, pts.coords[k])
        if kind == "p-eq-dq":
            forms = lin.q_fourth(spec, h, xi, cp, p, order=5)
            worst = max(worst, lin.p_eq_dq_residual(forms, spec, p, order=5))
        else:
            r = lin.conservation_check(spec, h, xi, cp, p, with_charge=False)
            worst = max(worst, r.div_P_residual)
    name = "P - delta Q" if kind == "p-eq-dq" else "div P"
    rep.checks.append(Check(name, worst, 0.0, tol, worst < tol))
    return rep


def run_gauge(cfg) -> RunReport:
    rep = RunReport("gauge", cfg)
    tol = cfg["tol"] or TOLERANCES["gauge"]
    prm = parse_kv(cfg["params"])
    prm.setdefault("lambda", 0.3)
    try:
        sl = idt.named_slice(cfg["slice"], prm)
    except idt.InitDataError as err:
        raise ConfigError(str(err)) from err
    if cfg["lapse"] or cfg["shift"]:
        N = X = None
        if cfg["lapse"]:
            a, rho = (float(v) for v in str(cfg["lapse"]).split(","))
            N = idt.power_lapse(a, rho)
        if cfg["shift"]:
            b, rho = (float(v) for v in str(cfg["shift"]).split(","))
            X = idt.power_shift([b, b, b], rho)
        sl = idt.with_observer(sl, N, X)
    sl = idt.prepare(sl)
    rng = np.random.default_rng(int(cfg["seed"]))
    dirs = rng.normal(size=(int(cfg["points"]), 3))
    pts = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True) * rng.uniform(3.0, 20.0, size=(dirs.shape[0], 1))
    s = idt.s_tensor(sl, pts)["residual"]
    rep.checks.append(Check("S tensor dual path", s, 0.0, tol, s < tol))
    v = idt.gauge_violation(sl, pts)
    rep.checks.append(Check("gauge source", v, 0.0, tol, v < tol))
    ds = idt.prepare(idt.de_sitter_flat_slice(float(prm["lambda"])))
    x = idt.seeds(pts, 4)
    gdd = ds.g_ddot(x).value
    err = float(np.max(np.abs(gdd - (10.0 / 3.0) * float(prm["lambda"]) * np.eye(3))))
    rep.checks.append(Check("de Sitter g_ddot", err, 0.0, 1e-12, err < 1e-12))
    return rep


def run_report(cfg) -> RunReport:
    """A compact suite over the other commands; parallel up to QUADGRAV_THREADS."""
    jobs = [
        ("check-flat", dict(cfg, metric="sds", params="", alpha=1.0, beta=1.0, points=10)),
        ("energy", dict(cfg, mode="static", metric="fsmk", params="m=1,c1=1,c2=0.5", alpha=-1.0, beta=3.0)),
        ("classify", dict(cfg, scan_ratios=True, alpha=-1.0, beta=3.0)),
        ("gauge", dict(cfg, slice="schwarzschild", params="m=1,lambda=0.3", points=5)),
    ]
    threads = max(1, int(os.environ.get("QUADGRAV_THREADS", "1") or 1))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda j: RUNNERS[j[0]](j[1]), jobs))
    rep = RunReport("report", cfg)
    for (name, _), r in zip(jobs, results):
        for c in r.checks:
            rep.checks.append(Check(f"{name}: {c.name}", c.value, c.target, c.tol, c.passed))
        rep.nonconvergent |= r.nonconvergent
    return rep


RUNNERS = {"check-flat": run_check_flat, "energy": run_energy, "classify": run_classify,
           "conserve": run_conserve, "gauge": run_gauge, "report": run_report}


def render(rep: RunReport, fmt: str) -> str:
    if fmt == "csv":
        return rep.to_csv()
    if fmt == "text":
        return rep.to_text()
    return rep.to_json() + "\n"


def main(argv=None) -> int:
    try:
        command, cfg = resolve_config(argv)
    except ConfigError as err:
        print(f"quadgrav: {err}", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        rep = RUNNERS[command](cfg)
    except (ConfigError, geo.GeometryError, lin.LinearizeError, idt.InitDataError,
            cls.ClassifyError, en.EnergyError) as err:
        print(f"quadgrav: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except en.NonConvergent as err:
        print(f"quadgrav: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENT
    if cfg["timing"]:
        rep.timing_ms = round((time.perf_counter() - start) * 1000.0, 3)
    sys.stdout.write(render(rep, cfg["format"]))
    if rep.nonconvergent:
        return EXIT_NONCONVERGENT
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
