"""Command-line front end: ``toric-clt <experiment> --config run.ini --out DIR``.

The config is an INI file::

    [potential]
    name = fs               ; fs | fs-product | fs-perturbed
    dim = 1                 ; fs, fs-perturbed
    factors = 1, 1          ; fs-product
    eps = 0.05              ; fs-perturbed
    bump = gaussian         ; fs-perturbed: gaussian | lorentzian

    [run]
    ks = 25, 50, 100, 200, 400
    base_points = 0; 1      ; rho vectors separated by ';'
    laplace_point = 0.37    ; x in P for the Laplace ratio

    [quadrature]
    nodes_per_axis = 80
    route = rho

    [bands]
    berry_esseen_slope = -0.65, -0.35

    [polytope]              ; optional, lattice experiment only
    rows = 1 0 0; 0 1 0; -1 -1 -1

Exit status: 0 when every band passes, 1 when one fails, 2 for a bad config,
3 for a numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .bergman import BergmanModel, build_measure, measure_summary, write_measure_csv
from .limits import (
    ConvergenceReport,
    EmptyWindowError,
    RateFitError,
    charfn_error,
    clt_error,
    covariance_error,
    default_test_functions,
    density_error,
    fit_rate,
    laplace_ratio_error,
    llt_error,
    mean_error,
)
from .polytope import DelzantPolytope, UnboundedPolytopeError
from .potential import (
    NonConvergenceError,
    NonInteriorPointError,
    PositivityError,
    SymplecticPotential,
    base_point,
    fubini_study,
    perturbed_potential,
    product_potential,
)
from .quadrature import (
    AlphaOutsidePolytopeError,
    BoundaryAlphaError,
    QuadratureSpec,
    log_norming_constants_x,
)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "run", "emit_plot_data", "main"]

EXPERIMENTS = (
    "lattice", "norming", "measure", "moments", "clt", "berry-esseen",
    "llt", "charfn", "laplace-ratio",
)
RATE_EXPERIMENTS = {"measure", "moments", "clt", "berry-esseen", "llt", "charfn", "laplace-ratio"}

DEFAULT_BANDS = {
    "clt_max_error": 0.05,
    "berry_esseen_slope": (-0.65, -0.35),
    "charfn_slope": (-0.65, -0.35),
    "llt_slope": (-1.25, -0.75),
    "llt_max_error": 0.05,
    "laplace_slope": (-1.25, -0.75),
    "moments_slope": (-1.25, -0.75),
    "density_slope": (-1.25, -0.75),
    "route_agreement": 1e-6,
}

# errors at or below this size count as an exact identity rather than a rate
_EXACT = 1e-12

NUMERICAL_ERRORS = (
    NonConvergenceError, NonInteriorPointError, PositivityError, EmptyWindowError, RateFitError,
    BoundaryAlphaError, AlphaOutsidePolytopeError, FloatingPointError, np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    potential: dict = field(default_factory=lambda: {"name": "fs", "dim": "1"})
    ks: list[int] = field(default_factory=lambda: [25, 50, 100, 200, 400])
    base_points: list[tuple[float, ...]] | None = None
    laplace_point: tuple[float, ...] | None = None
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    bands: dict = field(default_factory=lambda: dict(DEFAULT_BANDS))
    polytope_rows: list[list[str]] | None = None


def _floats(text: str, where: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{where}: expected numbers, got {text!r}") from None


def load_config(path=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    known = {"potential", "run", "quadrature", "bands", "polytope"}
    for sec in parser.sections():
        if sec not in known:
            raise ConfigError(f"[{sec}]: unknown section")
    if parser.has_section("potential"):
        cfg.potential = dict(parser["potential"])
    if parser.has_section("run"):
        run_sec = parser["run"]
        for key in run_sec:
            if key not in ("ks", "base_points", "laplace_point"):
                raise ConfigError(f"run.{key}: unknown field")
        if "ks" in run_sec:
            vals = _floats(run_sec["ks"], "run.ks")
            if not vals or any(v != int(v) or v < 1 for v in vals):
                raise ConfigError("run.ks: must be positive integers")
            cfg.ks = [int(v) for v in vals]
        if "base_points" in run_sec:
            cfg.base_points = [
                tuple(_floats(p, "run.base_points")) for p in run_sec["base_points"].split(";") if p.strip()
            ]
            if not cfg.base_points:
                raise ConfigError("run.base_points: empty")
        if "laplace_point" in run_sec:
            cfg.laplace_point = tuple(_floats(run_sec["laplace_point"], "run.laplace_point"))
    if parser.has_section("quadrature"):
        q = parser["quadrature"]
        kw = {}
        try:
            for key in q:
                if key == "nodes_per_axis":
                    kw[key] = q.getint(key)
                elif key == "recenter":
                    kw[key] = q.getboolean(key)
                elif key in ("truncation_radius", "rel_tol"):
                    kw[key] = q.getfloat(key)
                elif key == "route":
                    kw[key] = q[key].strip()
                else:
                    raise ConfigError(f"quadrature.{key}: unknown field")
            cfg.quadrature = QuadratureSpec(**kw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"quadrature.{key}: {exc}") from None
    if parser.has_section("bands"):
        for key, text in parser["bands"].items():
            if key not in DEFAULT_BANDS:
                raise ConfigError(f"bands.{key}: unknown band")
            vals = _floats(text, f"bands.{key}")
            want = 2 if isinstance(DEFAULT_BANDS[key], tuple) else 1
            if len(vals) != want or (want == 2 and vals[0] > vals[1]):
                raise ConfigError(f"bands.{key}: expected {'lo, hi' if want == 2 else 'one number'}")
            cfg.bands[key] = tuple(vals) if want == 2 else vals[0]
    if parser.has_section("polytope"):
        text = parser["polytope"].get("rows")
        if not text:
            raise ConfigError("polytope.rows: missing")
        cfg.polytope_rows = [r.split() for r in text.split(";") if r.strip()]
    return cfg


def _build_potential(spec: dict):
    name = spec.get("name", "fs").strip()

    def get_int(key, default=None):
        try:
            v = int(spec.get(key, default))
        except (TypeError, ValueError):
            raise ConfigError(f"potential.{key}: expected a positive integer") from None
        if v < 1:
            raise ConfigError(f"potential.{key}: expected a positive integer")
        return v

    try:
        if name == "fs":
            return fubini_study(get_int("dim", 1))
        if name == "fs-product":
            text = spec.get("factors")
            if not text:
                raise ConfigError("potential.factors: required for fs-product")
            dims = _floats(text, "potential.factors")
            if not dims or any(d != int(d) or d < 1 for d in dims):
                raise ConfigError("potential.factors: expected positive integers")
            return product_potential([fubini_study(int(d)) for d in dims])
        if name == "fs-perturbed":
            eps = float(_floats(spec.get("eps", "0.05"), "potential.eps")[0])
            bump = spec.get("bump", "gaussian").strip()
            try:
                return perturbed_potential(fubini_study(get_int("dim", 1)), eps, bump)
            except PositivityError as exc:
                raise ConfigError(f"potential.eps: {exc}") from None
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"potential.bump: {exc}") from None
    except IndexError:
        raise ConfigError("potential.eps: missing value") from None
    raise ConfigError(f"potential.name: unknown potential {name!r}")


def _default_laplace_point(m: int) -> tuple[float, ...]:
    if m == 1:
        return (0.37,)
    if m == 2:
        return (0.3, 0.4)
    return tuple([0.9 / (m + 1)] * m)


def _band_ok(value: float, band) -> bool:
    lo, hi = band
    return lo <= value <= hi


def _report_record(experiment, potential, z, label, rep: ConvergenceReport, ok, band):
    return {
        "experiment": experiment,
        "potential": potential,
        "z_rho": None if z is None else list(z.rho),
        "label": label,
        "ks": list(rep.ks),
        "errors": list(rep.errors),
        "slope": rep.fitted_slope,
        "intercept": rep.intercept,
        "r2": rep.r_squared,
        "band": band,
        "pass": bool(ok),
    }


def emit_plot_data(report: ConvergenceReport, path) -> Path:
    """Write ``k, error, fit, log_k, log_error`` rows and a ``.fit.json`` sidecar."""
    if report is None or len(report.ks) == 0:
        raise ValueError("refusing to write plot data for an empty report")
    path = Path(path)
    fit = report.fitted()
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["k", "error", "fit", "log_k", "log_error"])
        for k, e, f in zip(report.ks, report.errors, fit):
            out.writerow([k, "%.17g" % e, "%.17g" % f, "%.17g" % np.log(k), "%.17g" % np.log(e)])
    side = path.with_suffix(".fit.json")
    side.write_text(json.dumps(
        {"slope": report.fitted_slope, "intercept": report.intercept, "r2": report.r_squared},
        indent=2, sort_keys=True) + "\n")
    return path


class _Runner:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.phi = _build_potential(cfg.potential)
        self.pname = self.phi.name
        self.model = BergmanModel(self.phi, cfg.quadrature)
        m = self.phi.dim
        pts = cfg.base_points if cfg.base_points is not None else [(0.0,) * m]
        self.zs = []
        for p in pts:
            if len(p) != m:
                raise ConfigError(f"run.base_points: {p} has dimension {len(p)}, potential has {m}")
            try:
                self.zs.append(base_point(self.phi, p))
            except NonInteriorPointError as exc:
                raise ConfigError(f"run.base_points: {exc}") from None
        self.lap = cfg.laplace_point or _default_laplace_point(m)
        if len(self.lap) != m:
            raise ConfigError(f"run.laplace_point: expected {m} coordinates")
        if not self.phi.polytope.is_interior(np.array(self.lap), 0.0):
            raise ConfigError("run.laplace_point: must lie in the interior of P")
        self._measures = {}

    def measure(self, z, k):
        key = (z.rho, k)
        if key not in self._measures:
            self._measures[key] = build_measure(self.model, k, z)
        return self._measures[key]

    def _rate(self, experiment, z, label, fn, band_key, max_key=None, decreasing=False):
        ks = self.cfg.ks
        errors = [fn(k) for k in ks]
        band = {}
        if max(errors) <= _EXACT:
            # identity holds to roundoff at every level: nothing to fit
            rep = ConvergenceReport(tuple(ks), tuple(errors), float("nan"), float("nan"), float("nan"))
            rec = _report_record(experiment, self.pname, z, label, rep, True, band)
            rec.update(slope=None, intercept=None, r2=None, exact=True)
            return None, rec
        rep = fit_rate(ks, errors)
        ok = True
        if band_key is not None:
            band["slope"] = list(self.cfg.bands[band_key])
            ok &= _band_ok(rep.fitted_slope, self.cfg.bands[band_key])
        if max_key is not None:
            band["max_final_error"] = self.cfg.bands[max_key]
            ok &= rep.errors[-1] <= self.cfg.bands[max_key]
        if decreasing:
            band["decreasing"] = True
            ok &= bool(np.all(np.diff(rep.errors) < 0))
        return rep, _report_record(experiment, self.pname, z, label, rep, ok, band)

    # experiments -----------------------------------------------------------

    def lattice(self):
        P = self.phi.polytope
        if self.cfg.polytope_rows is not None:
            try:
                P = DelzantPolytope.from_rows(self.cfg.polytope_rows)
            except (ValueError, UnboundedPolytopeError) as exc:
                raise ConfigError(f"polytope.rows: {exc}") from None
        counts = []
        for k in self.cfg.ks:
            pts = P.lattice_points(k)
            counts.append(len(pts))
            with (self.out / f"lattice_k{k}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"alpha_{j}" for j in range(P.dim)])
                w.writerows(pts.tolist())
        summary = {"experiment": "lattice", "potential": self.pname, "ks": self.cfg.ks,
                   "counts": counts, "pass": True}
        return [summary], []

    def norming(self):
        route = self.route
        routes = ("rho", "x") if route == "both" else (route,)
        rows = []
        worst = 0.0
        for k in self.cfg.ks:
            vals = {}
            for r in routes:
                if r == self.cfg.quadrature.route:
                    alphas, lq, rel = self.model.log_norming(k)
                else:
                    alphas = self.phi.polytope.lattice_points(k)
                    if r == "x":
                        lq, rel, _ = log_norming_constants_x(
                            SymplecticPotential(self.phi), self.phi.polytope, alphas, k,
                            self.cfg.quadrature)
                    else:
                        other = BergmanModel(self.phi, QuadratureSpec(
                            self.cfg.quadrature.nodes_per_axis, self.cfg.quadrature.recenter, "rho",
                            self.cfg.quadrature.truncation_radius, self.cfg.quadrature.rel_tol))
                        alphas, lq, rel = other.log_norming(k)
                vals[r] = (alphas, lq, rel)
                for a, l, e in zip(alphas, lq, rel):
                    q = np.exp(l)
                    rows.append([k, ",".join(str(int(v)) for v in a), "%.17g" % q, "%.17g" % (e * q), r])
            if len(vals) == 2:
                alphas = vals["rho"][0]
                inner = self.phi.polytope.is_interior(alphas / k, 0.0)
                if np.any(inner):
                    d = np.abs(np.expm1(vals["rho"][1] - vals["x"][1]))[inner]
                    worst = max(worst, float(d.max()))
        with (self.out / "norming.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "alpha", "Q", "est_error", "route"])
            w.writerows(rows)
        ok = worst <= self.cfg.bands["route_agreement"]
        summary = {"experiment": "norming", "potential": self.pname, "ks": self.cfg.ks,
                   "routes": list(routes), "max_route_disagreement": worst, "pass": bool(ok)}
        return [summary], []

    def measure_exp(self):
        records, reports = [], []
        for i, z in enumerate(self.zs):
            for k in self.cfg.ks:
                mu = self.measure(z, k)
                write_measure_csv(mu, self.out / f"measure_z{i}_k{k}.csv")
            rep, rec = self._rate("measure", z, "density", lambda k: density_error(
                self.model, z, k, self.measure(z, k)), "density_slope")
            rec["summaries"] = [measure_summary(self.measure(z, k)) for k in self.cfg.ks]
            records.append(rec)
            reports.append(rep)
        return records, reports

    def moments(self):
        records, reports = [], []
        for z in self.zs:
            for label, fn in (("mean", mean_error), ("covariance", covariance_error)):
                rep, rec = self._rate("moments", z, label, lambda k: fn(
                    self.model, z, k, self.measure(z, k)), "moments_slope")
                records.append(rec)
                reports.append(rep)
        return records, reports

    def _per_function(self, experiment, band_key, max_key, decreasing):
        records, reports = [], []
        for z in self.zs:
            for f in default_test_functions(self.phi.dim):
                rep, rec = self._rate(experiment, z, f.label, lambda k: clt_error(
                    self.model, z, k, f, self.measure(z, k)), band_key, max_key, decreasing)
                records.append(rec)
                reports.append(rep)
        return records, reports

    def clt(self):
        return self._per_function("clt", None, "clt_max_error", True)

    def berry_esseen(self):
        return self._per_function("berry-esseen", "berry_esseen_slope", None, False)

    def llt(self):
        records, reports = [], []
        for z in self.zs:
            rep, rec = self._rate("llt", z, "window", lambda k: llt_error(
                self.model, z, k, measure=self.measure(z, k)), "llt_slope", "llt_max_error")
            records.append(rec)
            reports.append(rep)
        return records, reports

    def charfn(self):
        records, reports = [], []
        for z in self.zs:
            rep, rec = self._rate("charfn", z, "grid", lambda k: charfn_error(
                self.model, z, k, measure=self.measure(z, k)), "charfn_slope")
            records.append(rec)
            reports.append(rep)
        return records, reports

    def laplace_ratio(self):
        x = np.array(self.lap)
        label = "x=" + ",".join(f"{v:g}" for v in x)
        rep, rec = self._rate("laplace-ratio", None, label,
                              lambda k: laplace_ratio_error(self.model, k, x), "laplace_slope")
        return [rec], [rep]

    def run(self, experiment: str, route: str) -> bool:
        self.route = route
        if experiment in RATE_EXPERIMENTS and len(self.cfg.ks) < 4:
            raise ConfigError("run.ks: rate experiments need at least 4 levels")
        dispatch = {
            "lattice": self.lattice, "norming": self.norming, "measure": self.measure_exp,
            "moments": self.moments, "clt": self.clt, "berry-esseen": self.berry_esseen,
            "llt": self.llt, "charfn": self.charfn, "laplace-ratio": self.laplace_ratio,
        }
        records, reports = dispatch[experiment]()
        (self.out / f"{experiment}.json").write_text(
            json.dumps(records, indent=2, sort_keys=True) + "\n")
        pairs = [(rec, rep) for rec, rep in zip(records, reports) if rep is not None]
        if experiment in RATE_EXPERIMENTS:
            with (self.out / f"{experiment}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["experiment", "label", "z_rho", "k", "error", "fit"])
                for rec, rep in pairs:
                    z = "" if rec["z_rho"] is None else ",".join("%.17g" % v for v in rec["z_rho"])
                    for k, e, f in zip(rep.ks, rep.errors, rep.fitted()):
                        w.writerow([experiment, rec["label"], z, k, "%.17g" % e, "%.17g" % f])
            plots = self.out / "plots"
            plots.mkdir(exist_ok=True)
            for i, (rec, rep) in enumerate(pairs):
                emit_plot_data(rep, plots / f"{experiment}_{i}.csv")
        ok = all(r["pass"] for r in records)
        passed = sum(r["pass"] for r in records)
        print(f"{'PASS' if ok else 'FAIL'} {experiment} ({passed}/{len(records)} reports)")
        return ok


def run(cfg: ExperimentConfig, experiment: str, out, route: str | None = None) -> bool:
    """Run one experiment (or ``"all"``) and write its reports under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ks = cfg.ks
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError("run.ks: must be strictly increasing")
    runner = _Runner(cfg, out)
    names = EXPERIMENTS if experiment == "all" else (experiment,)
    route = route or cfg.quadrature.route
    return all([runner.run(name, route) for name in names])


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toric-clt", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS + ("all",))
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--out", type=Path, default=Path("toric_clt_out"), help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: TORIC_CLT_THREADS or 1)")
    p.add_argument("--nodes", type=int, help="override quadrature.nodes_per_axis")
    p.add_argument("--truncation", type=float, help="override quadrature.truncation_radius")
    p.add_argument("--route", choices=("rho", "x", "both"), help="quadrature route")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        q = cfg.quadrature
        if args.nodes is not None or args.truncation is not None or args.route in ("rho", "x"):
            try:
                cfg.quadrature = QuadratureSpec(
                    args.nodes if args.nodes is not None else q.nodes_per_axis,
                    q.recenter,
                    args.route if args.route in ("rho", "x") else q.route,
                    args.truncation if args.truncation is not None else q.truncation_radius,
                    q.rel_tol,
                )
            except ValueError as exc:
                raise ConfigError(f"command line: {exc}") from None
        threads = args.threads
        if threads is None and os.environ.get("TORIC_CLT_THREADS"):
            try:
                threads = int(os.environ["TORIC_CLT_THREADS"])
            except ValueError:
                raise ConfigError("TORIC_CLT_THREADS: expected an integer") from None
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads: must be >= 1")
            _kernels.set_threads(threads)
        ok = run(cfg, args.experiment, args.out, args.route)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
