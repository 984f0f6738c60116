"""Command-line interface: ``cgclatency {cdf,compare,optimize,simulate,replay}``.

Every command writes CSV/JSON files into ``--outdir`` together with a
``manifest_<command>.json`` that records the exact argument list, so
``cgclatency replay manifest.json`` regenerates the same files.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import CgfModel, DomainError, NonConvergenceError, exact_gamma_cdf
from .latency import DEFAULT_DELTA, LatencyCurve, conditional_excess, curve, write_curves_csv
from .model import FIG3_TERMS, ConfigurationError, clt_regime_warning, load_scenario
from .oracles import BudgetExceededError, mc_closed_loop, step_lookup, truncated_convolution_cdf
from .optimize import (
    InfeasibleError,
    OptimizationConfig,
    optimize,
    tail_probability,
    total_power,
    tradeoff_curve,
    write_trace_csv,
)
from .saddlepoint import spa_cdf

log = logging.getLogger("cgclatency")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE = 0, 2, 3, 4
GRID_POINTS = 400


@dataclass
class RunManifest:
    command: str
    scenario: str
    parameters: dict
    outputs: list = field(default_factory=list)
    seed: int | None = None
    tool_version: str = __version__

    def write(self, outdir: Path) -> Path:
        path = outdir / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


# -- argument helpers ----------------------------------------------------------


def _floats(text: str):
    return [float(t) for t in text.split(",") if t.strip()]


def _words(text: str):
    return [t.strip() for t in text.split(",") if t.strip()]


def _count(text: str) -> int:
    val = float(text)
    if val != int(val) or val < 1:
        raise argparse.ArgumentTypeError(f"not a positive integer: {text}")
    return int(val)


def _grid_spec(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid is start:stop:points")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _tag(v) -> str:
    return f"{v:g}".replace(".", "p")


def _quantile_of(cdf, q=0.9999, start=0.01):
    hi = start
    while float(cdf(hi)) < q:
        hi *= 2.0
        if hi > 1e6:
            break
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if float(cdf(mid)) < q:
            lo = mid
        else:
            hi = mid
    return hi


# -- commands --------------------------------------------------------------------


def cmd_cdf(args, outdir: Path, manifest: RunManifest):
    scenario = load_scenario(args.scenario)
    methods = [m.lower() for m in _words(args.method)]
    quantities = [q.upper() for q in _words(args.quantity)]
    for m in methods:
        if m not in ("theorem1", "lemma3", "theorem2"):
            raise ConfigurationError(f"unknown method {m!r}")
    for q in quantities:
        if q not in ("ET", "CL", "FL", "T"):
            raise ConfigurationError(f"unknown quantity {q!r}")
    for kappa in _floats(args.kappa):
        if any(m != "theorem1" for m in methods):
            warn = clt_regime_warning(scenario, kappa)
            if warn:
                log.warning("regime warning: %s", warn)
                manifest.parameters.setdefault("warnings", []).append(warn)
        for q in quantities:
            for m in methods:
                if args.x_grid:
                    xs = np.linspace(*args.x_grid)
                else:
                    hi = _quantile_of(lambda x: curve(q, m, scenario, kappa, np.array([x]), args.delta).ps[0])
                    xs = np.linspace(0.0, hi, GRID_POINTS)
                c = curve(q, m, scenario, kappa, xs, args.delta)
                path = outdir / f"cdf_{scenario.preset_name}_{q}_{m}_k{_tag(kappa)}.csv"
                write_curves_csv(path, [c])
                manifest.outputs.append(str(path))


def _summary(xs, ref, est):
    err = np.abs(np.asarray(est) - np.asarray(ref))
    i99 = int(np.argmin(np.abs(np.asarray(ref) - 0.99)))
    return {"max_abs_error": float(err.max()), "mean_abs_error": float(err.mean()),
            "x_at_0.99": float(xs[i99]), "error_at_0.99": float(err[i99])}


def _write_table(path, header, cols):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(r if isinstance(r, str) else repr(float(r)) for r in row) + "\n")


def cmd_compare(args, outdir: Path, manifest: RunManifest):
    summary = {}
    if args.preset == "fig3":
        model = CgfModel(gamma_terms=list(FIG3_TERMS))
        xs = np.linspace(0.0, 16.0, GRID_POINTS)
        exact = exact_gamma_cdf(8.0, 1.0, xs)
        spa = np.zeros_like(xs)
        spa[xs > 0] = spa_cdf(model, xs[xs > 0])
        trunc = step_lookup(truncated_convolution_cdf(FIG3_TERMS, args.delta1, args.lambda1, args.conv_rule), xs)
        path = outdir / "compare_fig3.csv"
        _write_table(path, ("x", "exact", "spa", "truncconv", "err_spa", "err_truncconv"),
                     (xs, exact, spa, trunc, np.abs(spa - exact), np.abs(trunc - exact)))
        summary = {"spa": _summary(xs, exact, spa), "truncconv": _summary(xs, exact, trunc),
                   "spa_better_fraction": float(np.mean(np.abs(spa - exact) <= np.abs(trunc - exact)))}
        manifest.outputs.append(str(path))
    else:
        if not args.scenario:
            raise ConfigurationError("compare needs --scenario or --preset fig3")
        scenario = load_scenario(args.scenario)
        kappa = args.kappa
        quantity = args.quantity.upper()
        if quantity == "EXCESS":
            taus = np.linspace(*args.tau_grid) if args.tau_grid else np.linspace(0.0, 2.0 * scenario.tau_PF, 10)
            rep = mc_closed_loop(scenario, kappa, args.samples, args.seed, tau_list=taus, threads=args.threads)
            ana = np.array([conditional_excess(scenario, kappa, t) for t in taus])
            mc = np.array([rep.excess_estimates[float(t)][0] for t in taus])
            se = np.array([rep.excess_estimates[float(t)][1] for t in taus])
            path = outdir / f"compare_{scenario.preset_name}_excess.csv"
            _write_table(path, ("tau_PF", "montecarlo", "standard_error", "saddlepoint", "rel_error"),
                         (taus, mc, se, ana, np.abs(ana - mc) / np.maximum(mc, 1e-300)))
            summary = {"max_rel_error_above_1ms": float(np.max(np.where(mc > 1e-3, np.abs(ana - mc) / mc, 0.0)))}
            manifest.outputs.append(str(path))
        else:
            if args.reference != "montecarlo":
                raise ConfigurationError("scenario comparisons use --reference montecarlo")
            key = {"ET": "T_ET", "T": "T", "CL": "T_CL", "FL": "T_FL"}[quantity]
            rep = mc_closed_loop(scenario, kappa, args.samples, args.seed, threads=args.threads)
            lo = scenario.tau_PF if quantity in ("T", "FL") else 0.0
            xs = np.linspace(lo, float(rep.quantile(key, 0.9999)), GRID_POINTS)
            ref = rep.cdf(key, xs)
            for m in _words(args.method):
                est = curve(quantity, m, scenario, kappa, xs, args.delta).ps
                path = outdir / f"compare_{scenario.preset_name}_{quantity}_{m}_k{_tag(kappa)}.csv"
                _write_table(path, ("x", "montecarlo", "standard_error", m, "abs_error"),
                             (xs, ref, rep.standard_error(ref), est, np.abs(est - ref)))
                summary[m] = _summary(xs, ref, est)
                manifest.outputs.append(str(path))
    spath = outdir / "compare_summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True))
    manifest.outputs.append(str(spath))


def cmd_optimize(args, outdir: Path, manifest: RunManifest):
    scenario = load_scenario(args.scenario)
    taus = _floats(args.tau_PF)
    if args.tradeoff:
        grid = np.arange(1.0, scenario.kappa_max + 1e-12, args.kappa_step)
        T_th = 0.4 if args.T_th is None else args.T_th
        eta_ts = 0.9 if args.eta_ts is None else args.eta_ts
        fronts = tradeoff_curve(scenario, taus, grid, T_th=T_th, eta_ts=eta_ts, rho_ts=args.rho_ts)
        for fr in fronts:
            path = outdir / f"tradeoff_tau{_tag(fr.tau_PF)}.csv"
            _write_table(path, ("kappa", "P_total", "tail_prob", "pareto"),
                         (fr.points[:, 0], fr.points[:, 1], fr.points[:, 2],
                          [str(int(any(np.all(fr.pareto == p, axis=1)))) for p in fr.points]))
            manifest.outputs.append(str(path))
        return
    cfg = OptimizationConfig(
        weight=args.epsilon, T_th=0.3 if args.T_th is None else args.T_th, tau_PF=taus[0],
        eta_ts=args.eta_ts or 0.0, rho_ts=args.rho_ts,
        search=args.search, granularity=args.granularity, seed=args.seed or 0,
    )
    res = optimize(scenario, cfg)
    sc = scenario if scenario.tau_PF == cfg.tau_PF else replace(scenario, tau_PF=cfg.tau_PF)
    rows = [(k, v, total_power(sc, cfg.tau_PF, k), tail_probability(sc, k, cfg.T_th, cfg.delta)) for k, v in res.trace]
    tpath = outdir / f"optimize_trace_eps{_tag(args.epsilon)}_{res.method}.csv"
    write_trace_csv(tpath, rows)
    rpath = outdir / f"optimize_result_eps{_tag(args.epsilon)}_{res.method}.json"
    d = res.to_dict()
    d.pop("trace")
    rpath.write_text(json.dumps(d, indent=2, default=float, sort_keys=True))
    manifest.outputs += [str(rpath), str(tpath)]


def cmd_simulate(args, outdir: Path, manifest: RunManifest):
    scenario = load_scenario(args.scenario)
    if args.samples >= 10**7:
        log.warning("%d samples: expect a runtime of minutes and several GB of memory", args.samples)
    taus = _floats(args.tau_list) if args.tau_list else []
    rep = mc_closed_loop(scenario, args.kappa, args.samples, args.seed, tau_list=taus, threads=args.threads)
    path = outdir / f"simulate_{scenario.preset_name}_k{_tag(args.kappa)}.csv"
    curves = []
    for name, c in rep.curves.items():
        curves.append(LatencyCurve(c.xs, c.ps, f"MonteCarlo:{name}", c.meta))
    write_curves_csv(path, curves)
    jpath = outdir / f"simulate_{scenario.preset_name}_k{_tag(args.kappa)}.json"
    summary = rep.summary()
    summary.pop("runtime_seconds")  # keeps repeated runs byte-identical
    jpath.write_text(json.dumps(summary, indent=2, sort_keys=True))
    manifest.outputs += [str(path), str(jpath)]


def cmd_replay(args, outdir: Path, manifest: RunManifest):
    data = json.loads(Path(args.manifest).read_text())
    return main(data["parameters"]["argv"])


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgclatency", description="Closed-loop latency distributions and optimisation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="preset name or TOML/JSON file")
        sp.add_argument("--outdir", default=".", help="directory for output files")
        sp.add_argument("--threads", type=int, default=None, help="maximum worker threads")
        sp.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="lattice mass cut-off")

    sp = sub.add_parser("cdf", help="analytic CDF curves")
    common(sp)
    sp.add_argument("--kappa", default="1.1", help="comma-separated compression ratios")
    sp.add_argument("--method", default="theorem1", help="theorem1, lemma3, theorem2 (comma-separated)")
    sp.add_argument("--quantity", default="ET", help="ET, CL, FL, T (comma-separated)")
    sp.add_argument("--x-grid", type=_grid_spec, default=None, help="start:stop:points")
    sp.set_defaults(func=cmd_cdf)

    sp = sub.add_parser("compare", help="error tables against exact or Monte Carlo references")
    common(sp, scenario_required=False)
    sp.add_argument("--preset", choices=["fig3"], default=None, help="SPA vs truncated convolution vs exact")
    sp.add_argument("--reference", choices=["exact", "montecarlo"], default="montecarlo")
    sp.add_argument("--method", default="theorem1,lemma3")
    sp.add_argument("--quantity", default="ET", help="ET, T, CL, FL or excess")
    sp.add_argument("--kappa", type=float, default=1.1)
    sp.add_argument("--samples", type=_count, default=10**6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tau-grid", type=_grid_spec, default=None, help="start:stop:points for excess")
    sp.add_argument("--delta1", type=float, default=1e-3, help="truncated-convolution step")
    sp.add_argument("--lambda1", type=float, default=20.0, help="truncated-convolution range")
    sp.add_argument("--conv-rule", choices=["floor", "density"], default="floor",
                    help="how each gamma variable is put on the grid")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("optimize", help="compression ratio / power optimisation")
    common(sp, scenario_required=False)
    sp.set_defaults(scenario="opt-default")
    sp.add_argument("--epsilon", type=float, default=0.5, help="weight of the violation probability")
    sp.add_argument("--T-th", dest="T_th", type=float, default=None,
                    help="latency threshold (default 0.3, or 0.4 with --tradeoff)")
    sp.add_argument("--tau-PF", dest="tau_PF", default="0.25", help="PF deadline(s), comma-separated")
    sp.add_argument("--eta-ts", dest="eta_ts", type=float, default=None,
                    help="PF reliability floor (default 0, or 0.9 with --tradeoff)")
    sp.add_argument("--rho-ts", dest="rho_ts", type=float, default=math.inf)
    sp.add_argument("--search", choices=["ternary", "grid", "gradient"], default="ternary")
    sp.add_argument("--granularity", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tradeoff", action="store_true", help="sweep kappa for every --tau-PF value")
    sp.add_argument("--kappa-step", type=float, default=1e-3)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("simulate", help="Monte Carlo simulation of the loop")
    common(sp)
    sp.add_argument("--kappa", type=float, default=1.1)
    sp.add_argument("--samples", type=_count, default=10**6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tau-list", default=None, help="tau_PF values for the excess estimates")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay, outdir=".", scenario=None)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "replay":
        try:
            return args.func(args, None, None)
        except (OSError, KeyError, ValueError) as exc:
            print(f"error: cannot replay manifest: {exc}", file=sys.stderr)
            return EXIT_USAGE
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=args.command,
        scenario=str(getattr(args, "scenario", None) or getattr(args, "preset", "")),
        parameters={"argv": argv},
        seed=getattr(args, "seed", None),
    )
    t0 = time.perf_counter()
    try:
        args.func(args, outdir, manifest)
    except InfeasibleError as exc:
        print(f"infeasible: {exc} (binding constraint: {exc.binding})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigurationError, DomainError, BudgetExceededError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest.write(outdir)
    log.info("%s finished in %.1f s; %d files in %s", args.command, time.perf_counter() - t0, len(manifest.outputs), outdir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
