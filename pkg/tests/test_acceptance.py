"""End-to-end acceptance checks, one test per criterion, each at its stated tolerance."""

import math
import time

import numpy as np

from cgclatency.distributions import CgfModel, GammaTerm, LatticeTerm, cgf_eval, exact_gamma_cdf
from cgclatency.latency import (
    cdf_CL,
    cdf_ET,
    cdf_ET_clt,
    cdf_FL,
    cdf_grad_kappa,
    cdf_T,
    conditional_excess,
)
from cgclatency.model import (
    CAPACITY_CONSTANTS,
    FIG3_TERMS,
    CompressionKind,
    CompressionModel,
    ModelKind,
    build_clt_cgf,
    build_continuous_cgf,
    build_lattice_cgf,
    named_constants,
    preset,
    zeta_d,
)
from cgclatency.oracles import exact_lattice_convolution, mc_closed_loop, step_lookup, truncated_convolution_cdf
from cgclatency.optimize import OptimizationConfig, allocate_pf_deadlines, optimize, tradeoff_curve
from cgclatency.saddlepoint import solve_saddlepoint, spa_cdf, spa_pmf

from conftest import MC_SAMPLES, MC_SEED

C1, C2, C3 = CAPACITY_CONSTANTS


def test_criterion_1_spa_vs_truncated_convolution(report):
    t0 = time.perf_counter()
    xs = np.linspace(0.0, 16.0, 400)
    exact = exact_gamma_cdf(8.0, 1.0, xs)
    model = CgfModel(gamma_terms=list(FIG3_TERMS))
    spa = np.zeros_like(xs)
    spa[xs > 0] = spa_cdf(model, xs[xs > 0])
    trunc = step_lookup(truncated_convolution_cdf(FIG3_TERMS, 1e-3, 20.0), xs)
    err_spa, err_trunc = np.abs(spa - exact), np.abs(trunc - exact)
    mean_err = abs(spa_cdf(model, 8.0) - exact_gamma_cdf(8.0, 1.0, 8.0))
    frac = float(np.mean(err_spa <= err_trunc))
    runtime = time.perf_counter() - t0
    ok = err_spa.max() <= 5e-3 and mean_err <= 1e-3 and frac >= 0.7 and runtime < 30
    report(1, ok, f"SPA max err {err_spa.max():.2e} (<=5e-3), mean-point err {mean_err:.2e} (<=1e-3), "
                  f"SPA better at {frac:.1%} of points (>=70%), {runtime:.1f}s")
    assert ok


def test_criterion_2_mixture_vs_simulation_fig4(report):
    t0 = time.perf_counter()
    sc = preset("fig4")
    rep = mc_closed_loop(sc, 1.1, MC_SAMPLES, MC_SEED)
    worst = {}
    ok = True
    for key, fn in (("T_ET", lambda x: cdf_ET(sc, 1.1, x)), ("T", lambda x: cdf_T(sc, 1.1, x))):
        xs = np.linspace(0.0, rep.quantile(key, 0.9999), 400)
        mc = rep.cdf(key, xs)
        band = (mc >= 0.5) & (mc <= 0.999)
        err = np.abs(fn(xs) - mc)
        tol = np.maximum(3 * rep.standard_error(mc), 1e-3)
        ok &= bool(np.all(err[band] <= tol[band]))
        x99 = rep.quantile(key, 0.99)
        e99 = abs(fn(x99) - rep.cdf(key, x99))
        ok &= e99 <= 1e-3
        worst[key] = (err[band].max(), e99)
    runtime = time.perf_counter() - t0
    ok &= runtime < 300
    report(2, ok, f"max band err ET {worst['T_ET'][0]:.2e}, T {worst['T'][0]:.2e} (<=max(3se,1e-3)); "
                  f"err at 0.99: ET {worst['T_ET'][1]:.2e}, T {worst['T'][1]:.2e} (<=1e-3); {runtime:.1f}s")
    assert ok


def test_criterion_3_regime_separation_fig7(report, mc_reports):
    sc = preset("fig7")
    rep = mc_reports("fig7")
    res = {}
    for key, lattice, normal in (
        ("T_ET", lambda x: cdf_ET(sc, 1.1, x), lambda x: cdf_ET_clt(sc, 1.1, x)),
        ("T", lambda x: cdf_T(sc, 1.1, x), lambda x: cdf_T(sc, 1.1, x, method="theorem2")),
    ):
        xs = np.linspace(0.0, rep.quantile(key, 0.9999), 400)
        mc = rep.cdf(key, xs)
        res[key] = (np.max(np.abs(lattice(xs) - mc)), np.max(np.abs(normal(xs) - mc)))
    ok = all(a <= 5e-3 and b > 5e-2 for a, b in res.values())
    report(3, ok, f"lattice-mixture err ET {res['T_ET'][0]:.2e}, T {res['T'][0]:.2e} (<=5e-3); "
                  f"normal-lattice err ET {res['T_ET'][1]:.2e}, T {res['T'][1]:.2e} (>5e-2)")
    assert ok


def test_criterion_4_conditional_excess_fig5(report, mc_reports):
    sc = preset("fig5")
    taus = np.linspace(0.2, 0.4, 10)
    rep = mc_reports("fig5", tau_list=tuple(taus))
    worst, where = 0.0, None
    for tau in taus:
        mc = rep.excess_estimates[float(tau)][0]
        if mc > 1e-3:
            rel = abs(conditional_excess(sc, 1.1, tau) - mc) / mc
            if rel > worst:
                worst, where = rel, tau
    ok = worst <= 0.02
    report(4, ok, f"max relative err {worst:.2%} at tau_PF={where:.3f} s (<=2% where MC > 1 ms)")
    assert ok


def test_criterion_5_pf_deadline_split(report):
    rng = np.random.default_rng(5)
    worst_cells, worst_kkt = 0.0, 0.0
    for _ in range(50):
        phi1, phi2 = rng.uniform(0.1, 10.0, 2)
        tau = rng.uniform(0.05, 1.0)
        t1, t2 = allocate_pf_deadlines(phi1, phi2, tau)
        cell = tau / 100
        g = cell * np.arange(1, 101)
        a, b = np.meshgrid(g, g, indexing="ij")
        power = phi1 ** (-C3 - 1) * (C2 + a**-C3) + phi2 ** (-C3 - 1) * (C2 + b**-C3)
        power[a + b > tau * (1 + 1e-12)] = np.inf
        i, j = np.unravel_index(np.argmin(power), power.shape)
        worst_cells = max(worst_cells, abs(g[i] - t1) / cell, abs(g[j] - t2) / cell)
        m1, m2 = (phi1 * t1) ** (-C3 - 1), (phi2 * t2) ** (-C3 - 1)
        worst_kkt = max(worst_kkt, abs(m1 - m2) / max(m1, m2))
    ok = worst_cells <= 1.0 and worst_kkt <= 1e-9
    report(5, ok, f"closed form within {worst_cells:.2f} cells of the 100x100 grid minimum (<=1); "
                  f"KKT residual {worst_kkt:.1e} (<=1e-9); 50 draws")
    assert ok


def _ratio_trend(model):
    ks = np.linspace(1.001, model.kappa_max, 500)
    r = np.array([k / zeta_d(model, k) for k in ks])
    d = np.diff(r)
    return "decreasing" if np.all(d < 0) else "increasing" if np.all(d > 0) else "mixed"


def test_criterion_6_ratio_over_decompression_cost(report):
    rng = np.random.default_rng(6)
    counts = {"exp": 0, "power-steep": 0, "power-flat": 0}
    for _ in range(20):
        kmax = rng.uniform(1.1, 3.0)
        exp = CompressionModel(kind=CompressionKind.EXP, psi=rng.uniform(1.0, 6.0), omega0=rng.uniform(0.01, 0.9), kappa_max=kmax)
        counts["exp"] += _ratio_trend(exp) == "decreasing"
        w5, w6, w8 = rng.uniform(0.1, 5.0, 3)
        steep = CompressionModel(kind="power", omegas=(1, 1, 1, 1, w5, w6, 1 + w8 / w6 + rng.uniform(0.01, 3.0), w8), kappa_max=kmax)
        counts["power-steep"] += _ratio_trend(steep) == "decreasing"
        flat = CompressionModel(kind="power", omegas=(1, 1, 1, 1, w5, w6, rng.uniform(0.0, 1.0), w8), kappa_max=kmax)
        counts["power-flat"] += _ratio_trend(flat) == "increasing"
    ok = all(c == 20 for c in counts.values())
    report(6, ok, "expected trend in " + ", ".join(f"{k} {v}/20" for k, v in counts.items()))
    assert ok


def test_criterion_7_optimizer(report):
    sc = preset("opt-default")
    kappas, gaps = [], []
    for eps in (0.2, 0.5, 0.8, 1.0):
        t = optimize(sc, OptimizationConfig(weight=eps, search="ternary"))
        g = optimize(sc, OptimizationConfig(weight=eps, search="grid", granularity=1e-4))
        gaps.append((abs(t.objective - g.objective), abs(t.kappa_star - g.kappa_star)))
        kappas.append(t.kappa_star)
    decreasing = all(a > b for a, b in zip(kappas, kappas[1:]))
    obj_gap = max(a for a, _ in gaps)
    arg_gap = max(b for _, b in gaps)

    fronts = tradeoff_curve(sc, [0.2, 0.25, 0.3], np.arange(1.0, 1.7 + 1e-12, 1e-3))

    def power_at(front, tail):
        ok_pts = front.pareto[front.pareto[:, 2] <= tail]
        return ok_pts[:, 1].min() if len(ok_pts) else math.inf

    dominance = True
    for small, large in zip(fronts, fronts[1:]):
        lo = max(small.pareto[:, 2].min(), large.pareto[:, 2].min())
        hi = min(small.pareto[:, 2].max(), large.pareto[:, 2].max())
        for tail in np.linspace(lo, hi, 50):
            dominance &= power_at(large, tail) <= power_at(small, tail)
    ok = obj_gap <= 1e-6 and arg_gap <= 1e-3 and decreasing and dominance
    report(7, ok, f"objective gap {obj_gap:.1e} (<=1e-6), minimiser gap {arg_gap:.1e} (<=1e-3), "
                  f"kappa* {', '.join(f'{k:.4f}' for k in kappas)} strictly decreasing: {decreasing}; "
                  f"frontier dominance 0.3 > 0.25 > 0.2: {dominance}")
    assert ok


def test_criterion_8_gradient(report):
    sc = preset("opt-default")
    rng = np.random.default_rng(8)
    h = 1e-5
    worst, n = 0.0, 0
    while n < 50:
        k = rng.uniform(1.01, 1.69)
        m = build_continuous_cgf(sc, k, ModelKind.LOOP)
        x = m.mean + math.sqrt(m.variance) * rng.uniform(-1.5, 5.0)
        if x <= 0 or abs(solve_saddlepoint(m, x).v) <= 0.1:
            continue
        fd = (spa_cdf(build_continuous_cgf(sc, k + h, "Loop"), x) - spa_cdf(build_continuous_cgf(sc, k - h, "Loop"), x)) / (2 * h)
        g = cdf_grad_kappa(sc, k, x)
        worst = max(worst, abs(g - fd) / max(abs(fd), 1e-12))
        n += 1
    ok = worst <= 1e-4
    report(8, ok, f"worst relative gap to central differences {worst:.1e} over 50 points (<=1e-4)")
    assert ok


def test_criterion_9_property_suites(report):
    checks = {}

    # monotonicity and bounds of every CDF on every delay preset
    mono = True
    xs = np.linspace(0.0, 2.5, 1000)
    for name in ("fig4", "fig5", "fig6", "fig7"):
        sc = preset(name)
        for ps in (cdf_ET(sc, 1.1, xs), cdf_CL(sc, xs), cdf_FL(sc, 1.1, xs), cdf_T(sc, 1.1, xs),
                   cdf_T(sc, 1.1, xs, method="theorem2"), cdf_ET_clt(sc, 1.1, xs)):
            mono &= bool(np.all(np.diff(ps) >= -1e-12) and np.all((ps >= 0) & (ps <= 1)))
    checks["monotone/bounded"] = mono

    # cumulant identities
    worst = 0.0
    for name in ("fig4", "fig5", "fig6", "fig7", "opt-default"):
        sc = preset(name)
        for k in (1.05, 1.1, 1.3):
            nc = named_constants(sc, k)
            pairs = []
            for kind, (mean, iota1, iota2) in ((ModelKind.ET, (nc.theta, nc.iota1, nc.iota2)),
                                               (ModelKind.LOOP, (nc.theta_t, nc.iota1_t, nc.iota2_t))):
                _, k1, k2, k3 = cgf_eval(build_continuous_cgf(sc, k, kind), 0.0)
                pairs += [(k1, mean), (k2**1.5, iota1), (k3, iota2)]
                _, k1, k2, _ = cgf_eval(build_clt_cgf(sc, k, kind), 0.0)
                psi, ups = (nc.Psi, nc.Upsilon) if kind is ModelKind.ET else (nc.Psi_t, nc.Upsilon_t)
                pairs += [(k1, psi), (k2**1.5, ups)]
            pairs.append((cgf_eval(build_lattice_cgf(sc, ModelKind.ET, k), 0.0)[1], nc.vartheta * sc.t_u))
            worst = max(worst, max(abs(a - b) / abs(b) for a, b in pairs))
    checks["cumulant identities"] = worst <= 1e-12

    # saddlepoint mass against exact convolution on random two-term instances
    rng = np.random.default_rng(9)
    pmf_worst = 0.0
    for _ in range(20):
        terms = [LatticeTerm(int(rng.integers(1, 6)), float(rng.uniform(0.05, 0.5)), 1.0) for _ in range(2)]
        exact = exact_lattice_convolution(terms)
        last = int(np.searchsorted(np.cumsum(exact.probs), 0.999))
        ks = exact.base_index + np.arange(1, last + 1)
        rel = np.abs(spa_pmf(CgfModel(lattice_terms=terms), ks) / exact.probs[ks - exact.base_index] - 1)
        pmf_worst = max(pmf_worst, float(rel.max()))
    checks["spa_pmf interior"] = pmf_worst <= 0.10

    # i.i.d. error scaling
    def max_err(n):
        g = np.linspace(0.05, 6.0 * n, 600)
        return np.max(np.abs(spa_cdf(CgfModel(gamma_terms=[GammaTerm(2, 1)] * n), g) - exact_gamma_cdf(2 * n, 1, g)))

    e3, e6 = max_err(3), max_err(6)
    checks["n=6 beats n=3"] = e6 < e3

    ok = all(checks.values())
    report(9, ok, f"cumulant rel err {worst:.1e} (<=1e-12), spa_pmf worst {pmf_worst:.1%} (<=10%), "
                  f"iid err n=3 {e3:.1e} vs n=6 {e6:.1e}; " + ", ".join(f"{k}: {v}" for k, v in checks.items()))
    assert ok
