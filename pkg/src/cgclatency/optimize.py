"""Compression-ratio and power optimisation of the loop.

The decision variable is the compression ratio ``kappa``. For a given
``tau_PF`` the two PF links get their deadlines from the closed-form split
in :func:`allocate_pf_deadlines`, and the compressed-data link power follows
from its required rate. The objective mixes the closed-loop violation
probability with the normalised total power.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .distributions import DomainError
from .latency import (
    DEFAULT_DELTA,
    GRADIENT_CLIP,
    cdf_CL,
    cdf_ET,
    cdf_T1_grad_kappa,
    conditional_excess,
    sf_T,
)
from .model import (
    CAPACITY_CONSTANTS,
    CompressionKind,
    ScenarioConfig,
    cl_mean,
    et_variance,
    pf_phi,
    pf_power_for_deadline,
)

VERTICES = (2, 4, 6, 8)


class InfeasibleError(Exception):
    """No compression ratio satisfies the constraints; ``binding`` names the culprit."""

    def __init__(self, message: str, binding: str):
        super().__init__(message)
        self.binding = binding


@dataclass(frozen=True)
class OptimizationConfig:
    weight: float = 0.5
    T_th: float = 0.3
    tau_PF: float = 0.25
    eta_ts: float = 0.0
    rho_ts: float = math.inf
    P_max: float | None = None
    kappa_bounds: tuple = (1.0, None)
    search: str = "ternary"
    granularity: float = 1e-4
    step: float = 0.1
    clip: float = GRADIENT_CLIP
    restarts: int = 5
    seed: int = 0
    delta: float = DEFAULT_DELTA
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("weight must lie in [0, 1]")
        if not self.T_th > self.tau_PF:
            raise ValueError("T_th must exceed tau_PF")
        if self.search not in ("ternary", "grid", "gradient"):
            raise ValueError("search must be ternary, grid or gradient")


@dataclass
class OptResult:
    kappa_star: float
    powers: dict
    objective: float
    constraint_slacks: dict
    trace: list
    method: str
    interval: tuple
    boundary: bool = False
    tail_prob: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trace"] = [list(t) for t in self.trace]
        return d

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)


# -- powers -------------------------------------------------------------------


def allocate_pf_deadlines(phi1: float, phi2: float, tau_PF: float):
    """Deadlines of the two PF hops that minimise their total power."""
    if not (phi1 > 0 and phi2 > 0 and tau_PF > 0):
        raise DomainError("phi1, phi2 and tau_PF must be positive")
    total = phi1 + phi2
    return tau_PF * phi2 / total, tau_PF * phi1 / total


def _phis(scenario: ScenarioConfig):
    return (
        pf_phi(scenario.links["PF1"], scenario.T_s, scenario.n_PF),
        pf_phi(scenario.links["PF2"], scenario.T_s, scenario.n_PF),
    )


def pf_power_total(scenario: ScenarioConfig, tau_PF: float, constants=CAPACITY_CONSTANTS) -> float:
    """Minimum total PF power for the end-to-end PF deadline ``tau_PF``."""
    if not tau_PF > 0:
        raise DomainError("tau_PF must be positive")
    _, c2, c3 = constants
    p1, p2 = _phis(scenario)
    return c2 * (p1 ** (-c3 - 1) + p2 ** (-c3 - 1)) + (tau_PF * p1 * p2 / (p1 + p2)) ** (-c3) * (1 / p1 + 1 / p2)


def pf_powers(scenario: ScenarioConfig, tau_PF: float):
    """Per-link powers at the optimal deadline split."""
    p1, p2 = _phis(scenario)
    t1, t2 = allocate_pf_deadlines(p1, p2, tau_PF)
    return (
        pf_power_for_deadline(scenario.links["PF1"], t1, scenario.T_s, scenario.n_PF),
        pf_power_for_deadline(scenario.links["PF2"], t2, scenario.T_s, scenario.n_PF),
    )


def _cd_exponent(scenario: ScenarioConfig) -> float:
    link = scenario.links["CD"]
    if scenario.corrected_rate:
        return link.packet_bits / (scenario.t_u * link.bandwidth)
    return scenario.t_u * link.packet_bits / link.bandwidth


def cd_required_rate(scenario: ScenarioConfig, kappa: float) -> float:
    """Rate the CD link must carry at ratio ``kappa``.

    By default this is ``t_u n / kappa`` with ``n`` the packet size at ratio
    one; ``corrected_rate`` switches to the dimensionally consistent
    ``n / (kappa t_u)``.
    """
    link = scenario.links["CD"]
    if scenario.corrected_rate:
        return link.packet_bits / (kappa * scenario.t_u)
    return scenario.t_u * link.packet_bits / kappa


def cd_power(scenario: ScenarioConfig, kappa: float) -> float:
    """Power the CD link needs so that its outage rate meets :func:`cd_required_rate`."""
    link = scenario.links["CD"]
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    if link.outage_prob == 0.0:
        raise DomainError("the CD link needs a positive outage probability")
    scale = -link.noise_psd * link.bandwidth / (link.gain * math.log1p(-link.outage_prob))
    return scale * math.expm1(math.log(2.0) * _cd_exponent(scenario) / kappa)


def cd_power_derivative(scenario: ScenarioConfig, kappa: float) -> float:
    link = scenario.links["CD"]
    scale = -link.noise_psd * link.bandwidth / (link.gain * math.log1p(-link.outage_prob))
    c = _cd_exponent(scenario)
    return -scale * math.log(2.0) * c / kappa**2 * 2.0 ** (c / kappa)


def max_power(scenario: ScenarioConfig, tau_PF: float) -> float:
    """Normaliser: PF power at ``tau_PF`` plus CD power without compression."""
    return pf_power_total(scenario, tau_PF) + cd_power(scenario, 1.0)


# -- feasibility bounds --------------------------------------------------------


def _bisect(pred, lo, hi, tol=1e-13, max_iter=200):
    """Largest point in [lo, hi] where ``pred`` holds, assuming pred(lo) and not pred(hi)."""
    path = []
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        ok = pred(mid)
        path.append((mid, ok))
        if ok:
            lo = mid
        else:
            hi = mid
    return lo, path


def kappa_upper_variance(scenario: ScenarioConfig, rho_ts: float) -> float:
    """Largest ratio whose ET latency variance stays within ``rho_ts``."""
    kmax = scenario.kappa_max
    if not math.isfinite(rho_ts):
        return kmax
    if et_variance(scenario, 1.0) > rho_ts:
        raise InfeasibleError("variance bound is below the uncompressed ET variance", "variance")
    if et_variance(scenario, kmax) <= rho_ts:
        return kmax
    k, _ = _bisect(lambda k: et_variance(scenario, k) <= rho_ts, 1.0, kmax)
    return k


def kappa_upper_tail(
    scenario: ScenarioConfig, eta_ts: float, tau_PF: float | None = None, delta: float = DEFAULT_DELTA
) -> float:
    """Largest ratio with ``Pr{T_ET < tau_PF} >= eta_ts``.

    Bisection assumes the probability falls with ``kappa``; if the points
    visited contradict that, a scan on a 1e-3 grid is used instead.
    """
    kmax = scenario.kappa_max
    if eta_ts <= 0.0:
        return kmax
    tau = scenario.tau_PF if tau_PF is None else tau_PF

    def prob(k):
        return cdf_ET(scenario, k, tau, delta)

    if prob(1.0) < eta_ts:
        raise InfeasibleError("tail bound fails even without compression", "tail")
    if prob(kmax) >= eta_ts:
        return kmax
    k, path = _bisect(lambda k: prob(k) >= eta_ts, 1.0, kmax, tol=1e-12)
    pts = sorted((kk, prob(kk)) for kk, _ in path)
    vals = np.array([p for _, p in pts])
    if np.any(np.diff(vals) > 1e-12):
        grid = np.arange(1.0, kmax + 1e-12, 1e-3)
        ok = [g for g in grid if prob(g) >= eta_ts]
        k = max(ok)
    return k


# -- objective -----------------------------------------------------------------


@functools.lru_cache(maxsize=100_000)
def _tail(scenario, kappa, T_th, delta):
    return float(sf_T(scenario, kappa, T_th, delta))


def _scenario_for(scenario: ScenarioConfig, cfg: OptimizationConfig) -> ScenarioConfig:
    if scenario.tau_PF == cfg.tau_PF:
        return scenario
    return replace(scenario, tau_PF=cfg.tau_PF)


def tail_probability(scenario: ScenarioConfig, kappa: float, T_th: float, delta: float = DEFAULT_DELTA) -> float:
    """``Pr{T > T_th}`` from the lattice-mixture product form."""
    return _tail(scenario, float(kappa), float(T_th), float(delta))


def total_power(scenario: ScenarioConfig, tau_PF: float, kappa: float) -> float:
    return pf_power_total(scenario, tau_PF) + cd_power(scenario, kappa)


def objective(scenario: ScenarioConfig, opt_config: OptimizationConfig, kappa: float) -> float:
    """``w Pr{T > T_th} + (1 - w) P_total / P_max``."""
    sc = _scenario_for(scenario, opt_config)
    w = opt_config.weight
    p_max = opt_config.P_max or max_power(sc, opt_config.tau_PF)
    power = total_power(sc, opt_config.tau_PF, kappa) / p_max
    if w == 0.0:
        return (1.0 - w) * power
    return w * tail_probability(sc, kappa, opt_config.T_th, opt_config.delta) + (1.0 - w) * power


def objective_gradient(scenario: ScenarioConfig, opt_config: OptimizationConfig, kappa: float) -> float:
    """Derivative of :func:`objective` in ``kappa`` (lattice masses held fixed)."""
    sc = _scenario_for(scenario, opt_config)
    w = opt_config.weight
    p_max = opt_config.P_max or max_power(sc, opt_config.tau_PF)
    g = (1.0 - w) * cd_power_derivative(sc, kappa) / p_max
    if w > 0.0:
        k = max(kappa, 1.0 + 1e-9) if sc.compression.kind is CompressionKind.EXP else kappa
        a = float(cdf_CL(sc, opt_config.T_th - sc.tau_PF, opt_config.delta))
        db = float(cdf_T1_grad_kappa(sc, k, opt_config.T_th, opt_config.delta, clip=None))
        g += -w * a * db
    return float(np.clip(g, -opt_config.clip, opt_config.clip))


# -- search ----------------------------------------------------------------------


def feasible_interval(scenario: ScenarioConfig, opt_config: OptimizationConfig):
    """``(lo, hi, bounds)`` with ``bounds`` recording each upper bound on kappa."""
    sc = _scenario_for(scenario, opt_config)
    lo, hi_cfg = opt_config.kappa_bounds
    lo = 1.0 if lo is None else lo
    bounds = {"kappa_max": sc.kappa_max if hi_cfg is None else min(hi_cfg, sc.kappa_max)}
    bounds["variance"] = kappa_upper_variance(sc, opt_config.rho_ts)
    bounds["tail"] = kappa_upper_tail(sc, opt_config.eta_ts, opt_config.tau_PF, opt_config.delta)
    hi = min(bounds.values())
    if hi < lo:
        binding = min(bounds, key=bounds.get)
        raise InfeasibleError(f"feasible interval is empty (bound {binding} = {hi:.6g})", binding)
    return lo, hi, bounds


def _is_unimodal(vals: np.ndarray, rtol=1e-12) -> bool:
    d = np.diff(vals)
    scale = max(np.max(np.abs(vals)), 1e-300)
    signs = np.sign(np.where(np.abs(d) <= rtol * scale, 0.0, d))
    signs = signs[signs != 0]
    # once the slope turns positive it must stay positive
    return not np.any(np.diff(signs) < 0)


def _grid(f, lo, hi, granularity, trace):
    n = max(int(math.floor((hi - lo) / granularity + 1e-9)), 0)
    ks = np.minimum(lo + granularity * np.arange(n + 1), hi)
    if hi - ks[-1] > 1e-12:
        ks = np.append(ks, hi)
    vals = np.array([f(k) for k in ks])
    trace.extend(zip(ks.tolist(), vals.tolist()))
    i = int(np.argmin(vals))
    return float(ks[i]), float(vals[i])


def _ternary(f, lo, hi, tol, trace):
    def ev(k):
        v = f(k)
        trace.append((k, v))
        return v

    a, b = lo, hi
    while b - a > tol:
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if ev(m1) <= ev(m2):
            b = m2
        else:
            a = m1
    cands = [(ev(k), k) for k in (a, 0.5 * (a + b), b)]
    v, k = min(cands)
    return k, v


def _gradient_descent(f, grad, lo, hi, cfg, trace):
    rng = np.random.default_rng(cfg.seed)
    starts = [lo + (hi - lo) * u for u in rng.random(cfg.restarts)]
    best = (math.inf, lo)
    for k in starts:
        fk = f(k)
        trace.append((k, fk))
        for _ in range(500):
            g = grad(k)
            if g == 0.0:
                break
            t = cfg.step * (hi - lo) / abs(g)
            while True:
                k_new = min(max(k - t * g, lo), hi)
                f_new = f(k_new)
                if f_new <= fk or t < 1e-14:
                    break
                t *= 0.5
            trace.append((k_new, f_new))
            moved = abs(k_new - k)
            if f_new <= fk:
                k, fk = k_new, f_new
            if moved < cfg.tol:
                break
        best = min(best, (fk, k))
    return best[1], best[0]


def optimize(scenario: ScenarioConfig, opt_config: OptimizationConfig) -> OptResult:
    """Minimise :func:`objective` over the feasible compression ratios."""
    sc = _scenario_for(scenario, opt_config)
    lo, hi, bounds = feasible_interval(sc, opt_config)
    p_max = opt_config.P_max or max_power(sc, opt_config.tau_PF)
    cfg = replace(opt_config, P_max=p_max)

    def f(k):
        return objective(sc, cfg, float(k))

    trace: list = []
    method = cfg.search
    boundary = False
    if hi - lo < 1e-12:
        k_star, val = lo, f(lo)
        trace.append((k_star, val))
        boundary = True
    elif method == "grid":
        k_star, val = _grid(f, lo, hi, cfg.granularity, trace)
    elif method == "ternary":
        scan = np.linspace(lo, hi, 20)
        vals = np.array([f(k) for k in scan])
        trace.extend(zip(scan.tolist(), vals.tolist()))
        if _is_unimodal(vals):
            k_star, val = _ternary(f, lo, hi, cfg.tol, trace)
        else:
            method = "grid"
            k_star, val = _grid(f, lo, hi, cfg.granularity, trace)
    else:
        k_star, val = _gradient_descent(f, lambda k: objective_gradient(sc, cfg, k), lo, hi, cfg, trace)
    boundary = boundary or k_star - lo < 1e-9 or hi - k_star < 1e-9

    p1, p2 = pf_powers(sc, cfg.tau_PF)
    slacks = {name: b - k_star for name, b in bounds.items()}
    return OptResult(
        kappa_star=float(k_star),
        powers={"P_PF1": p1, "P_PF2": p2, "P_CD": cd_power(sc, k_star)},
        objective=float(val),
        constraint_slacks=slacks,
        trace=trace,
        method=method,
        interval=(lo, hi),
        boundary=boundary,
        tail_prob=tail_probability(sc, k_star, cfg.T_th, cfg.delta),
    )


def write_trace_csv(path, rows) -> None:
    """Rows of ``(kappa, objective, P_total, tail_prob)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("kappa", "objective", "P_total", "tail_prob"))
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


# -- tradeoff ------------------------------------------------------------------


@dataclass
class Frontier:
    tau_PF: float
    points: np.ndarray   # columns: kappa, power, tail probability
    pareto: np.ndarray   # subset of points on the lower-left frontier


def pareto_filter(points: np.ndarray) -> np.ndarray:
    """Points not dominated in (power, tail), sorted by increasing power."""
    order = np.lexsort((points[:, 2], points[:, 1]))
    keep = []
    best = math.inf
    for i in order:
        if points[i, 2] < best:
            keep.append(i)
            best = points[i, 2]
    return points[keep]


def tradeoff_curve(
    scenario: ScenarioConfig,
    tau_PF_list,
    kappa_grid,
    T_th: float = 0.4,
    eta_ts: float = 0.9,
    rho_ts: float = math.inf,
    delta: float = DEFAULT_DELTA,
) -> list:
    """Power against violation probability for each PF deadline."""
    out = []
    for tau in tau_PF_list:
        sc = replace(scenario, tau_PF=float(tau))
        cfg = OptimizationConfig(T_th=T_th, tau_PF=float(tau), eta_ts=eta_ts, rho_ts=rho_ts, delta=delta)
        try:
            lo, hi, _ = feasible_interval(sc, cfg)
        except InfeasibleError:
            out.append(Frontier(float(tau), np.empty((0, 3)), np.empty((0, 3))))
            continue
        ks = [min(k, hi) for k in kappa_grid if lo <= k <= hi + 1e-12]
        pts = np.array(
            [(k, total_power(sc, tau, k), tail_probability(sc, k, T_th, delta)) for k in ks]
        ).reshape(-1, 3)
        out.append(Frontier(float(tau), pts, pareto_filter(pts) if len(pts) else pts))
    return out


# -- vertex constraints --------------------------------------------------------


@dataclass(frozen=True)
class VertexConfig:
    vertex: int = 8
    tau_PF: float = 0.25
    varrho_CL: float = math.inf
    varrho_FLs: float = math.inf
    tau_CL: float = math.inf
    eta_CL: float = 0.0
    eta_ts: float = 0.0
    rho_ts: float = math.inf
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.vertex not in VERTICES:
            raise ValueError(f"vertex must be one of {VERTICES}")


def cl_value_at_risk(scenario: ScenarioConfig, eta_CL: float, delta: float = DEFAULT_DELTA, tol: float = 1e-12) -> float:
    """Smallest ``t`` with ``Pr{T_CL < t} >= eta_CL``, found by bisection."""
    if not 0.0 < eta_CL < 1.0:
        raise DomainError("eta_CL must lie in (0, 1)")
    lo, hi = 0.0, max(cl_mean(scenario), scenario.t_u)
    while cdf_CL(scenario, hi, delta) < eta_CL:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if cdf_CL(scenario, mid, delta) >= eta_CL:
            hi = mid
        else:
            lo = mid
    return hi


def evaluate_vertex_constraints(scenario: ScenarioConfig, kappa: float, vertex_config: VertexConfig) -> dict:
    """Slack of every constraint of the chosen vertex (nonnegative means satisfied).

    Vertices 2 and 6 use average constraints, 4 and 8 tail constraints;
    vertices 6 and 8 drop the control-link requirement. The PF deadline split
    always meets ``tau_PF1 + tau_PF2 <= tau_PF`` with equality.
    """
    vc = vertex_config
    sc = replace(scenario, tau_PF=vc.tau_PF)
    rep: dict = {"vertex": vc.vertex, "pf_deadline_sum": 0.0}
    with_cl = vc.vertex in (2, 4)
    if vc.vertex in (2, 6):
        if with_cl:
            rep["cl_mean"] = vc.varrho_CL - cl_mean(sc)
        rep["jitter_excess"] = vc.varrho_FLs - conditional_excess(sc, kappa, vc.tau_PF)
    else:
        if with_cl:
            rep["cl_tail"] = float(cdf_CL(sc, vc.tau_CL, vc.delta)) - vc.eta_CL if math.isfinite(vc.tau_CL) else 1.0 - vc.eta_CL
            if 0.0 < vc.eta_CL < 1.0:
                rep["cl_value_at_risk"] = cl_value_at_risk(sc, vc.eta_CL, vc.delta)
        rep["et_tail"] = float(cdf_ET(sc, kappa, vc.tau_PF, vc.delta)) - vc.eta_ts
        rep["et_variance"] = vc.rho_ts - et_variance(sc, kappa)
    rep["feasible"] = all(v >= 0 for k, v in rep.items() if k not in ("vertex", "cl_value_at_risk"))
    return rep
