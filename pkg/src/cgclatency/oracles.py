"""Reference answers that do not go through the saddlepoint code.

* :func:`mc_closed_loop` simulates every latency component of the loop.
* :func:`truncated_convolution_cdf` discretises gamma densities on a grid and
  convolves them (the brute-force baseline the SPA is compared with).
* :func:`exact_lattice_convolution` convolves exact negative-binomial masses.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from .distributions import exact_negbin_pmf, negbin_support, sample_term
from .latency import LatencyCurve, PmfTable
from .model import ModelKind, ScenarioConfig, continuous_terms, lattice_terms

DEFAULT_SAMPLES = 1_000_000
DEFAULT_SHARDS = 16
CONVOLUTION_BUDGET = 5e8


class BudgetExceededError(RuntimeError):
    """The requested computation is larger than the configured budget."""


@dataclass
class McReport:
    samples: int
    seed: int
    curves: dict
    excess_estimates: dict
    runtime: float
    grid: np.ndarray
    product_estimate: np.ndarray
    sorted_samples: dict = field(repr=False, default_factory=dict)

    def cdf(self, quantity: str, x):
        """Empirical ``Pr{X < x}`` of one of T_CL, T_ET, T_FL, T, T1."""
        data = self.sorted_samples[quantity]
        return np.searchsorted(data, np.asarray(x, dtype=float), side="left") / data.size

    def standard_error(self, p):
        p = np.asarray(p, dtype=float)
        return np.sqrt(p * (1.0 - p) / self.samples)

    def quantile(self, quantity: str, q):
        return np.quantile(self.sorted_samples[quantity], q)

    def summary(self) -> dict:
        qs = [0.5, 0.9, 0.99, 0.999]
        return {
            "samples": self.samples,
            "seed": self.seed,
            "runtime_seconds": self.runtime,
            "quantiles": {
                name: {str(q): float(self.quantile(name, q)) for q in qs} for name in self.sorted_samples
            },
            "excess": {
                repr(float(tau)): {"mean": m, "standard_error": se}
                for tau, (m, se) in self.excess_estimates.items()
            },
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _shard_sizes(samples: int, shards: int):
    base, extra = divmod(samples, shards)
    return [base + (i < extra) for i in range(shards)]


def _draw_shard(gammas, lattices, n, seed_seq):
    rng = np.random.default_rng(seed_seq)
    out = {}
    for name, term in gammas.items():
        out[name] = sample_term(term, rng, n) if term is not None else np.zeros(n)
    for name, term in lattices.items():
        out[name] = sample_term(term, rng, n)
    return out


def mc_closed_loop(
    scenario: ScenarioConfig,
    kappa: float,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    *,
    grid=None,
    tau_list=(),
    threads: int | None = None,
    shards: int = DEFAULT_SHARDS,
) -> McReport:
    """Simulate the loop ``samples`` times.

    Each draw forms ``T_CL`` (two control hops plus low-level processing),
    ``T_ET`` (compression, decompression, feature extraction and two feedback
    hops), ``T_FL = max(tau_PF, T_ET)`` and ``T = T_CL + T_FL``. Work is split
    into a fixed number of shards, each with its own child seed, so the result
    does not depend on the number of worker threads.
    """
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    t0 = time.perf_counter()
    ct = continuous_terms(scenario, kappa)
    gammas = {"c": ct.compression, "d": ct.decompression, "vi": ct.vi_processing, "ll": ct.ll_processing}
    hl, ll, cd, vi = lattice_terms(scenario, kappa, ModelKind.LOOP)
    lattices = {"HL": hl, "LL": ll, "CD": cd, "VI": vi}

    children = np.random.SeedSequence(seed).spawn(shards)
    sizes = _shard_sizes(samples, shards)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda a: _draw_shard(gammas, lattices, *a), zip(sizes, children)))
    comp = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    t_cl = comp["HL"] + comp["LL"] + comp["ll"]
    t_et = comp["c"] + comp["d"] + comp["vi"] + comp["CD"] + comp["VI"]
    t_fl = np.maximum(scenario.tau_PF, t_et)
    t = t_cl + t_fl
    t1 = t_cl + t_et

    excess = {}
    for tau in tau_list:
        e = np.maximum(t_et - tau, 0.0)
        excess[float(tau)] = (float(e.mean()), float(e.std(ddof=1) / math.sqrt(samples)))

    data = {name: np.sort(arr) for name, arr in (("T_CL", t_cl), ("T_ET", t_et), ("T_FL", t_fl), ("T", t), ("T1", t1))}
    if grid is None:
        grid = np.linspace(0.0, float(np.quantile(data["T"], 0.9999)), 400)
    grid = np.asarray(grid, dtype=float)

    def ecdf(name, x):
        return np.searchsorted(data[name], x, side="left") / samples

    curves = {
        name: LatencyCurve(grid, ecdf(name, grid), "MonteCarlo", {"scenario": scenario.preset_name, "kappa": kappa, "delta": ""})
        for name in ("T_CL", "T_ET", "T_FL", "T")
    }
    on = grid > scenario.tau_PF
    product = np.where(on, ecdf("T_CL", grid - scenario.tau_PF) * ecdf("T1", grid), 0.0)
    return McReport(
        samples=samples,
        seed=seed,
        curves=curves,
        excess_estimates=excess,
        runtime=time.perf_counter() - t0,
        grid=grid,
        product_estimate=product,
        sorted_samples=data,
    )


def truncated_convolution_cdf(
    gamma_terms,
    delta1: float = 1e-3,
    lambda1: float = 20.0,
    rule: str = "floor",
    budget: float = CONVOLUTION_BUDGET,
) -> LatencyCurve:
    """CDF of a sum of gamma variables by grid discretisation and convolution.

    Every variable is put on the grid ``j * delta1``, ``j * delta1 <= lambda1``:
    with ``rule="floor"`` the mass at ``j * delta1`` is the probability of the
    cell ``[j delta1, (j+1) delta1)`` (the variable rounded down to the grid);
    with ``rule="density"`` it is ``f(j delta1) delta1``. The mass vectors are
    convolved pairwise, truncated to the same range and accumulated.
    """
    terms = list(gamma_terms)
    n = int(math.floor(lambda1 / delta1 + 1e-9)) + 1
    cost = len(terms) * n * math.log2(max(n, 2)) * 4
    if cost > budget:
        raise BudgetExceededError(f"truncated convolution needs ~{cost:.3g} operations, budget {budget:.3g}")
    xs = np.arange(n) * delta1
    mass = None
    for term in terms:
        scale = 1.0 / term.rate
        if rule == "floor":
            m = np.diff(stats.gamma.cdf(np.append(xs, xs[-1] + delta1), term.shape, scale=scale))
        elif rule == "density":
            m = stats.gamma.pdf(xs, term.shape, scale=scale) * delta1
        else:
            raise ValueError("rule must be 'floor' or 'density'")
        mass = m if mass is None else signal.fftconvolve(mass, m)[:n]
    mass = np.clip(mass, 0.0, None)
    meta = {"delta": delta1, "lambda": lambda1, "rule": rule}
    return LatencyCurve(xs, np.minimum(np.cumsum(mass), 1.0), "TruncConv", meta)


def step_lookup(curve: LatencyCurve, x):
    """Value of a grid-based CDF at arbitrary points (right-continuous step)."""
    x = np.asarray(x, dtype=float)
    idx = np.searchsorted(curve.xs, x, side="right") - 1
    return np.where(idx >= 0, curve.ps[np.clip(idx, 0, None)], 0.0)


def exact_lattice_convolution(lattice_terms_, tail: float = 1e-12) -> PmfTable:
    """Exact mass table of a sum of negative-binomial transmission counts."""
    terms = list(lattice_terms_)
    spacings = {t.spacing for t in terms}
    if len(spacings) != 1:
        raise ValueError("all lattice terms must share one spacing")
    probs = np.array([1.0])
    base = 0
    for term in terms:
        ks = negbin_support(term, tail)
        probs = np.convolve(probs, exact_negbin_pmf(term, ks))
        base += term.packets
    probs = probs / probs.sum()
    return PmfTable(base, spacings.pop(), probs)
