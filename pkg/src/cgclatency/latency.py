"""Latency distributions of the loop built from saddlepoint pieces.

The lattice (retransmission) part is turned into a normalised mass table by
:func:`pmf_discrete_sum`; the continuous part (computation, compression,
decompression) is handled by the Lugannani-Rice formula; the two are mixed by
summing shifted continuous CDFs weighted by the lattice masses.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import CgfModel, DomainError, UnsupportedOperationError, exact_gamma_cdf, exact_gamma_sf
from .model import (
    CompressionKind,
    ModelKind,
    ScenarioConfig,
    build_clt_cgf,
    build_continuous_cgf,
    lattice_terms,
    compression_rate,
    continuous_terms,
    decompression_rate,
    zeta_c,
    zeta_c_prime,
    zeta_d,
    zeta_d_prime,
)
from .saddlepoint import (
    LOWER_BRACKET_LIMIT,
    MEAN_BRANCH_V,
    solve_saddlepoint,
    spa_cdf,
    spa_pdf,
    spa_pmf,
    spa_sf,
    _mean_mask,
)

DEFAULT_DELTA = 1e-5
GRADIENT_CLIP = 1e6
MAX_TABLE_LENGTH = 200_000
CSV_HEADER = ("x_seconds", "probability", "method", "scenario", "kappa", "delta")


@dataclass(frozen=True)
class PmfTable:
    """Mass ``probs[i]`` sits at time ``(base_index + i) * spacing``."""

    base_index: int
    spacing: float
    probs: np.ndarray
    normalized: bool = True
    truncated_early: bool = False

    @property
    def indices(self) -> np.ndarray:
        return self.base_index + np.arange(len(self.probs))

    @property
    def times(self) -> np.ndarray:
        return self.indices * self.spacing

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.times))


@dataclass
class LatencyCurve:
    xs: np.ndarray
    ps: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    def rows(self):
        scen = self.meta.get("scenario", "")
        kappa = self.meta.get("kappa", "")
        delta = self.meta.get("delta", "")
        for x, p in zip(self.xs, self.ps):
            yield (repr(float(x)), repr(float(p)), self.method, scen, kappa, delta)


def write_curves_csv(path, curves) -> None:
    """Write one or more curves to ``path`` in the common long format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for c in curves:
            w.writerows(c.rows())


# -- lattice mass table -------------------------------------------------------


def pmf_discrete_sum(lattice: CgfModel, delta: float = DEFAULT_DELTA, chunk: int = 64) -> PmfTable:
    """Normalised saddlepoint mass table of a lattice model.

    Masses are computed for ``k = base, base+1, ...`` until the first one
    below ``delta`` (that one is kept). The entries above the base are then
    rescaled so that together they carry exactly one minus the base mass.
    If already ``k = base + 1`` falls below ``delta`` the table has two entries
    and ``truncated_early`` is set.
    """
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    if not lattice.is_lattice:
        raise UnsupportedOperationError("pmf_discrete_sum needs a lattice-only model")
    base = lattice.base_count
    spacing = lattice.lattice_spacing
    p_base = spa_pmf(lattice, base)
    if all(t.failure_prob == 0.0 for t in lattice.lattice_terms):
        return PmfTable(base, spacing, np.array([1.0]))

    vals = []
    k = base + 1
    while True:
        ks = np.arange(k, k + chunk)
        p = spa_pmf(lattice, ks)
        below = np.flatnonzero(p < delta)
        if below.size:
            vals.append(p[: below[0] + 1])
            break
        vals.append(p)
        k += chunk
        if k - base > MAX_TABLE_LENGTH:
            raise DomainError("lattice mass table exceeds its length limit; raise delta")
        chunk = min(2 * chunk, 4096)
    inner = np.concatenate(vals)
    inner = (1.0 - p_base) * inner / inner.sum()
    probs = np.concatenate([[p_base], inner])
    return PmfTable(base, spacing, probs, truncated_early=len(inner) == 1)


# -- cached per-(scenario, kappa) pieces -------------------------------------


@functools.lru_cache(maxsize=512)
def _continuous(scenario: ScenarioConfig, kappa: float, kind: ModelKind) -> CgfModel:
    return build_continuous_cgf(scenario, kappa, kind)


@functools.lru_cache(maxsize=512)
def _clt(scenario: ScenarioConfig, kappa: float, kind: ModelKind) -> CgfModel:
    return build_clt_cgf(scenario, kappa, kind)


@functools.lru_cache(maxsize=512)
def _table(terms: tuple, delta: float) -> PmfTable:
    return pmf_discrete_sum(CgfModel(lattice_terms=list(terms)), delta)


def lattice_table(scenario: ScenarioConfig, kappa: float, kind="ET", delta: float = DEFAULT_DELTA) -> PmfTable:
    """Cached :func:`pmf_discrete_sum` of the scenario's lattice part."""
    return _table(tuple(lattice_terms(scenario, float(kappa), ModelKind(kind))), float(delta))


def _floor(model: CgfModel) -> float:
    # arguments at or below this point are treated as lying off the support
    return float(model._cgf_unchecked(np.array([0.5 * LOWER_BRACKET_LIMIT])).K1[0])


def _continuous_values(model: CgfModel, args: np.ndarray, upper: bool) -> np.ndarray:
    out = np.full(args.shape, 1.0 if upper else 0.0)
    ok = args > max(_floor(model), model.support_infimum)
    if np.any(ok):
        fn = spa_sf if upper else spa_cdf
        out[ok] = fn(model, args[ok])
    return out


def mixture_cdf(model: CgfModel, table: PmfTable, x, upper: bool = False):
    """``sum_k p_k F(x - k t)`` (or the matching survival sum when ``upper``)."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    args = x_arr[:, None] - table.times[None, :]
    vals = _continuous_values(model, args.ravel(), upper).reshape(args.shape)
    out = vals @ table.probs
    if not upper:
        out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out


def _scal(out, x):
    return float(out[0]) if np.ndim(x) == 0 else out


# -- the named distributions --------------------------------------------------


def cdf_ET(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA):
    """``Pr{T_ET < x}`` from the lattice mass table mixed with the SPA of the continuous part."""
    return mixture_cdf(_continuous(scenario, kappa, ModelKind.ET), lattice_table(scenario, kappa, "ET", delta), x)


def sf_ET(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA):
    return mixture_cdf(
        _continuous(scenario, kappa, ModelKind.ET), lattice_table(scenario, kappa, "ET", delta), x, upper=True
    )


def _cl_terms(scenario, delta):
    table = lattice_table(scenario, scenario.kappa_ref, "CL", delta)
    ll = continuous_terms(scenario, scenario.kappa_ref).ll_processing
    return table, ll


def cdf_CL(scenario: ScenarioConfig, x, delta: float = DEFAULT_DELTA):
    """``Pr{T_CL < x}``: lattice table of the two control-link hops mixed with the exact gamma CDF."""
    table, ll = _cl_terms(scenario, delta)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    args = x_arr[:, None] - table.times[None, :]
    out = np.clip(exact_gamma_cdf(ll.shape, ll.rate, args) @ table.probs, 0.0, 1.0)
    return _scal(out, x)


def sf_CL(scenario: ScenarioConfig, x, delta: float = DEFAULT_DELTA):
    table, ll = _cl_terms(scenario, delta)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    args = x_arr[:, None] - table.times[None, :]
    return _scal(exact_gamma_sf(ll.shape, ll.rate, args) @ table.probs, x)


def cdf_FL(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA):
    """``Pr{max(tau_PF, T_ET) < x}``."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.where(x_arr > scenario.tau_PF, np.atleast_1d(cdf_ET(scenario, kappa, x_arr, delta)), 0.0)
    return _scal(out, x)


def cdf_T1(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA, method: str = "theorem1"):
    """CDF of control-link latency plus event-triggered latency.

    ``method="theorem1"`` mixes the lattice mass table with the continuous
    SPA; ``method="theorem2"`` replaces the lattice part by a normal term.
    """
    if method == "theorem1":
        return mixture_cdf(
            _continuous(scenario, kappa, ModelKind.LOOP), lattice_table(scenario, kappa, "Loop", delta), x
        )
    if method == "theorem2":
        return spa_cdf(_clt(scenario, kappa, ModelKind.LOOP), x)
    raise ValueError(f"unknown method {method!r}")


def sf_T1(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA, method: str = "theorem1"):
    if method == "theorem1":
        return mixture_cdf(
            _continuous(scenario, kappa, ModelKind.LOOP), lattice_table(scenario, kappa, "Loop", delta), x, upper=True
        )
    if method == "theorem2":
        return spa_sf(_clt(scenario, kappa, ModelKind.LOOP), x)
    raise ValueError(f"unknown method {method!r}")


def cdf_T(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA, method: str = "theorem1"):
    """Closed-loop latency CDF ``1{x > tau_PF} F_CL(x - tau_PF) F_T1(x)``.

    The product treats the two events as independent although both contain
    the control-link latency.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros(x_arr.shape)
    on = x_arr > scenario.tau_PF
    if np.any(on):
        a = np.atleast_1d(cdf_CL(scenario, x_arr[on] - scenario.tau_PF, delta))
        b = np.atleast_1d(cdf_T1(scenario, kappa, x_arr[on], delta, method))
        out[on] = a * b
    return _scal(out, x)


def sf_T(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA, method: str = "theorem1"):
    """``1 - cdf_T`` computed as ``(1 - a) + a (1 - b)`` to keep small tails accurate."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.ones(x_arr.shape)
    on = x_arr > scenario.tau_PF
    if np.any(on):
        xs = x_arr[on]
        a_sf = np.atleast_1d(sf_CL(scenario, xs - scenario.tau_PF, delta))
        b_sf = np.atleast_1d(sf_T1(scenario, kappa, xs, delta, method))
        out[on] = np.clip(a_sf + (1.0 - a_sf) * b_sf, 0.0, 1.0)
    return _scal(out, x)


def cdf_ET_clt(scenario: ScenarioConfig, kappa: float, x):
    """ET latency CDF with the lattice part replaced by a normal variable."""
    return spa_cdf(_clt(scenario, kappa, ModelKind.ET), x)


def pdf_ET_clt(scenario: ScenarioConfig, kappa: float, x):
    return spa_pdf(_clt(scenario, kappa, ModelKind.ET), x)


def _excess_at(model: CgfModel, tau: float) -> float:
    psi = model.mean
    sol = solve_saddlepoint(model, tau)
    sf = spa_sf(model, tau)
    dens = spa_pdf(model, tau)
    return (psi - tau) * sf + (tau - psi) / sol.s_star * dens


def conditional_excess(scenario: ScenarioConfig, kappa: float, tau_PF: float) -> float:
    """Approximate ``E{(T_ET - tau_PF)^+}`` from one saddlepoint evaluation.

    Uses the normal-lattice ET model. Within the mean-branch width of the
    mean, the value is the average of the two points one width either side.
    """
    model = _clt(scenario, kappa, ModelKind.ET)
    psi = model.mean
    width = max(1e-6 * max(1.0, abs(psi)), 2.0 * MEAN_BRANCH_V * math.sqrt(model.variance))
    if abs(tau_PF - psi) < width:
        return 0.5 * (_excess_at(model, psi - width) + _excess_at(model, psi + width))
    return float(max(_excess_at(model, tau_PF), 0.0))


# -- gradient in kappa ------------------------------------------------------


def _rate_derivs(scenario: ScenarioConfig, kappa: float):
    """(term, d rate / d kappa) for the two kappa-dependent gamma terms."""
    comp = scenario.compression
    ct = continuous_terms(scenario, kappa)
    out = []
    if ct.compression is not None:
        b = compression_rate(scenario, kappa)
        out.append((ct.compression, -b * zeta_c_prime(comp, kappa) / zeta_c(comp, kappa)))
    if ct.decompression is not None:
        b = decompression_rate(scenario, kappa)
        out.append((ct.decompression, b * (1.0 / kappa - zeta_d_prime(comp, kappa) / zeta_d(comp, kappa))))
    return out


def _partials_kappa(scenario, kappa, s):
    """Partial derivatives in kappa of K, K', K'' at fixed ``s``."""
    dK = np.zeros_like(s)
    dK1 = np.zeros_like(s)
    dK2 = np.zeros_like(s)
    for term, db in _rate_derivs(scenario, kappa):
        a, b = term.shape, term.rate
        dK += -a * s / (b * (b - s)) * db
        dK1 += -a / (b - s) ** 2 * db
        dK2 += -2.0 * a / (b - s) ** 3 * db
    return dK, dK1, dK2


def _check_grad_kappa(scenario, kappa):
    comp = scenario.compression
    if comp.kind is CompressionKind.EXP and kappa <= 1.0:
        raise DomainError(
            "at kappa = 1 the compression and decompression times vanish; the CDF is not differentiable there"
        )
    if not 1.0 <= kappa <= comp.kappa_max:
        raise DomainError(f"kappa={kappa} outside [1, {comp.kappa_max}]")


def _fd_grad(scenario, kappa, x, kind, h=1e-5):
    lo, hi = max(kappa - h, 1.0 + 1e-12), min(kappa + h, scenario.kappa_max)
    f_hi = spa_cdf(build_continuous_cgf(scenario, hi, kind), x)
    f_lo = spa_cdf(build_continuous_cgf(scenario, lo, kind), x)
    return (np.asarray(f_hi) - np.asarray(f_lo)) / (hi - lo)


def cdf_grad_kappa(scenario: ScenarioConfig, kappa: float, x, kind="Loop", clip: float | None = GRADIENT_CLIP):
    """Derivative in kappa of the Lugannani-Rice CDF of the continuous part.

    Differentiates the saddlepoint equation implicitly: with ``Z`` the
    saddlepoint, ``dZ/dk = -dK'/dk / K''``, ``dv/dk = -(dK/dk) / v`` and
    ``du/dk = sqrt(K'') dZ/dk + Z (dK''/dk + K''' dZ/dk) / (2 sqrt(K''))``,
    then applies the chain rule to ``Phi(v) + phi(v) (1/v - 1/u)``. Points in
    the mean branch fall back to a central finite difference.
    """
    kind = ModelKind(kind)
    _check_grad_kappa(scenario, kappa)
    model = build_continuous_cgf(scenario, kappa, kind)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros(x_arr.shape)
    ok = x_arr > max(_floor(model), model.support_infimum)
    xs = x_arr[ok]
    if xs.size:
        sol = solve_saddlepoint(model, xs)
        z, v, u = (np.atleast_1d(a) for a in (sol.s_star, sol.v, sol.u))
        vals = model._cgf_unchecked(z)
        dK, dK1, dK2 = _partials_kappa(scenario, kappa, z)
        dz = -dK1 / vals.K2
        mean_pt = _mean_mask(model, xs, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            dv = -dK / v
            sq = np.sqrt(vals.K2)
            du = sq * dz + z * (dK2 + vals.K3 * dz) / (2.0 * sq)
            phi = np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
            g = phi * (v / u - 1.0 / v**2) * dv + phi / u**2 * du
        if np.any(mean_pt):
            g[mean_pt] = np.atleast_1d(_fd_grad(scenario, kappa, xs[mean_pt], kind))
        out[ok] = g
    if clip is not None:
        out = np.clip(out, -clip, clip)
    return _scal(out, x)


def cdf_T1_grad_kappa(scenario: ScenarioConfig, kappa: float, x, delta: float = DEFAULT_DELTA, clip=GRADIENT_CLIP):
    """Derivative in kappa of the mixture CDF of control-link plus ET latency.

    The lattice masses are held fixed (they do not depend on kappa when the
    compressed packet count is fixed).
    """
    table = lattice_table(scenario, kappa, "Loop", delta)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    args = x_arr[:, None] - table.times[None, :]
    g = np.atleast_1d(cdf_grad_kappa(scenario, kappa, args.ravel(), "Loop", clip=None)).reshape(args.shape)
    out = g @ table.probs
    if clip is not None:
        out = np.clip(out, -clip, clip)
    return _scal(out, x)


# -- curves -------------------------------------------------------------------


def curve(quantity: str, method: str, scenario: ScenarioConfig, kappa: float, xs, delta: float = DEFAULT_DELTA) -> LatencyCurve:
    """Evaluate one named CDF on a grid.

    ``quantity`` is one of ET, CL, FL, T. ``method`` is ``theorem1`` for the
    lattice mass table mixed with the continuous SPA, or ``lemma3`` /
    ``theorem2`` for the normal approximation of the lattice part (the two
    names select the same model, for the ET and loop quantities respectively).
    """
    xs = np.asarray(xs, dtype=float)
    q, m = quantity.upper(), method.lower()
    if m not in ("theorem1", "lemma3", "theorem2"):
        raise ValueError(f"unknown method {method!r}")
    if q == "ET":
        ps = cdf_ET(scenario, kappa, xs, delta) if m == "theorem1" else cdf_ET_clt(scenario, kappa, xs)
    elif q == "CL":
        ps = cdf_CL(scenario, xs, delta)
    elif q == "FL":
        if m == "theorem1":
            ps = cdf_FL(scenario, kappa, xs, delta)
        else:
            ps = np.where(xs > scenario.tau_PF, cdf_ET_clt(scenario, kappa, xs), 0.0)
    elif q == "T":
        ps = cdf_T(scenario, kappa, xs, delta, "theorem1" if m == "theorem1" else "theorem2")
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    label = {"theorem1": "Theorem1", "lemma3": "Lemma3", "theorem2": "Theorem2"}[m]
    meta = {"scenario": scenario.preset_name, "kappa": kappa, "delta": delta, "quantity": q}
    return LatencyCurve(xs, np.asarray(ps, dtype=float), label, meta)
