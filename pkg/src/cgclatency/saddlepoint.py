"""Saddlepoint machinery for any :class:`~cgclatency.distributions.CgfModel`.

All public functions accept scalars or arrays of evaluation points and return
the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import (
    CgfModel,
    DomainError,
    NonConvergenceError,
    UnsupportedOperationError,
)

TOL_REL = 1e-10
TOL_ABS = 1e-15
MEAN_BRANCH_REL = 1e-8
MEAN_BRANCH_V = 1e-5
LOWER_BRACKET_LIMIT = -1e9
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SaddlepointSolution:
    """Saddlepoint ``s_star`` with the signed root ``v`` and the scaled point ``u``.

    ``v = sign(s)*sqrt(2(x s - K(s)))`` and ``u = s*sqrt(K''(s))``.
    """

    x: np.ndarray
    s_star: np.ndarray
    residual: np.ndarray
    v: np.ndarray
    u: np.ndarray
    K: np.ndarray
    K2: np.ndarray


def _scalarize(arr, like):
    return float(np.reshape(arr, -1)[0]) if np.ndim(like) == 0 else arr


def _lower_bracket(model: CgfModel, x: np.ndarray) -> np.ndarray:
    lo = np.full_like(x, -1.0)
    todo = model._cgf_unchecked(lo).K1 >= x
    while np.any(todo):
        lo[todo] *= 2.0
        if np.any(lo < LOWER_BRACKET_LIMIT):
            raise NonConvergenceError(
                "saddlepoint bracket expansion passed -1e9; x is too close to the support infimum"
            )
        todo = model._cgf_unchecked(lo).K1 >= x
    return lo


def _upper_bracket(model: CgfModel, x: np.ndarray) -> np.ndarray:
    s_max = model.s_max
    if math.isfinite(s_max):
        return np.full_like(x, s_max)
    hi = np.ones_like(x)
    todo = model._cgf_unchecked(hi).K1 <= x
    while np.any(todo):
        hi[todo] *= 2.0
        if np.any(hi > -LOWER_BRACKET_LIMIT):
            raise NonConvergenceError("saddlepoint bracket expansion passed 1e9")
        todo = model._cgf_unchecked(hi).K1 <= x
    return hi


def solve_saddlepoint(
    model: CgfModel, x, *, tol_rel: float = TOL_REL, tol_abs: float = TOL_ABS, max_iter: int = 400
) -> SaddlepointSolution:
    """Solve ``K'(s) = x`` for every entry of ``x``.

    The root is bracketed between a geometrically expanded lower point and the
    domain edge, then located by Newton steps that fall back to bisection
    whenever they leave the bracket.
    """
    x_in = x
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if np.any(~np.isfinite(x)):
        raise DomainError("x must be finite")
    inf = model.support_infimum
    if model.is_lattice:
        hi_bad = x <= inf
    else:
        hi_bad = x <= inf if math.isfinite(inf) else np.zeros(x.shape, bool)
    if np.any(hi_bad):
        raise DomainError(f"x must exceed the support infimum {inf:.6g}")

    lo = _lower_bracket(model, x)
    hi = _upper_bracket(model, x)
    s = np.zeros_like(x)
    tol = tol_abs + tol_rel * np.abs(x)
    done = np.zeros(x.shape, bool)
    for _ in range(max_iter):
        act = ~done
        if not np.any(act):
            break
        sa = s[act]
        vals = model._cgf_unchecked(sa)
        f = vals.K1 - x[act]
        conv = np.abs(f) <= tol[act]
        lo_a, hi_a = lo[act], hi[act]
        lo_a = np.where(f < 0, sa, lo_a)
        hi_a = np.where(f > 0, sa, hi_a)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = sa - f / vals.K2
        mid = 0.5 * (lo_a + hi_a)
        ok = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a)
        step = np.where(ok, newton, mid)
        # a converged point gets one more Newton step for free accuracy
        step = np.where(conv & ok, newton, np.where(conv, sa, step))
        collapsed = np.nextafter(lo_a, hi_a) >= hi_a
        s[act] = np.where(collapsed, sa, step)
        lo[act], hi[act] = lo_a, hi_a
        done[act] = conv | collapsed
    else:
        raise NonConvergenceError("saddlepoint iteration limit reached")

    vals = model._cgf_unchecked(s)
    residual = np.abs(vals.K1 - x)
    gap = np.maximum(model.tilted_gap(s), 0.0)
    v = np.sign(s) * np.sqrt(2.0 * gap)
    u = s * np.sqrt(vals.K2)
    out = SaddlepointSolution(
        x=_scalarize(x, x_in),
        s_star=_scalarize(s, x_in),
        residual=_scalarize(residual, x_in),
        v=_scalarize(v, x_in),
        u=_scalarize(u, x_in),
        K=_scalarize(vals.K, x_in),
        K2=_scalarize(vals.K2, x_in),
    )
    return out


def mean_branch_value(model: CgfModel) -> float:
    """Lugannani-Rice value at the mean, ``1/2 + K'''(0) / (6 sqrt(2 pi) K''(0)^{3/2})``."""
    return 0.5 + model.third_cumulant / (6.0 * _SQRT_2PI * model.variance**1.5)


def _mean_mask(model: CgfModel, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    mu = model.mean
    return (np.abs(x - mu) <= MEAN_BRANCH_REL * max(1.0, abs(mu))) | (np.abs(v) < MEAN_BRANCH_V)


def _lr_raw(model: CgfModel, x, upper: bool):
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    sol = solve_saddlepoint(model, x_arr)
    v, u = np.atleast_1d(sol.v), np.atleast_1d(sol.u)
    mean_pt = _mean_mask(model, x_arr, v)
    vs = np.where(mean_pt, 1.0, v)
    us = np.where(mean_pt, 1.0, u)
    corr = np.exp(-0.5 * vs * vs) / _SQRT_2PI * (1.0 / vs - 1.0 / us)
    if upper:
        val = special.ndtr(-vs) - corr
        mb = 1.0 - mean_branch_value(model)
    else:
        val = special.ndtr(vs) + corr
        mb = mean_branch_value(model)
    return np.where(mean_pt, mb, val)


def spa_cdf_unclamped(model: CgfModel, x):
    """Lugannani-Rice CDF before clamping to [0, 1]."""
    return _scalarize(_lr_raw(model, x, upper=False), x)


def spa_cdf(model: CgfModel, x):
    """Lugannani-Rice approximation of ``Pr{X < x}``, clamped to [0, 1]."""
    return _scalarize(np.clip(_lr_raw(model, x, upper=False), 0.0, 1.0), x)


def spa_sf(model: CgfModel, x):
    """Lugannani-Rice approximation of ``Pr{X > x}``.

    Uses ``Phi(-v) - phi(v)(1/v - 1/u)`` so that far right tails keep their
    relative accuracy instead of rounding to zero through ``1 - F``.
    """
    return _scalarize(np.clip(_lr_raw(model, x, upper=True), 0.0, 1.0), x)


def spa_pdf(model: CgfModel, x):
    """Saddlepoint density ``exp(K(s) - s x) / sqrt(2 pi K''(s))`` (not renormalised)."""
    if not model.has_continuous_part:
        raise UnsupportedOperationError("saddlepoint density needs a continuous term")
    sol = solve_saddlepoint(model, np.atleast_1d(np.asarray(x, dtype=float)))
    gap = model.tilted_gap(np.atleast_1d(sol.s_star))
    dens = np.exp(-gap) / np.sqrt(2.0 * math.pi * np.atleast_1d(sol.K2))
    return _scalarize(dens, x)


def spa_pmf(model: CgfModel, k):
    """Saddlepoint mass function of a pure lattice model at lattice index ``k``.

    ``k`` counts transmissions, so the mass sits at time ``k * spacing``. The
    smallest index carries the exact all-success probability; values are not
    renormalised here.
    """
    if not model.is_lattice:
        raise UnsupportedOperationError("spa_pmf needs a model made of lattice terms only")
    spacing = model.lattice_spacing
    k_in = k
    k = np.atleast_1d(np.asarray(k))
    base = model.base_count
    out = np.zeros(k.shape, dtype=float)
    base_prob = math.prod((1.0 - t.failure_prob) ** t.packets for t in model.lattice_terms)
    out[k == base] = base_prob
    inner = k > base
    if np.any(inner):
        if all(t.failure_prob == 0.0 for t in model.lattice_terms):
            out[inner] = 0.0
        else:
            x = k[inner].astype(float) * spacing
            sol = solve_saddlepoint(model, x)
            s = np.atleast_1d(sol.s_star)
            gap = model.tilted_gap(s)
            out[inner] = spacing * np.exp(-gap) / np.sqrt(2.0 * math.pi * np.atleast_1d(sol.K2))
    return float(out[0]) if np.ndim(k_in) == 0 else out
