"""Elementary latency terms and the cumulant generating function of their sum.

Three kinds of independent terms are supported:

* :class:`GammaTerm` -- computation, compression and decompression times.
* :class:`LatticeTerm` -- transmission time of ``packets`` packets over a link
  whose packets fail independently with probability ``failure_prob``; the
  number of transmissions is negative binomial and each one takes ``spacing``
  seconds.
* :class:`GaussianTerm` -- a normal stand-in for a large lattice sum.

:class:`CgfModel` adds up their CGFs (plus a deterministic shift) and returns
the CGF together with its first three derivatives, vectorised over ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import special, stats


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class NonConvergenceError(RuntimeError):
    """Raised when an iterative solver cannot bracket or reach its target."""


class UnsupportedOperationError(TypeError):
    """Raised when an operation does not apply to the given model."""


@dataclass(frozen=True)
class GammaTerm:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise DomainError(f"gamma shape must be positive, got {self.shape}")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DomainError(f"gamma rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2

    @property
    def third_cumulant(self) -> float:
        return 2.0 * self.shape / self.rate**3


@dataclass(frozen=True)
class LatticeTerm:
    packets: int
    failure_prob: float
    spacing: float

    def __post_init__(self):
        if int(self.packets) != self.packets or self.packets < 1:
            raise DomainError(f"packets must be a positive integer, got {self.packets}")
        if not 0.0 <= self.failure_prob < 1.0:
            raise DomainError(f"failure_prob must lie in [0, 1), got {self.failure_prob}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise DomainError(f"spacing must be positive, got {self.spacing}")

    @property
    def mean(self) -> float:
        return self.spacing * self.packets / (1.0 - self.failure_prob)

    @property
    def variance(self) -> float:
        e = self.failure_prob
        return self.spacing**2 * e * self.packets / (1.0 - e) ** 2

    @property
    def third_cumulant(self) -> float:
        e = self.failure_prob
        return self.spacing**3 * self.packets * e * (1.0 + e) / (1.0 - e) ** 3


@dataclass(frozen=True)
class GaussianTerm:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance >= 0:
            raise DomainError(f"variance must be nonnegative, got {self.variance}")

    @property
    def third_cumulant(self) -> float:
        return 0.0


Term = Union[GammaTerm, LatticeTerm, GaussianTerm]


@dataclass(frozen=True)
class CgfValues:
    """CGF and derivatives at one or more points ``s``."""

    K: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    K3: np.ndarray


@dataclass(frozen=True)
class CgfModel:
    """Sum of independent gamma, lattice and Gaussian terms plus a shift."""

    gamma_terms: tuple = ()
    lattice_terms: tuple = ()
    gaussian_terms: tuple = ()
    shift: float = 0.0
    _arrays: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma_terms", tuple(self.gamma_terms))
        object.__setattr__(self, "lattice_terms", tuple(self.lattice_terms))
        object.__setattr__(self, "gaussian_terms", tuple(self.gaussian_terms))
        if not (self.gamma_terms or self.lattice_terms or self.gaussian_terms):
            raise DomainError("a CGF model needs at least one term")
        arrays = {
            "ga": np.array([t.shape for t in self.gamma_terms], dtype=float),
            "gb": np.array([t.rate for t in self.gamma_terms], dtype=float),
            "ln": np.array([t.packets for t in self.lattice_terms], dtype=float),
            "le": np.array([t.failure_prob for t in self.lattice_terms], dtype=float),
            "ld": np.array([t.spacing for t in self.lattice_terms], dtype=float),
            "nm": sum(t.mean for t in self.gaussian_terms),
            "nv": sum(t.variance for t in self.gaussian_terms),
        }
        object.__setattr__(self, "_arrays", arrays)
        if not self.s_max > 0:
            raise DomainError("CGF domain upper bound must be positive")

    @classmethod
    def from_terms(cls, terms: Sequence[Term], shift: float = 0.0) -> "CgfModel":
        return cls(
            gamma_terms=[t for t in terms if isinstance(t, GammaTerm)],
            lattice_terms=[t for t in terms if isinstance(t, LatticeTerm)],
            gaussian_terms=[t for t in terms if isinstance(t, GaussianTerm)],
            shift=shift,
        )

    # -- structure -------------------------------------------------------

    @property
    def s_max(self) -> float:
        """Supremum of the domain on which the CGF is finite."""
        bounds = [t.rate for t in self.gamma_terms]
        bounds += [
            -math.log(t.failure_prob) / t.spacing
            for t in self.lattice_terms
            if t.failure_prob > 0
        ]
        return min(bounds) if bounds else math.inf

    @property
    def is_lattice(self) -> bool:
        return bool(self.lattice_terms) and not self.gamma_terms and not self.gaussian_terms

    @property
    def has_continuous_part(self) -> bool:
        return bool(self.gamma_terms) or any(t.variance > 0 for t in self.gaussian_terms)

    @property
    def support_infimum(self) -> float:
        if any(t.variance > 0 for t in self.gaussian_terms):
            return -math.inf
        lo = self.shift + sum(t.mean for t in self.gaussian_terms)
        return lo + sum(t.packets * t.spacing for t in self.lattice_terms)

    @property
    def lattice_spacing(self) -> float:
        """Common spacing of the lattice terms; raises if they disagree."""
        if not self.lattice_terms:
            raise UnsupportedOperationError("model has no lattice terms")
        d = self.lattice_terms[0].spacing
        for t in self.lattice_terms[1:]:
            if not math.isclose(t.spacing, d, rel_tol=1e-12):
                raise DomainError(f"lattice spacings differ: {d} vs {t.spacing}")
        return d

    @property
    def base_count(self) -> int:
        """Smallest attainable lattice index (total packet count)."""
        return int(sum(t.packets for t in self.lattice_terms))

    # -- cumulants at zero ------------------------------------------------

    @property
    def mean(self) -> float:
        return self.shift + sum(t.mean for t in self._all_terms())

    @property
    def variance(self) -> float:
        return sum(t.variance for t in self._all_terms())

    @property
    def third_cumulant(self) -> float:
        return sum(t.third_cumulant for t in self._all_terms())

    def _all_terms(self):
        return (*self.gamma_terms, *self.lattice_terms, *self.gaussian_terms)

    # -- evaluation --------------------------------------------------------

    def check_domain(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(~np.isfinite(s)) or np.any(s >= self.s_max):
            raise DomainError(f"s must be finite and below s_max={self.s_max:.6g}")
        return s

    def cgf(self, s) -> CgfValues:
        """Return K(s), K'(s), K''(s), K'''(s); ``s`` may be an array."""
        s = self.check_domain(s)
        return self._cgf_unchecked(s)

    def _cgf_unchecked(self, s: np.ndarray) -> CgfValues:
        a = self._arrays
        s_col = s[..., None]
        K = self.shift * s + a["nm"] * s + 0.5 * a["nv"] * s * s
        K1 = self.shift + a["nm"] + a["nv"] * s
        K2 = np.full_like(s, a["nv"])
        K3 = np.zeros_like(s)
        if a["ga"].size:
            ga, gb = a["ga"], a["gb"]
            d = gb - s_col
            K = K - (ga * np.log1p(-s_col / gb)).sum(-1)
            K1 = K1 + (ga / d).sum(-1)
            K2 = K2 + (ga / d**2).sum(-1)
            K3 = K3 + (2.0 * ga / d**3).sum(-1)
        if a["ln"].size:
            n, e, dl = a["ln"], a["le"], a["ld"]
            u = dl * s_col
            q = e * np.exp(u)
            one_m_q = 1.0 - q
            # N (u + ln(1-e) - ln(1-q)); the log ratio is computed stably
            log_ratio = np.log1p(-e * np.expm1(u) / (1.0 - e))
            K = K + (n * (u - log_ratio)).sum(-1)
            K1 = K1 + (dl * n / one_m_q).sum(-1)
            K2 = K2 + (dl**2 * n * q / one_m_q**2).sum(-1)
            K3 = K3 + (dl**3 * n * q * (1.0 + q) / one_m_q**3).sum(-1)
        return CgfValues(K, K1, K2, K3)

    def tilted_gap(self, s) -> np.ndarray:
        """Return s K'(s) - K(s) without the cancellation of the direct form.

        Near ``s = 0`` both products are of order ``s`` while their difference
        is of order ``s**2``; the identity ``sK'(s) - K(s) = s^2 * int_0^1 t
        K''(ts) dt`` is evaluated by Gauss-Legendre quadrature there.
        """
        s = self.check_domain(s)
        vals = self._cgf_unchecked(s)
        direct = s * vals.K1 - vals.K
        near_zero = np.abs(direct) < 1e-2 * np.abs(s * vals.K1)
        if np.any(near_zero):
            nodes, weights = _GL_NODES, _GL_WEIGHTS
            sz = s[near_zero]
            pts = sz[:, None] * nodes[None, :]
            k2 = self._cgf_unchecked(pts).K2
            quad = sz**2 * (k2 * nodes * weights).sum(-1)
            direct = np.array(direct, dtype=float, copy=True)
            direct[near_zero] = quad
        return direct


_gl_x, _gl_w = np.polynomial.legendre.leggauss(16)
_GL_NODES = 0.5 * (_gl_x + 1.0)
_GL_WEIGHTS = 0.5 * _gl_w


def cgf_eval(model: CgfModel, s):
    """Return ``(K, K', K'', K''')`` of ``model`` at ``s``."""
    v = model.cgf(s)
    if np.ndim(s) == 0:
        return float(v.K), float(v.K1), float(v.K2), float(v.K3)
    return v.K, v.K1, v.K2, v.K3


# -- exact laws -------------------------------------------------------------


def exact_gamma_cdf(shape: float, rate: float, x):
    """Regularized lower incomplete gamma ``P(shape, rate*x)``, zero for x <= 0."""
    GammaTerm(shape, rate)
    x = np.asarray(x, dtype=float)
    out = special.gammainc(shape, rate * np.maximum(x, 0.0))
    out = np.where(x > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def exact_gamma_sf(shape: float, rate: float, x):
    """Complement of :func:`exact_gamma_cdf` computed without cancellation."""
    GammaTerm(shape, rate)
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, special.gammaincc(shape, rate * np.maximum(x, 0.0)), 1.0)
    return float(out) if out.ndim == 0 else out


def exact_negbin_pmf(term: LatticeTerm, k):
    """Probability that ``term.packets`` successes need exactly ``k`` transmissions.

    Evaluated in log space so that ``k`` in the thousands does not overflow.
    """
    k = np.asarray(k)
    n, e = term.packets, term.failure_prob
    kk = np.maximum(k, n).astype(float)
    failures = kk - n
    if e == 0.0:
        out = np.where(k == n, 1.0, 0.0)
    else:
        log_p = (
            special.gammaln(kk) - special.gammaln(n) - special.gammaln(failures + 1.0)
            + n * math.log1p(-e) + failures * math.log(e)
        )
        out = np.where(k >= n, np.exp(log_p), 0.0)
    return float(out) if out.ndim == 0 else out


def negbin_support(term: LatticeTerm, tail: float = 1e-12) -> np.ndarray:
    """Counts ``packets..k_hi`` with the mass beyond ``k_hi`` below ``tail``."""
    if term.failure_prob == 0.0:
        return np.array([term.packets])
    # failures ~ nbinom(n, 1-e); isf gives the last count that still matters
    k_hi = term.packets + int(stats.nbinom.isf(tail, term.packets, 1.0 - term.failure_prob)) + 1
    return np.arange(term.packets, k_hi + 1)


# -- samplers ----------------------------------------------------------------


def sample_term(term, rng: np.random.Generator, size=None):
    """Draw latency samples (seconds) from a gamma or lattice term."""
    if isinstance(term, GammaTerm):
        return rng.gamma(term.shape, 1.0 / term.rate, size)
    if isinstance(term, LatticeTerm):
        if term.failure_prob == 0.0:
            count = np.full(() if size is None else size, term.packets, dtype=np.int64)
        else:
            count = term.packets + rng.negative_binomial(term.packets, 1.0 - term.failure_prob, size)
        out = term.spacing * count
        return float(out) if size is None else out
    raise UnsupportedOperationError(f"cannot sample {type(term).__name__}")
