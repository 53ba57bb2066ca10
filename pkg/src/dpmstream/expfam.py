"""Conjugate factors for an isotropic Gaussian mixture component.

Each component carries two independent variational factors:

* a Gaussian over the mean, ``N(mu; m, s^-1 I)``, stored through its
  natural parameters ``h = s * m`` and ``s``;
* a Gamma over the isotropic precision, ``Gamma(tau; a, b)`` (shape/rate).

Both parameterisations are affine in the natural parameters, so convex
combinations of ``(h, s)`` and ``(a, b)`` are convex combinations of the
natural parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMeanFactor:
    """Gaussian factor ``N(m, s^-1 I)`` over a component mean.

    Parameters
    ----------
    h : array of shape (d,)
        Precision-times-mean, ``s * m``.
    s : float
        Isotropic precision of the factor.
    """

    h: np.ndarray
    s: float

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if h.ndim != 1:
            raise ValueError(f"h must be a vector, got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("h must be finite")
        if not (np.isfinite(self.s) and self.s > 0):
            raise ValueError(f"s must be positive, got {self.s}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", float(self.s))

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.h / self.s

    @classmethod
    def from_mean(cls, m, s) -> "GaussianMeanFactor":
        return cls(np.asarray(m, dtype=float) * s, s)


@dataclass(frozen=True)
class GammaFactor:
    """Gamma factor over a precision, shape ``a`` and rate ``b``."""

    a: float
    b: float

    def __post_init__(self):
        for name in ("a", "b"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, float(v))


@dataclass(frozen=True)
class ComponentPosterior:
    """Factorised variational posterior ``q(mu) q(tau)`` of one component."""

    mean_factor: GaussianMeanFactor
    prec_factor: GammaFactor

    @property
    def dim(self) -> int:
        return self.mean_factor.dim

    @classmethod
    def standard_prior(cls, dim: int) -> "ComponentPosterior":
        """``N(mu; 0, I)`` and ``Gamma(tau; 1, 1)``."""
        return cls(GaussianMeanFactor(np.zeros(dim), 1.0), GammaFactor(1.0, 1.0))

    def to_dict(self) -> dict:
        return {
            "h": [float(v) for v in self.mean_factor.h],
            "s": self.mean_factor.s,
            "a": self.prec_factor.a,
            "b": self.prec_factor.b,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComponentPosterior":
        try:
            return cls(GaussianMeanFactor(d["h"], d["s"]), GammaFactor(d["a"], d["b"]))
        except KeyError as exc:
            raise ValueError(f"component record is missing field {exc.args[0]!r}") from None


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(rho)) or np.any(rho < 0.0) or np.any(rho > 1.0):
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    return rho


def mix_natural(prev: ComponentPosterior, prior: ComponentPosterior, rho: float) -> ComponentPosterior:
    """Power-prior combination ``rho * prev + (1 - rho) * prior`` of natural parameters."""
    rho = float(_check_rho(rho))
    if prev.dim != prior.dim:
        raise ValueError(f"dimension mismatch: {prev.dim} vs {prior.dim}")
    if rho == 1.0:
        return prev
    if rho == 0.0:
        return prior
    w = 1.0 - rho
    pm, qm = prev.mean_factor, prior.mean_factor
    pg, qg = prev.prec_factor, prior.prec_factor
    return ComponentPosterior(
        GaussianMeanFactor(rho * pm.h + w * qm.h, rho * pm.s + w * qm.s),
        GammaFactor(rho * pg.a + w * qg.a, rho * pg.b + w * qg.b),
    )


# ---------------------------------------------------------------------------
# Array-level kernels. All broadcast over leading axes; Gaussian ``h``/``m``
# arrays carry the dimension on the last axis.
# ---------------------------------------------------------------------------


def kl_gaussian_arrays(m1, s1, m2, s2):
    """KL(N(m1, s1^-1 I) || N(m2, s2^-1 I)), vectorised."""
    m1, m2 = np.asarray(m1, dtype=float), np.asarray(m2, dtype=float)
    s1, s2 = np.asarray(s1, dtype=float), np.asarray(s2, dtype=float)
    d = m1.shape[-1]
    sq = np.sum((m1 - m2) ** 2, axis=-1)
    ratio = s2 / s1
    return 0.5 * (d * ratio + s2 * sq - d - d * np.log(ratio))


def kl_gamma_arrays(a1, b1, a2, b2):
    """KL(Gamma(a1, b1) || Gamma(a2, b2)) with rate parameterisation."""
    a1, b1, a2, b2 = (np.asarray(v, dtype=float) for v in (a1, b1, a2, b2))
    return (
        (a1 - a2) * digamma(a1)
        - gammaln(a1)
        + gammaln(a2)
        + a2 * (np.log(b1) - np.log(b2))
        + a1 * (b2 - b1) / b1
    )


def gaussian_expected_log_density(m, s, m0, s0):
    """E_{N(m, s^-1 I)}[log N(mu; m0, s0^-1 I)]."""
    m, m0 = np.asarray(m, dtype=float), np.asarray(m0, dtype=float)
    s, s0 = np.asarray(s, dtype=float), np.asarray(s0, dtype=float)
    d = m.shape[-1]
    sq = np.sum((m - m0) ** 2, axis=-1)
    return 0.5 * d * (np.log(s0) - LOG_2PI) - 0.5 * s0 * (sq + d / s)


def gamma_expected_log_density(a, b, a0, b0):
    """E_{Gamma(a, b)}[log Gamma(tau; a0, b0)]."""
    a, b, a0, b0 = (np.asarray(v, dtype=float) for v in (a, b, a0, b0))
    e_tau = a / b
    e_log_tau = digamma(a) - np.log(b)
    return a0 * np.log(b0) - gammaln(a0) + (a0 - 1.0) * e_log_tau - b0 * e_tau


def gaussian_entropy(s, d):
    s = np.asarray(s, dtype=float)
    return 0.5 * d * (1.0 + LOG_2PI - np.log(s))


def gamma_entropy(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)


# ---------------------------------------------------------------------------
# Factor-level API
# ---------------------------------------------------------------------------


def kl_gaussian_mean(q1: GaussianMeanFactor, q2: GaussianMeanFactor) -> float:
    if q1.dim != q2.dim:
        raise ValueError(f"dimension mismatch: {q1.dim} vs {q2.dim}")
    return max(float(kl_gaussian_arrays(q1.mean, q1.s, q2.mean, q2.s)), 0.0)


def kl_gamma(q1: GammaFactor, q2: GammaFactor) -> float:
    return max(float(kl_gamma_arrays(q1.a, q1.b, q2.a, q2.b)), 0.0)


def kl_component(q1: ComponentPosterior, q2: ComponentPosterior) -> float:
    """KL between factorised component posteriors (sum over the two factors)."""
    return kl_gaussian_mean(q1.mean_factor, q2.mean_factor) + kl_gamma(q1.prec_factor, q2.prec_factor)


def gamma_moments(g: GammaFactor) -> tuple[float, float]:
    """Return ``(E[tau], E[log tau])``."""
    return g.a / g.b, float(digamma(g.a) - np.log(g.b))
