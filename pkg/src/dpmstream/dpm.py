"""Collapsed variational inference for a truncated DP mixture of isotropic Gaussians.

The mixture weights are integrated out, leaving the count-form assignment
prior. Expectations of log count ratios under the factorised ``q(z)`` are
approximated to second order, ``E[log X] ~ log E[X] - Var[X] / (2 E[X]^2)``.
The last truncated component takes the whole remaining stick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .expfam import (
    LOG_2PI,
    ComponentPosterior,
    GammaFactor,
    GaussianMeanFactor,
    gamma_entropy,
    gamma_expected_log_density,
    gaussian_entropy,
    gaussian_expected_log_density,
)

PHI_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters of the truncated DP Gaussian mixture and of the VI loop.

    ``init`` selects the responsibility initialisation: ``"random"``
    (symmetric Dirichlet rows), ``"nearest"`` (one-hot on the nearest
    starting mean), ``"posterior"`` (responsibilities under the starting
    components), ``"kmeans"`` (search over k-means++ clusterings, done by
    the batch fitter) or ``"auto"``: the k-means++ search when all starting
    means coincide, and otherwise the same search with ``"posterior"`` as an
    extra candidate.
    """

    alpha: float = 2.0
    trunc: int = 10
    dim: int = 2
    prior: ComponentPosterior | None = None
    max_iters: int = 100
    tol: float = 1e-4
    init: str = "auto"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.trunc) != self.trunc or self.trunc < 2:
            raise ValueError(f"trunc must be an integer >= 2, got {self.trunc}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {sorted(INIT_METHODS)}, got {self.init!r}")
        if self.prior is None:
            object.__setattr__(self, "prior", ComponentPosterior.standard_prior(self.dim))
        elif self.prior.dim != self.dim:
            raise ValueError(f"prior has dimension {self.prior.dim}, model has {self.dim}")

    def prior_state(self) -> "MixtureState":
        return MixtureState.replicate(self.prior, self.trunc)


@dataclass(frozen=True, eq=False)
class MixtureState:
    """Stacked natural parameters of ``T`` component posteriors.

    ``h`` has shape (T, d); ``s``, ``a`` and ``b`` have shape (T,).
    """

    h: np.ndarray
    s: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float, ndmin=2)
        s, a, b = (np.array(getattr(self, n), dtype=float, ndmin=1) for n in ("s", "a", "b"))
        T = h.shape[0]
        if not (s.shape == a.shape == b.shape == (T,)):
            raise ValueError("inconsistent component counts in mixture state")
        if not np.all(np.isfinite(h)):
            raise ValueError("mixture state has non-finite mean parameters")
        for name, v in (("s", s), ("a", a), ("b", b)):
            if not np.all(np.isfinite(v) & (v > 0)):
                raise ValueError(f"mixture state has non-positive {name}")
        for name, v in (("h", h), ("s", s), ("a", a), ("b", b)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def trunc(self) -> int:
        return self.h.shape[0]

    @property
    def dim(self) -> int:
        return self.h.shape[1]

    @property
    def means(self) -> np.ndarray:
        return self.h / self.s[:, None]

    @property
    def e_tau(self) -> np.ndarray:
        return self.a / self.b

    @property
    def e_log_tau(self) -> np.ndarray:
        return digamma(self.a) - np.log(self.b)

    def component(self, k: int) -> ComponentPosterior:
        return ComponentPosterior(
            GaussianMeanFactor(self.h[k], self.s[k]), GammaFactor(self.a[k], self.b[k])
        )

    @property
    def components(self) -> list[ComponentPosterior]:
        return [self.component(k) for k in range(self.trunc)]

    @classmethod
    def from_components(cls, comps) -> "MixtureState":
        comps = list(comps)
        return cls(
            np.stack([c.mean_factor.h for c in comps]),
            np.array([c.mean_factor.s for c in comps]),
            np.array([c.prec_factor.a for c in comps]),
            np.array([c.prec_factor.b for c in comps]),
        )

    @classmethod
    def replicate(cls, comp: ComponentPosterior, trunc: int) -> "MixtureState":
        return cls.from_components([comp] * trunc)

    def mix(self, prior: "MixtureState", rho) -> "MixtureState":
        """Per-component convex combination ``rho * self + (1 - rho) * prior``.

        ``rho`` is a scalar or a length-T vector in [0, 1].
        """
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (self.trunc,))
        if np.any(~np.isfinite(rho)) or np.any((rho < 0) | (rho > 1)):
            raise ValueError(f"rho must lie in [0, 1], got {rho}")
        if prior.h.shape != self.h.shape:
            raise ValueError("mixture states have different shapes")
        w = 1.0 - rho
        return MixtureState(
            rho[:, None] * self.h + w[:, None] * prior.h,
            rho * self.s + w * prior.s,
            rho * self.a + w * prior.a,
            rho * self.b + w * prior.b,
        )

    def allclose(self, other: "MixtureState", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return all(
            np.allclose(getattr(self, n), getattr(other, n), atol=atol, rtol=rtol)
            for n in ("h", "s", "a", "b")
        )

    def to_json(self) -> list[dict]:
        return [c.to_dict() for c in self.components]

    @classmethod
    def from_json(cls, records) -> "MixtureState":
        return cls.from_components(ComponentPosterior.from_dict(r) for r in records)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MixtureState":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class CountStats:
    """Means and variances of the soft counts ``N_k`` and ``N_{>k}``."""

    e_nk: np.ndarray
    v_nk: np.ndarray
    e_gt: np.ndarray
    v_gt: np.ndarray

    @property
    def e_ge(self) -> np.ndarray:
        return self.e_nk + self.e_gt

    @property
    def v_ge(self) -> np.ndarray:
        # N_{>=0} is the batch size, a constant.
        return np.concatenate([[0.0], self.v_gt[:-1]])


# ---------------------------------------------------------------------------
# Responsibilities
# ---------------------------------------------------------------------------


def check_responsibilities(phi, atol: float = 1e-9) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2:
        raise ValueError(f"responsibilities must be an N x T matrix, got shape {phi.shape}")
    if np.any(phi < 0) or not np.all(np.isfinite(phi)):
        raise ValueError("responsibilities must be finite and non-negative")
    if phi.size and np.max(np.abs(phi.sum(axis=1) - 1.0)) > atol:
        raise ValueError("responsibility rows must sum to one")
    return phi


def normalize_log_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in log space, with tiny entries flushed to zero."""
    z = logits - logits.max(axis=1, keepdims=True)
    phi = np.exp(z)
    phi /= phi.sum(axis=1, keepdims=True)
    return _floor_rows(phi)


def _floor_rows(phi: np.ndarray) -> np.ndarray:
    if np.any(phi < PHI_FLOOR):
        phi = np.where(phi < PHI_FLOOR, 0.0, phi)
        phi /= phi.sum(axis=1, keepdims=True)
    return phi


def save_responsibilities_csv(phi, path) -> None:
    np.savetxt(path, np.asarray(phi), delimiter=",", fmt="%.17g")


def load_responsibilities_csv(path) -> np.ndarray:
    return check_responsibilities(np.loadtxt(path, delimiter=",", ndmin=2))


# ---------------------------------------------------------------------------
# Counts and the assignment prior
# ---------------------------------------------------------------------------


def _tail(phi: np.ndarray) -> np.ndarray:
    """``t[n, k] = sum_{j > k} phi[n, j]``."""
    rev = np.cumsum(phi[:, ::-1], axis=1)[:, ::-1]
    return np.concatenate([rev[:, 1:], np.zeros((phi.shape[0], 1))], axis=1)


def compute_counts(phi) -> CountStats:
    """Soft count moments under independent categorical ``q(z_n)``."""
    phi = check_responsibilities(phi)
    tail = _tail(phi)
    return CountStats(
        e_nk=phi.sum(axis=0),
        v_nk=(phi * (1.0 - phi)).sum(axis=0),
        e_gt=tail.sum(axis=0),
        v_gt=(tail * (1.0 - tail)).sum(axis=0),
    )


def _elog(c, e, v):
    """Second-order approximation of ``E[log(c + N)]`` from the moments of N."""
    x = c + e
    return np.log(x) - v / (2.0 * x * x)


def _assignment_prior_terms(e_nk, v_nk, e_gt, v_gt, v_ge, alpha):
    """Approximate ``E[log p(z = k | others)]`` from (possibly leave-one-out) counts.

    Arrays broadcast over a leading point axis; the component axis is last.
    """
    e_ge = e_nk + e_gt
    own = _elog(1.0, e_nk, v_nk) - _elog(1.0 + alpha, e_ge, v_ge)
    own[..., -1] = 0.0
    stick = _elog(alpha, e_gt, v_gt) - _elog(1.0 + alpha, e_ge, v_ge)
    before = np.cumsum(stick, axis=-1) - stick
    return own + before


def expected_log_assignment_prior(counts_minus_n: CountStats, alpha: float, k: int) -> float:
    """Approximate ``E[log p(z_n = k | z_-n)]`` given counts that exclude point n."""
    T = counts_minus_n.e_nk.shape[0]
    if not 0 <= k < T:
        raise IndexError(f"component index {k} out of range for truncation {T}")
    c = counts_minus_n
    terms = _assignment_prior_terms(
        np.array(c.e_nk, dtype=float), c.v_nk, c.e_gt, c.v_gt, c.v_ge, alpha
    )
    return float(terms[k])


def leave_one_out(counts: CountStats, phi_row) -> CountStats:
    """Remove one point's contribution from the count moments (clamped at zero)."""
    row = np.asarray(phi_row, dtype=float)[None, :]
    tail = _tail(row)[0]
    row = row[0]
    return CountStats(
        e_nk=np.maximum(counts.e_nk - row, 0.0),
        v_nk=np.maximum(counts.v_nk - row * (1 - row), 0.0),
        e_gt=np.maximum(counts.e_gt - tail, 0.0),
        v_gt=np.maximum(counts.v_gt - tail * (1 - tail), 0.0),
    )


def assignment_prior_matrix(phi: np.ndarray, alpha: float, counts: CountStats | None = None) -> np.ndarray:
    """Leave-one-out assignment prior term for every point and component, shape (N, T)."""
    if counts is None:
        counts = compute_counts(phi)
    tail = _tail(phi)
    e_nk = np.maximum(counts.e_nk - phi, 0.0)
    v_nk = np.maximum(counts.v_nk - phi * (1 - phi), 0.0)
    e_gt = np.maximum(counts.e_gt - tail, 0.0)
    tv = tail * (1 - tail)
    v_gt = np.maximum(counts.v_gt - tv, 0.0)
    v_ge = np.concatenate([np.zeros((phi.shape[0], 1)), v_gt[:, :-1]], axis=1)
    return _assignment_prior_terms(e_nk, v_nk, e_gt, v_gt, v_ge, alpha)


def expected_log_pz(counts: CountStats, alpha: float) -> float:
    """Second-order approximation of ``E[log p(z)]`` for the collapsed stick prior.

    ``log p(z) = sum_{k<T-1} [log a + lgamma(1+N_k) + lgamma(a+N_{>k})
    - lgamma(1+a+N_{>=k})]``, each ``E[f(N)]`` taken as
    ``f(E N) + f''(E N) Var N / 2``.
    """
    c = counts

    def elg(x0, e, v):
        x = x0 + e
        return gammaln(x) + 0.5 * polygamma(1, x) * v

    terms = (
        np.log(alpha)
        + elg(1.0, c.e_nk, c.v_nk)
        + elg(alpha, c.e_gt, c.v_gt)
        - elg(1.0 + alpha, c.e_ge, c.v_ge)
    )
    return float(np.sum(terms[:-1]))


# ---------------------------------------------------------------------------
# Likelihood terms
# ---------------------------------------------------------------------------


def _check_data(data, dim: int) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"data must have shape (N, {dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    return x


def _sq_dist(x: np.ndarray, means: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ means.T) + (means * means).sum(axis=1)[None, :]
    return np.maximum(sq, 0.0)


def expected_log_lik_matrix(data, state: MixtureState) -> np.ndarray:
    """``E_q[log N(x_n; mu_k, tau_k^-1 I)]`` for all points and components, shape (N, T)."""
    x = _check_data(data, state.dim)
    d = state.dim
    sq = _sq_dist(x, state.means)
    return 0.5 * d * (state.e_log_tau - LOG_2PI) - 0.5 * state.e_tau * (sq + d / state.s)


def expected_log_lik(x, comp: ComponentPosterior) -> float:
    """Expected Gaussian log density of one point under a component posterior."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != comp.dim:
        raise ValueError(f"point has dimension {x.shape[0]}, component has {comp.dim}")
    mf, pf = comp.mean_factor, comp.prec_factor
    d = comp.dim
    e_tau = pf.a / pf.b
    e_log_tau = digamma(pf.a) - np.log(pf.b)
    sq = float(np.sum((x - mf.mean) ** 2))
    return float(0.5 * d * (e_log_tau - LOG_2PI) - 0.5 * e_tau * (sq + d / mf.s))


# ---------------------------------------------------------------------------
# Coordinate updates
# ---------------------------------------------------------------------------


def update_gaussian_factors(x, phi, prior: MixtureState, state: MixtureState, scale: float = 1.0) -> MixtureState:
    """Optimal mean factors given the current precision factors.

    ``scale`` multiplies the data statistics (stochastic updates that treat the
    batch as a sample of a larger data set).
    """
    nk = scale * phi.sum(axis=0)
    sx = scale * (phi.T @ x)
    e_tau = state.e_tau
    s = prior.s + e_tau * nk
    h = prior.h + e_tau[:, None] * sx
    return MixtureState(h, s, state.a, state.b)


def update_gamma_factors(x, phi, prior: MixtureState, state: MixtureState, scale: float = 1.0) -> MixtureState:
    """Optimal precision factors given the current mean factors."""
    d = state.dim
    nk = scale * phi.sum(axis=0)
    sq = scale * np.einsum("nt,nt->t", phi, _sq_dist(x, state.means))
    a = prior.a + 0.5 * d * nk
    b = prior.b + 0.5 * (sq + d * nk / state.s)
    return MixtureState(state.h, state.s, a, b)


def update_global(data, phi, prior: MixtureState, state: MixtureState) -> MixtureState:
    """One sweep over the global factors: Gaussian factors first, then Gamma factors."""
    x = _check_data(data, state.dim)
    phi = check_responsibilities(phi)
    if phi.shape != (x.shape[0], state.trunc):
        raise ValueError(f"responsibilities have shape {phi.shape}, expected {(x.shape[0], state.trunc)}")
    state = update_gaussian_factors(x, phi, prior, state)
    return update_gamma_factors(x, phi, prior, state)


def update_local(data, state: MixtureState, phi, alpha: float, ell: np.ndarray | None = None) -> np.ndarray:
    """Responsibility update from a frozen snapshot of the current counts.

    ``ell`` may carry a precomputed ``expected_log_lik_matrix(data, state)``.
    """
    phi = check_responsibilities(phi)
    if ell is None:
        ell = expected_log_lik_matrix(data, state)
    return normalize_log_rows(assignment_prior_matrix(phi, alpha) + ell)


def predict_responsibilities(data, state: MixtureState, counts: CountStats, alpha: float) -> np.ndarray:
    """Responsibilities of new points under frozen globals and training counts."""
    T = state.trunc
    c = counts
    prior = _assignment_prior_terms(np.array(c.e_nk, dtype=float), c.v_nk, c.e_gt, c.v_gt, c.v_ge, alpha)
    logits = expected_log_lik_matrix(data, state) + prior[None, :T]
    return normalize_log_rows(logits)


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _entropy_rows(phi: np.ndarray) -> float:
    nz = phi > 0
    return float(-np.sum(phi[nz] * np.log(phi[nz])))


def global_prior_terms(state: MixtureState, prior: MixtureState) -> np.ndarray:
    """``E_q[log prior(theta_k)]`` per component for a normalised factorised prior."""
    g = gaussian_expected_log_density(state.means, state.s, prior.means, prior.s)
    t = gamma_expected_log_density(state.a, state.b, prior.a, prior.b)
    return g + t


def global_entropies(state: MixtureState) -> np.ndarray:
    return gaussian_entropy(state.s, state.dim) + gamma_entropy(state.a, state.b)


def log_trunc_exp_normalizer(nu):
    """``log int_0^1 exp(nu * r) dr``, stable for all real ``nu``."""
    nu = np.asarray(nu, dtype=float)
    out = np.empty_like(nu)
    small = np.abs(nu) < 1e-4
    ns = nu[small]
    out[small] = ns / 2.0 + ns * ns / 24.0
    pos = (~small) & (nu > 0)
    npos = nu[pos]
    out[pos] = npos + np.log(-np.expm1(-npos)) - np.log(npos)
    neg = (~small) & (nu < 0)
    nneg = nu[neg]
    out[neg] = np.log(-np.expm1(nneg)) - np.log(-nneg)
    return out


def rho_kl(omega, e_rho, gamma: float):
    """KL(q(rho | omega) || p(rho | gamma)) for truncated exponentials on [0, 1]."""
    omega = np.asarray(omega, dtype=float)
    return (omega - gamma) * np.asarray(e_rho) - log_trunc_exp_normalizer(omega) + log_trunc_exp_normalizer(
        np.asarray(gamma, dtype=float)
    )


def global_objective_terms(
    state: MixtureState, prev: MixtureState, prior0: MixtureState, e_rho=1.0, omegas=None, gamma=None
) -> float:
    """Objective terms that involve only the global factors and the forgetting weights."""
    e_rho_vec = np.broadcast_to(np.asarray(e_rho, dtype=float), (state.trunc,))
    prior_terms = e_rho_vec * global_prior_terms(state, prev) + (1.0 - e_rho_vec) * global_prior_terms(
        state, prior0
    )
    value = float(np.sum(prior_terms) + np.sum(global_entropies(state)))
    if omegas is not None:
        if gamma is None:
            raise ValueError("gamma is required when omegas are given")
        omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
        e_rho_q = np.atleast_1d(np.asarray(e_rho, dtype=float))
        if e_rho_q.shape != omegas.shape:
            raise ValueError("e_rho and omegas must have the same shape")
        value -= float(np.sum(rho_kl(omegas, e_rho_q, gamma)))
    return value


def local_objective_terms(ell: np.ndarray, phi: np.ndarray, alpha: float, counts: CountStats | None = None) -> float:
    """Expected data log-likelihood, ``E[log p(z)]`` and assignment entropies.

    ``ell`` is the expected log-likelihood matrix of the current globals.
    """
    if counts is None:
        counts = compute_counts(phi)
    return float(np.sum(phi * ell)) + expected_log_pz(counts, alpha) + _entropy_rows(phi)


def surrogate_elbo(
    data,
    state: MixtureState,
    phi,
    prev: MixtureState,
    prior0: MixtureState,
    alpha: float,
    e_rho=1.0,
    omegas=None,
    gamma: float | None = None,
    counts: CountStats | None = None,
) -> float:
    """Collapsed ELBO with the power-prior surrogate for the global prior terms.

    The prior over each component is replaced by the ``e_rho``-weighted sum of
    the expected log densities under the previous posterior ``prev`` and the
    base prior ``prior0``. ``e_rho`` is a scalar or per-component vector.
    When ``omegas`` is given, the KL between ``q(rho)`` and its
    truncated-exponential prior with natural parameter ``gamma`` is
    subtracted. With ``e_rho = 1`` and ``prev`` equal to the base prior this
    is the plain collapsed ELBO.
    """
    x = _check_data(data, state.dim)
    phi = check_responsibilities(phi)
    ell = expected_log_lik_matrix(x, state)
    return local_objective_terms(ell, phi, alpha, counts) + global_objective_terms(
        state, prev, prior0, e_rho, omegas, gamma
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def expected_mixture_weights(counts: CountStats, alpha: float) -> tuple[np.ndarray, float]:
    """Stick weights from posterior Beta means; returns ``(weights, leftover_mass)``.

    ``weights`` is renormalised over the truncated components.
    """
    e_beta = (1.0 + counts.e_nk) / (1.0 + alpha + counts.e_nk + counts.e_gt)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - e_beta)[:-1]])
    raw = e_beta * remaining
    leftover = float(1.0 - raw.sum())
    return raw / raw.sum(), leftover


def predictive_log_lik(test, state: MixtureState, weights) -> float:
    """Mean per-point log density of the plug-in mixture ``sum_k w_k N(m_k, (a_k/b_k)^-1 I)``."""
    x = _check_data(test, state.dim)
    if x.shape[0] == 0:
        raise ValueError("empty test set")
    w = np.asarray(weights, dtype=float)
    if w.shape != (state.trunc,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector over the components")
    d = state.dim
    tau = state.e_tau
    sq = _sq_dist(x, state.means)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    comp = logw + 0.5 * d * (np.log(tau) - LOG_2PI) - 0.5 * tau * sq
    mx = comp.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(comp - mx).sum(axis=1))
    return float(lse.mean())


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def init_random(n: int, trunc: int, rng: np.random.Generator) -> np.ndarray:
    return _floor_rows(rng.dirichlet(np.ones(trunc), size=n))


def init_nearest(data, state: MixtureState) -> np.ndarray:
    """One-hot responsibilities on the nearest component mean (ties to the lowest index)."""
    x = _check_data(data, state.dim)
    idx = np.argmin(_sq_dist(x, state.means), axis=1)
    phi = np.zeros((x.shape[0], state.trunc))
    phi[np.arange(x.shape[0]), idx] = 1.0
    return phi


def init_posterior(data, state: MixtureState) -> np.ndarray:
    """Responsibilities proportional to each component's expected likelihood."""
    return normalize_log_rows(expected_log_lik_matrix(data, state))


INIT_METHODS = {"auto", "random", "nearest", "posterior", "kmeans"}


def initialize_responsibilities(data, state: MixtureState, method: str, rng: np.random.Generator) -> np.ndarray:
    x = _check_data(data, state.dim)
    if method in ("auto", "kmeans"):
        # Without a clustering search, a cold start falls back to random rows.
        means = state.means
        method = "random" if np.allclose(means, means[0], atol=1e-12, rtol=0) else "posterior"
    if method == "random":
        return init_random(x.shape[0], state.trunc, rng)
    if method == "nearest":
        return init_nearest(x, state)
    if method == "posterior":
        return init_posterior(x, state)
    raise ValueError(f"unknown initialisation {method!r}")
