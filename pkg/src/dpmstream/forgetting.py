"""Streaming inference with exponential forgetting, plus baselines.

Algorithms:

``SVB``        previous posterior used as the prior (no forgetting).
``PP``         fixed forgetting weight ``rho`` between previous posterior and base prior.
``HPP``        one learned forgetting weight with a truncated-exponential posterior.
``MHPP``       one learned forgetting weight per mixture component.
``SVI``        stochastic natural-gradient steps, each batch treated as the full data set.
``Privileged`` SVB that resets to the base prior at known drift times.
``BatchVI``    each batch fitted from the base prior alone.
"""

from __future__ import annotations

import itertools
import logging
import re
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import linear_sum_assignment

from .dpm import (
    CountStats,
    MixtureState,
    ModelConfig,
    compute_counts,
    expected_log_lik_matrix,
    global_objective_terms,
    initialize_responsibilities,
    local_objective_terms,
    update_gamma_factors,
    update_gaussian_factors,
    update_global,
    update_local,
)
from .expfam import kl_gamma_arrays, kl_gaussian_arrays

logger = logging.getLogger(__name__)

KINDS = ("SVB", "PP", "HPP", "MHPP", "SVI", "Privileged", "BatchVI")
OMEGA_CLIP = 100.0
RHO_CLIP = 1e-6
LINE_SEARCH_STEPS = 30
COLD_START_PROBE = 15
DEFAULT_GAMMA = 0.1


class StreamFitError(RuntimeError):
    """A batch of a stream could not be fitted."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"batch {index}: {cause}")
        self.index = index


@dataclass(frozen=True)
class AlgorithmSpec:
    """One streaming algorithm and its parameters.

    Only the parameters relevant to ``kind`` are used: ``rho`` for PP,
    ``gamma`` for HPP/MHPP, and ``svi_exponent``, ``svi_delay`` and
    ``dataset_size`` for SVI (``None`` means the batch size).
    """

    kind: str
    rho: float | None = None
    gamma: float = DEFAULT_GAMMA
    svi_exponent: float = 0.55
    svi_delay: float = 1.0
    dataset_size: int | None = None

    def __post_init__(self):
        kind = _canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "PP":
            if self.rho is None or not 0.0 <= self.rho <= 1.0:
                raise ValueError(f"PP needs rho in [0, 1], got {self.rho}")
        if kind == "SVI":
            if not 0.5 < self.svi_exponent <= 1.0:
                raise ValueError(f"SVI exponent must lie in (0.5, 1], got {self.svi_exponent}")
            if self.svi_delay < 0:
                raise ValueError(f"SVI delay must be non-negative, got {self.svi_delay}")
            if self.dataset_size is not None and self.dataset_size < 1:
                raise ValueError("SVI dataset_size must be positive")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")

    @property
    def label(self) -> str:
        if self.kind == "PP":
            return f"PP({self.rho:g})"
        if self.kind in ("HPP", "MHPP") and self.gamma != DEFAULT_GAMMA:
            return f"{self.kind}({self.gamma:g})"
        return self.kind

    @property
    def fixed_rho(self) -> float | None:
        """Forgetting weight for the fixed-weight algorithms, else ``None``."""
        if self.kind == "PP":
            return float(self.rho)
        if self.kind in ("SVB", "Privileged"):
            return 1.0
        if self.kind in ("BatchVI", "SVI"):
            return 0.0
        return None

    @classmethod
    def parse(cls, value) -> "AlgorithmSpec":
        """Build from ``"PP(0.9)"``-style strings or ``{"kind": ..., ...}`` mappings."""
        if isinstance(value, AlgorithmSpec):
            return value
        if isinstance(value, dict):
            return cls(**value)
        m = re.fullmatch(r"\s*([A-Za-z]+)\s*(?:\(\s*([^)]*)\s*\))?\s*", str(value))
        if not m:
            raise ValueError(f"cannot parse algorithm {value!r}")
        kind = _canonical_kind(m.group(1))
        arg = m.group(2)
        if not arg:
            return cls(kind)
        if kind == "PP":
            return cls(kind, rho=float(arg))
        if kind in ("HPP", "MHPP"):
            return cls(kind, gamma=float(arg))
        raise ValueError(f"algorithm {kind} takes no shorthand argument")


def _canonical_kind(kind: str) -> str:
    for k in KINDS:
        if k.lower() == str(kind).lower():
            return k
    raise ValueError(f"unknown algorithm kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class ForgettingState:
    """Forgetting weights after fitting one batch.

    ``omegas`` holds the truncated-exponential natural parameters (one for
    HPP, T for MHPP, ``None`` otherwise) and ``e_rho`` the matching
    posterior means, or the fixed weight for PP-type algorithms.
    """

    e_rho: np.ndarray
    omegas: np.ndarray | None = None
    gamma: float | None = None
    fixed_rho: float | None = None

    @property
    def e_rho_mean(self) -> float:
        return float(np.mean(self.e_rho))


# ---------------------------------------------------------------------------
# Forgetting-weight posteriors
# ---------------------------------------------------------------------------


def expected_rho(omega):
    """Mean of the truncated exponential on [0, 1] with natural parameter ``omega``."""
    w = np.asarray(omega, dtype=float)
    out = np.empty_like(w)
    small = np.abs(w) < 1e-4
    ws = w[small]
    out[small] = 0.5 + ws / 12.0 - ws**3 / 720.0
    a = np.abs(w[~small])
    # mean for -|omega|; the positive side follows from E(omega) + E(-omega) = 1
    with np.errstate(over="ignore"):
        lower = 1.0 / a - 1.0 / np.expm1(a)
    out[~small] = np.where(w[~small] > 0, 1.0 - lower, lower)
    return out if out.ndim else float(out)


def _component_kls(state: MixtureState, other: MixtureState) -> np.ndarray:
    return kl_gaussian_arrays(state.means, state.s, other.means, other.s) + kl_gamma_arrays(
        state.a, state.b, other.a, other.b
    )


def _check_same_shape(*states: MixtureState) -> None:
    shape = states[0].h.shape
    for st in states[1:]:
        if st.h.shape != shape:
            raise ValueError(f"mixture states differ in shape: {shape} vs {st.h.shape}")


def omega_terms(state: MixtureState, prev: MixtureState, prior0: MixtureState) -> np.ndarray:
    """Per-component ``KL(q || base prior) - KL(q || previous posterior)``."""
    _check_same_shape(state, prev, prior0)
    return _component_kls(state, prior0) - _component_kls(state, prev)


def update_omega_hpp(state: MixtureState, prev: MixtureState, prior0: MixtureState, gamma: float) -> float:
    return float(np.sum(omega_terms(state, prev, prior0)) + gamma)


def update_omega_mhpp(state: MixtureState, prev: MixtureState, prior0: MixtureState, gamma: float, k: int) -> float:
    if not 0 <= k < state.trunc:
        raise IndexError(f"component index {k} out of range for truncation {state.trunc}")
    return float(omega_terms(state, prev, prior0)[k] + gamma)


def _rho_from_omega(omega):
    omega = np.clip(omega, -OMEGA_CLIP, OMEGA_CLIP)
    return omega, np.clip(expected_rho(omega), RHO_CLIP, 1.0 - RHO_CLIP)


def svi_step(prev: MixtureState, batch_optimum: MixtureState, t: int, spec: AlgorithmSpec) -> MixtureState:
    """Robbins-Monro step ``(1 - r_t) prev + r_t batch_optimum`` with ``r_t = (t + delay)^-exponent``."""
    if t < 1:
        raise ValueError(f"SVI step index must be >= 1, got {t}")
    r = svi_rate(t, spec.svi_exponent, spec.svi_delay)
    return batch_optimum.mix(prev, r)


def svi_rate(t: int, exponent: float = 0.55, delay: float = 1.0) -> float:
    return min(1.0, float((t + delay) ** (-exponent)))


# ---------------------------------------------------------------------------
# Batch fitting
# ---------------------------------------------------------------------------


@dataclass
class BatchFit:
    state: MixtureState
    phi: np.ndarray
    forgetting: ForgettingState
    elbo_trace: list[float]
    counts: CountStats
    n_iter: int
    converged: bool
    svi_steps: int = 0


def _batch_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(t)])


def _kmeans_candidates(x: np.ndarray, trunc: int, rng: np.random.Generator, anchors: np.ndarray | None = None):
    """Hard responsibilities from k-means++ clusterings with 1..T centres.

    Without ``anchors`` clusters are ordered by decreasing size so that
    larger clusters sit on earlier sticks. With ``anchors`` (the incoming
    component means) each cluster goes to the component whose mean is
    nearest under a one-to-one assignment.
    """
    n = x.shape[0]
    for k in range(1, min(trunc, n) + 1):
        if k == 1:
            labels = np.zeros(n, dtype=int)
            centres = x.mean(axis=0, keepdims=True)
        else:
            # an empty cluster just leaves its component unused for this candidate
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                centres, labels = kmeans2(x, k, minit="++", iter=10, seed=rng)
        if anchors is None:
            sizes = np.bincount(labels, minlength=k)
            order = np.argsort(-sizes, kind="stable")
            slot = np.empty(k, dtype=int)
            slot[order] = np.arange(k)
        else:
            cost = ((centres[:, None, :] - anchors[None, :, :]) ** 2).sum(-1)
            rows, cols = linear_sum_assignment(cost)
            slot = np.empty(k, dtype=int)
            slot[rows] = cols
        phi = np.zeros((n, trunc))
        phi[np.arange(n), slot[labels]] = 1.0
        yield phi


class _BatchSolver:
    """Coordinate ascent on one batch for one algorithm."""

    def __init__(self, algorithm: AlgorithmSpec, x: np.ndarray, prev: MixtureState, config: ModelConfig, svi_steps: int):
        self.spec = algorithm
        self.kind = algorithm.kind
        self.x = x
        self.prev = prev
        self.config = config
        self.prior0 = config.prior_state()
        self.gamma = algorithm.gamma if self.kind in ("HPP", "MHPP") else None
        self.svi_steps = svi_steps
        if self.kind == "SVI" and algorithm.dataset_size is not None:
            self.scale = algorithm.dataset_size / x.shape[0]
        else:
            self.scale = 1.0

    def initial_rho(self):
        T = self.config.trunc
        if self.kind == "HPP":
            return _rho_from_omega(np.zeros(1))
        if self.kind == "MHPP":
            return _rho_from_omega(np.zeros(T))
        return None, np.full(1, self.spec.fixed_rho)

    def initial_state(self, e_rho) -> MixtureState:
        if self.kind == "SVI":
            return self.prev
        return self.prev.mix(self.prior0, self._rho_vec(e_rho))

    def _rho_vec(self, e_rho):
        return np.broadcast_to(e_rho, (self.config.trunc,))

    def objective(self, state, phi, e_rho, omegas, ell=None) -> float:
        if ell is None:
            ell = expected_log_lik_matrix(self.x, state)
        return local_objective_terms(ell, phi, self.config.alpha) + self._global_terms(state, e_rho, omegas)

    def _global_terms(self, state, e_rho, omegas) -> float:
        return global_objective_terms(
            state, self.prev, self.prior0,
            e_rho=e_rho if omegas is not None else self._rho_vec(e_rho),
            omegas=omegas, gamma=self.gamma,
        )

    def iterate(self, state, phi, e_rho, omegas):
        """One outer iteration: globals (and per-component weights), locals, then the shared weight."""
        x, prev, prior0 = self.x, self.prev, self.prior0
        alpha = self.config.alpha
        if self.kind == "SVI":
            self.svi_steps += 1
            target = update_gaussian_factors(x, phi, prior0, state, self.scale)
            state = svi_step(state, target, self.svi_steps, self.spec)
            target = update_gamma_factors(x, phi, prior0, state, self.scale)
            state = svi_step(state, target, self.svi_steps, self.spec)
        else:
            state = update_global(x, phi, prev.mix(prior0, self._rho_vec(e_rho)), state)
            if self.kind == "MHPP":
                omegas, e_rho = _rho_from_omega(omega_terms(state, prev, prior0) + self.gamma)

        ell = expected_log_lik_matrix(x, state)
        fixed = self._global_terms(state, e_rho, omegas)
        current = local_objective_terms(ell, phi, alpha) + fixed
        phi, current = _ascend_local(
            x, state, phi, alpha, lambda ph: local_objective_terms(ell, ph, alpha) + fixed, current, ell
        )

        if self.kind == "HPP":
            omegas, e_rho = _rho_from_omega(np.atleast_1d(update_omega_hpp(state, prev, prior0, self.gamma)))
            current = self.objective(state, phi, e_rho, omegas, ell)
        return state, phi, e_rho, omegas, current

    def run(self, state, phi, e_rho, omegas, trace, n_iters):
        converged = False
        done = 0
        for _ in range(n_iters):
            done += 1
            state, phi, e_rho, omegas, value = self.iterate(state, phi, e_rho, omegas)
            trace.append(value)
            if abs(value - trace[-2]) <= self.config.tol * abs(trace[-2]):
                converged = True
                break
        return state, phi, e_rho, omegas, done, converged


def _ascend_local(x, state, phi, alpha, objective, current: float, ell=None):
    """Local update, backtracked towards the old responsibilities if it lowers the objective."""
    proposal = update_local(x, state, phi, alpha, ell)
    value = objective(proposal)
    if value >= current:
        return proposal, value
    step = 1.0
    for _ in range(LINE_SEARCH_STEPS):
        step *= 0.5
        candidate = (1.0 - step) * phi + step * proposal
        candidate /= candidate.sum(axis=1, keepdims=True)
        value = objective(candidate)
        if value >= current:
            return candidate, value
    return phi, current


def _is_cold(state: MixtureState) -> bool:
    means = state.means
    return bool(np.allclose(means, means[0], atol=1e-12, rtol=0))


def fit_batch(
    algorithm: AlgorithmSpec,
    batch,
    prev_state: MixtureState,
    config: ModelConfig,
    *,
    seed: int = 0,
    t: int | None = None,
    svi_steps: int = 0,
) -> BatchFit:
    """Fit one batch, threading the previous posterior through the algorithm's prior.

    ``batch`` is a ``StreamBatch`` (its training split is used) or an
    ``(N, d)`` array. Random initialisation draws from a generator seeded by
    ``(seed, t)``. ``svi_steps`` is the number of SVI steps already taken on
    earlier batches.

    With ``config.init == "auto"`` a batch whose starting components all
    share one mean (a cold start) is initialised by k-means++ clusterings
    with an increasing number of centres, each refined for
    ``COLD_START_PROBE`` iterations; the one with the highest objective is
    kept. Warm starts add the responsibilities under the incoming components
    as a first candidate, and the k-means++ clusters are matched to the
    incoming components before probing.
    """
    algorithm = AlgorithmSpec.parse(algorithm)
    if hasattr(batch, "train"):
        x = np.asarray(batch.train, dtype=float)
        t = batch.t if t is None else t
    else:
        x = np.asarray(batch, dtype=float)
    t = 0 if t is None else t
    if x.ndim != 2 or x.shape[1] != config.dim:
        raise ValueError(f"batch has shape {x.shape}, model dimension is {config.dim}")
    if prev_state.dim != config.dim or prev_state.trunc != config.trunc:
        raise ValueError(
            f"previous state is {prev_state.trunc}x{prev_state.dim}, model is {config.trunc}x{config.dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")

    solver = _BatchSolver(algorithm, x, prev_state, config, svi_steps)
    rng = _batch_rng(seed, t)
    omegas, e_rho = solver.initial_rho()
    state = solver.initial_state(e_rho)

    if config.init in ("auto", "kmeans"):
        cold = _is_cold(state)
        starts = []
        if config.init == "auto" and not cold:
            starts.append(initialize_responsibilities(x, state, "posterior", rng))
        anchors = None if cold else state.means
        best = None
        best_kmeans = -np.inf
        misses = 0
        probe = min(COLD_START_PROBE, config.max_iters)
        for i, phi0 in enumerate(itertools.chain(starts, _kmeans_candidates(x, config.trunc, rng, anchors))):
            solver.svi_steps = svi_steps
            trace = [solver.objective(state, phi0, e_rho, omegas)]
            run = solver.run(state, phi0, e_rho, omegas, trace, probe)
            if best is None or trace[-1] > best[0][-1]:
                best = (trace, run, solver.svi_steps)
            if i < len(starts):
                continue
            # the k-means sweep stops once two more centres in a row do not help
            if trace[-1] > best_kmeans:
                best_kmeans = trace[-1]
                misses = 0
            else:
                misses += 1
                if misses >= 2:
                    break
        trace, (state, phi, e_rho, omegas, n_iter, converged), solver.svi_steps = best
        if not converged and n_iter < config.max_iters:
            state, phi, e_rho, omegas, more, converged = solver.run(
                state, phi, e_rho, omegas, trace, config.max_iters - n_iter
            )
            n_iter += more
    else:
        phi = initialize_responsibilities(x, state, config.init, rng)
        trace = [solver.objective(state, phi, e_rho, omegas)]
        state, phi, e_rho, omegas, n_iter, converged = solver.run(
            state, phi, e_rho, omegas, trace, config.max_iters
        )

    if omegas is not None:
        forgetting = ForgettingState(e_rho=np.array(e_rho), omegas=np.array(omegas), gamma=solver.gamma)
    else:
        forgetting = ForgettingState(e_rho=np.array(e_rho), fixed_rho=algorithm.fixed_rho)
    return BatchFit(
        state=state,
        phi=phi,
        forgetting=forgetting,
        elbo_trace=trace,
        counts=compute_counts(phi),
        n_iter=n_iter,
        converged=converged,
        svi_steps=solver.svi_steps,
    )


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------


@dataclass
class BatchRecord:
    t: int
    fit: BatchFit
    reset: bool
    wall_ms: float
    metrics: dict = field(default_factory=dict)

    @property
    def state(self) -> MixtureState:
        return self.fit.state

    @property
    def forgetting(self) -> ForgettingState:
        return self.fit.forgetting


def fit_stream(
    algorithm,
    stream: Sequence,
    config: ModelConfig,
    *,
    seed: int = 0,
    drift_flags: Sequence[bool] | None = None,
    on_batch: Callable | None = None,
) -> list[BatchRecord]:
    """Fit every batch in order, threading the posterior from one batch to the next.

    ``drift_flags`` (indexed like ``stream``) is required for Privileged,
    which restarts from the base prior on flagged batches. ``on_batch(record,
    batch)`` may return a dict that is stored as ``record.metrics``.
    """
    algorithm = AlgorithmSpec.parse(algorithm)
    stream = list(stream)
    if not stream:
        raise ValueError("stream is empty")
    if algorithm.kind == "Privileged":
        if drift_flags is None:
            raise ValueError("Privileged needs the drift flags of the stream")
        if len(drift_flags) != len(stream):
            raise ValueError("drift_flags must have one entry per batch")

    prior_state = config.prior_state()
    prev = prior_state
    svi_steps = 0
    records = []
    for i, batch in enumerate(stream):
        reset = bool(algorithm.kind == "Privileged" and drift_flags[i])
        if reset:
            prev = prior_state
        start = time.perf_counter()
        try:
            fit = fit_batch(algorithm, batch, prev, config, seed=seed, t=getattr(batch, "t", i), svi_steps=svi_steps)
        except Exception as exc:
            raise StreamFitError(i, exc) from exc
        wall_ms = 1000.0 * (time.perf_counter() - start)
        svi_steps = fit.svi_steps
        prev = fit.state
        record = BatchRecord(t=getattr(batch, "t", i), fit=fit, reset=reset, wall_ms=wall_ms)
        if on_batch is not None:
            record.metrics = dict(on_batch(record, batch) or {})
        logger.debug(
            "%s batch %d: %d iterations, elbo %.4f, E[rho] %.3f",
            algorithm.label, record.t, fit.n_iter, fit.elbo_trace[-1], fit.forgetting.e_rho_mean,
        )
        records.append(record)
    return records
