"""Top-K threshold machinery: exact order statistic, smoothed strongly
convex threshold objective, a safeguarded Newton offline solver, the
online (lambda, s, v) state updates and the implicit gradient of the
smoothed threshold with respect to model parameters.

The smoothed objective replaces each hinge (h - lambda)_+ by the softplus
tau1 * log(1 + exp((h - lambda) / tau1)) and adds a tau2/2 * lambda^2
curvature term, so its second derivative is bounded below by tau2 > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FairTopKError
from .model import ScoringModel


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class SmoothingParams:
    tau1: float = 1e-2
    tau2: float = 1e-4
    eps: float = 0.5
    k: int = 10

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ConfigurationError("tau1 and tau2 must be positive")
        if not (0.0 < self.eps < 1.0):
            raise ConfigurationError("eps must lie strictly in (0, 1)")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")


@dataclass
class LambdaState:
    """Per-query online threshold state: lam tracks the smoothed threshold,
    s its curvature estimate and v its gradient estimate."""

    lam: float
    s: float
    v: float = 0.0
    gamma: float = 0.5    # moving-average weight for s and v
    eta: float = 1e-3     # step size applied to lam


def exact_lambda(scores: np.ndarray, k: int) -> float:
    """The (k+1)-th largest score, duplicates counted with multiplicity."""
    scores = np.asarray(scores, dtype=np.float64)
    if k + 1 > len(scores):
        raise ConfigurationError(f"k+1 = {k + 1} exceeds {len(scores)} scores")
    idx = len(scores) - (k + 1)
    return float(np.partition(scores, idx)[idx])


def smoothed_objective(lam: float, scores: np.ndarray, p: SmoothingParams,
                       n_total: int | None = None) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    n = n_total if n_total is not None else len(scores)
    soft = p.tau1 * _softplus((scores - lam) / p.tau1)
    return (p.k + p.eps) / n * lam + 0.5 * p.tau2 * lam ** 2 + soft.mean()


def smoothed_grad(lam: float, scores: np.ndarray, p: SmoothingParams,
                  n_total: int | None = None) -> float:
    """d/d lambda of the smoothed objective; strictly increasing in lambda.

    ``n_total`` is the true list size N_q when ``scores`` is a mini-batch;
    the batch average then stands in for the full average while the
    (K + eps) / N_q term keeps the true N_q.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = n_total if n_total is not None else len(scores)
    sig = _sigmoid((scores - lam) / p.tau1)
    return (p.k + p.eps) / n + p.tau2 * lam - sig.mean()


def smoothed_hess(lam: float, scores: np.ndarray, p: SmoothingParams) -> float:
    """Second derivative; bounded below by tau2."""
    scores = np.asarray(scores, dtype=np.float64)
    sig = _sigmoid((scores - lam) / p.tau1)
    return p.tau2 + float(np.mean(sig * (1.0 - sig))) / p.tau1


def cross_grad(lam: float, model: ScoringModel, q: int, item_idx: np.ndarray,
               p: SmoothingParams) -> np.ndarray:
    """Mixed second derivative d^2 G / (d lambda d w) over the batch:
    -(1 / (|B| tau1)) sum_i sig_i (1 - sig_i) grad_w h_i."""
    item_idx = np.asarray(item_idx, dtype=np.int64)
    scores = model.score_many(q, item_idx)
    sig = _sigmoid((scores - lam) / p.tau1)
    coeff = -sig * (1.0 - sig) / (len(item_idx) * p.tau1)
    out = np.zeros(len(model.params.values))
    model.add_weighted_grads(np.full(len(item_idx), q), item_idx, coeff, out)
    return out


def implicit_lambda_grad(lam: float, model: ScoringModel, q: int,
                         item_idx: np.ndarray, p: SmoothingParams) -> np.ndarray:
    """grad_w of the smoothed threshold via the implicit function theorem."""
    scores = model.score_many(q, np.asarray(item_idx, dtype=np.int64))
    hess = smoothed_hess(lam, scores, p)
    return -cross_grad(lam, model, q, item_idx, p) / hess


def solve_lambda_exactly_smoothed(scores: np.ndarray, p: SmoothingParams,
                                  tol: float = 1e-10,
                                  n_total: int | None = None) -> float:
    """Safeguarded Newton (bisection fallback) on the smoothed gradient."""
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    n = n_total if n_total is not None else len(scores)
    lo = float(scores.min()) - 1.0
    hi = float(scores.max()) + (p.k + p.eps) / (p.tau2 * n) + 1.0
    glo = smoothed_grad(lo, scores, p, n_total)
    ghi = smoothed_grad(hi, scores, p, n_total)
    for _ in range(200):
        if glo < 0.0:
            break
        lo -= max(1.0, hi - lo)
        glo = smoothed_grad(lo, scores, p, n_total)
    if glo >= 0.0 or ghi <= 0.0:
        raise FairTopKError("threshold bracket failure")  # cannot happen for valid inputs

    lam = 0.5 * (lo + hi)
    for _ in range(200):
        g = smoothed_grad(lam, scores, p, n_total)
        if abs(g) <= tol:
            return lam
        if g > 0.0:
            hi = lam
        else:
            lo = lam
        step = g / smoothed_hess(lam, scores, p)
        cand = lam - step
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        lam = cand
    return lam


def state_step(st: LambdaState, scores: np.ndarray, p: SmoothingParams,
               n_total: int | None = None) -> LambdaState:
    """One online update of (s, v, lambda) from a mini-batch of scores."""
    st.s = (1.0 - st.gamma) * st.s + st.gamma * smoothed_hess(st.lam, scores, p)
    st.v = (1.0 - st.gamma) * st.v + st.gamma * smoothed_grad(st.lam, scores, p, n_total)
    st.lam = st.lam - st.eta * st.v
    return st


def init_lambda_state(scores: np.ndarray, p: SmoothingParams, n_total: int,
                      gamma: float, eta: float) -> LambdaState:
    """Warm-started state for a query's first touch.

    The threshold starts at the batch order statistic matching the K / N_q
    quantile; s starts at the softplus curvature midpoint bound.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k_batch = int(round(p.k * len(scores) / n_total))
    k_batch = min(max(k_batch, 1), len(scores) - 1) if len(scores) > 1 else 0
    lam0 = exact_lambda(scores, k_batch) if len(scores) > 1 else float(scores[0])
    return LambdaState(lam=lam0, s=p.tau2 + 0.25 / p.tau1, v=0.0,
                       gamma=gamma, eta=eta)
