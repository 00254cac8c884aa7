"""Exposure, full-list and top-K disparity losses, exact top-K disparity
metrics and the G2 gradient estimator.

Exposure is the softmax of the scores over a query's item list.  The
top-K surrogate weights each item's exp-score by a smooth indicator of
sitting above the threshold lambda; with the indicator hard-wired to one
it reduces to the full-list disparity.  All exp sums apply a per-query
reference shift, valid because the loss depends only on the ratio
(g_a - g_b) / g_q which is invariant to a common positive rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import GROUP_A, GROUP_B, BatchSample, Dataset, QueryGroup
from .errors import ConfigurationError, StateError
from .lambda_solver import (
    LambdaState,
    SmoothingParams,
    _sigmoid,
    cross_grad,
    solve_lambda_exactly_smoothed,
)
from .model import ScoringModel


@dataclass(frozen=True)
class SmoothIndicator:
    """Sigmoid step surrogate with temperature tau: psi(x) = sigmoid(x / tau)."""

    temperature: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError("indicator temperature must be positive")

    def value(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(np.asarray(x, dtype=np.float64) / self.temperature)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        v = self.value(x)
        return v * (1.0 - v) / self.temperature


class ConstantOne(SmoothIndicator):
    """Test hook / full-list mode: the indicator is identically one."""

    def __init__(self):
        object.__setattr__(self, "temperature", np.inf)

    def value(self, x):
        return np.ones_like(np.asarray(x, dtype=np.float64))

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


CONSTANT_ONE = ConstantOne()


def exposures(scores: np.ndarray) -> np.ndarray:
    """Softmax of the scores, computed with max subtraction; sums to 1."""
    scores = np.asarray(scores, dtype=np.float64)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def exposure(model: ScoringModel, q: int, x: int, items: np.ndarray) -> float:
    """Exposure of the item at position x within the query's item list."""
    return float(exposures(model.score_many(q, items))[x])


def full_list_disparity(model: ScoringModel, qg: QueryGroup) -> float | None:
    """Half the squared gap between group-averaged exposures; None when a
    group is empty (fairness undefined for the query)."""
    if not qg.has_both_groups():
        return None
    e = exposures(model.score_many(qg.query_index, qg.feature_idx))
    gap = e[qg.groups == GROUP_A].mean() - e[qg.groups == GROUP_B].mean()
    return 0.5 * float(gap) ** 2


def topk_membership(scores: np.ndarray, item_ids: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the exact top-k, ties broken by ascending item id."""
    order = np.lexsort((item_ids, -scores))
    mask = np.zeros(len(scores), dtype=bool)
    mask[order[:k]] = True
    return mask


def topk_disparity_exact(model: ScoringModel, qg: QueryGroup, k: int) -> float | None:
    """Signed top-K exposure gap, group A minus group B.

    Each group's mean runs over the whole group, but only top-K members
    contribute their (full-list) exposure.
    """
    if not 1 <= k < qg.num_items:
        raise ConfigurationError(f"k must be in [1, {qg.num_items - 1}]")
    if not qg.has_both_groups():
        return None
    scores = model.score_many(qg.query_index, qg.feature_idx)
    e = exposures(scores)
    top = topk_membership(scores, qg.item_ids, k)
    a = qg.groups == GROUP_A
    b = qg.groups == GROUP_B
    gap = e[a & top].sum() / a.sum() - e[b & top].sum() / b.sum()
    return float(gap)


def group_stats(scores: np.ndarray, groups: np.ndarray, psi_vals: np.ndarray,
                shift: float) -> tuple[float, float, float]:
    """(g_a, g_b, g_q) with exp taken relative to the reference shift."""
    e = np.exp(scores - shift)
    a = groups == GROUP_A
    b = groups == GROUP_B
    g_a = float((psi_vals[a] * e[a]).mean())
    g_b = float((psi_vals[b] * e[b]).mean())
    g_q = float(e.mean())
    return g_a, g_b, g_q


def topk_disparity_surrogate(model: ScoringModel, qg: QueryGroup, k: int,
                             lam: float, psi: SmoothIndicator,
                             shift: float | None = None) -> float | None:
    """Smoothed half-squared top-K gap at threshold lam.

    Equals half the square of (mean_A psi*e - mean_B psi*e) with e the
    softmax exposures; the shift cancels in the ratio.
    """
    if not qg.has_both_groups():
        return None
    scores = model.score_many(qg.query_index, qg.feature_idx)
    if shift is None:
        shift = float(scores.max())
    psi_vals = psi.value(scores - lam)
    g_a, g_b, g_q = group_stats(scores, qg.groups, psi_vals, shift)
    return 0.5 * ((g_a - g_b) / (qg.num_items * g_q)) ** 2


def dataset_topk_fairness(model: ScoringModel, d: Dataset, k: int,
                          psi: SmoothIndicator, p: SmoothingParams,
                          tol: float = 1e-12) -> float:
    """U(w): mean over queries of the smoothed top-K disparity with the
    threshold re-solved per query.  The finite-difference target for G2."""
    total = 0.0
    for qg in d.queries:
        scores = model.score_many(qg.query_index, qg.feature_idx)
        lam = solve_lambda_exactly_smoothed(scores, p, tol=tol)
        u = topk_disparity_surrogate(model, qg, k, lam, psi)
        if u is not None:
            total += u
    return total / d.num_queries


def disparity_mae_mse(gaps: list[float]) -> tuple[float, float]:
    """MAE and MSE of signed per-query gaps."""
    if not gaps:
        return float("nan"), float("nan")
    g = np.asarray(gaps, dtype=np.float64)
    return float(np.abs(g).mean()), float((g ** 2).mean())


@dataclass
class QueryFairnessState:
    """Per-query moving averages of the shifted compositional quantities."""

    u_a: float
    u_b: float
    u_g: float
    shift: float


@dataclass
class FairnessEstimatorTable:
    """Holds the per-query states and the three averaging weights."""

    gamma_a: float = 0.2
    gamma_b: float = 0.2
    gamma_g: float = 0.2
    states: dict[int, QueryFairnessState] = field(default_factory=dict)

    def update(self, key: int, g_a: float, g_b: float, g_q: float,
               shift: float) -> QueryFairnessState:
        st = self.states.get(key)
        if st is None:
            st = QueryFairnessState(u_a=g_a, u_b=g_b, u_g=g_q, shift=shift)
            self.states[key] = st
        else:
            st.u_a = self.gamma_a * g_a + (1.0 - self.gamma_a) * st.u_a
            st.u_b = self.gamma_b * g_b + (1.0 - self.gamma_b) * st.u_b
            st.u_g = self.gamma_g * g_q + (1.0 - self.gamma_g) * st.u_g
        return st


def g2_estimate(model: ScoringModel, d: Dataset, batch: BatchSample, k: int,
                table: FairnessEstimatorTable,
                lambda_states: dict[int, LambdaState],
                psi: SmoothIndicator, p: SmoothingParams,
                mode: str = "simplified") -> np.ndarray:
    """Stochastic gradient of the top-K fairness regularizer over B_Q.

    ``simplified`` drops the indicator-derivative terms (the training
    default); ``full_implicit`` includes them with the implicit-function
    gradient of the threshold, grad lambda = -cross / s.
    """
    if mode not in ("simplified", "full_implicit"):
        raise ConfigurationError(f"unknown g2 mode {mode!r}")
    grad = np.zeros(len(model.params.values))
    qkeys = sorted(batch.per_query)
    if not qkeys:
        return grad
    inv_nq = 1.0 / len(qkeys)

    acc_q: list[np.ndarray] = []
    acc_i: list[np.ndarray] = []
    acc_c: list[np.ndarray] = []

    for qp in qkeys:
        sub = batch.per_query[qp]
        if sub.fairness_skipped:
            continue
        qg = d.queries[qp]
        lst = lambda_states.get(qp)
        if lst is None:
            raise StateError(f"no lambda state for query {qg.query_id}")
        lam = lst.lam

        feat_a = qg.feature_idx[sub.group_a]
        feat_b = qg.feature_idx[sub.group_b]
        feat_g = qg.feature_idx[sub.items]
        s_a = model.score_many(qg.query_index, feat_a)
        s_b = model.score_many(qg.query_index, feat_b)
        s_g = model.score_many(qg.query_index, feat_g)

        prev = table.states.get(qp)
        shift = prev.shift if prev is not None else float(
            max(s_a.max(), s_b.max(), s_g.max()))
        e_a = np.exp(s_a - shift)
        e_b = np.exp(s_b - shift)
        e_g = np.exp(s_g - shift)
        psi_a = psi.value(s_a - lam)
        psi_b = psi.value(s_b - lam)

        st = table.update(qp, float((psi_a * e_a).mean()),
                          float((psi_b * e_b).mean()), float(e_g.mean()), shift)

        n_q = qg.num_items
        diff = (st.u_a - st.u_b) / (n_q * st.u_g)
        d1 = diff / (n_q * st.u_g)
        d2 = -d1
        d3 = -diff * diff / st.u_g

        coeff_a = d1 * psi_a * e_a / len(s_a) * inv_nq
        coeff_b = d2 * psi_b * e_b / len(s_b) * inv_nq
        coeff_g = d3 * e_g / len(s_g) * inv_nq

        if mode == "full_implicit":
            dpsi_a = psi.derivative(s_a - lam)
            dpsi_b = psi.derivative(s_b - lam)
            extra_a = d1 * dpsi_a * e_a / len(s_a) * inv_nq
            extra_b = d2 * dpsi_b * e_b / len(s_b) * inv_nq
            coeff_a = coeff_a + extra_a
            coeff_b = coeff_b + extra_b
            lam_grad = -cross_grad(lam, model, qg.query_index, feat_g, p) / lst.s
            grad += -(extra_a.sum() + extra_b.sum()) * lam_grad

        acc_q.append(np.full(len(s_a) + len(s_b) + len(s_g), qg.query_index,
                             dtype=np.int64))
        acc_i.append(np.concatenate([feat_a, feat_b, feat_g]))
        acc_c.append(np.concatenate([coeff_a, coeff_b, coeff_g]))

    if acc_q:
        model.add_weighted_grads(np.concatenate(acc_q), np.concatenate(acc_i),
                                 np.concatenate(acc_c), grad)
    return grad
