"""Rank surrogates, NDCG / ListNet losses and the G1 gradient estimator.

The exact rank of an item counts every item scoring at least as high,
itself included, so the top item has rank 1.  Differentiable surrogates
replace the step indicator by a squared hinge (NDCG route) or the
exponential (ListNet route); both keep the self term, so the hinge
surrogate is bounded below by c^2 and the exponential one by 1.

The G1 estimator follows the compositional structure L = mean f(g): the
inner quantity g = (surrogate rank) / N_q is tracked per query-item pair
with an exponential moving average, and the outer derivative is evaluated
at the tracked value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .data import BatchSample, Dataset
from .errors import ConfigurationError, EmptyDatasetError
from .model import ScoringModel

_LN2 = np.log(2.0)


class LossVariant(Enum):
    NDCG = "ndcg"
    LISTNET = "listnet"


@dataclass(frozen=True)
class RankLossKind:
    variant: LossVariant = LossVariant.NDCG
    margin: float = 1.0

    def __post_init__(self):
        if self.variant is LossVariant.NDCG and self.margin <= 0:
            raise ConfigurationError("hinge margin must be positive")


class LossResult(NamedTuple):
    value: float
    degenerate: bool


def exact_rank(scores: np.ndarray, i: int) -> int:
    """Number of items with score >= scores[i]; ties share the worse rank."""
    scores = np.asarray(scores, dtype=np.float64)
    return int(np.sum(scores >= scores[i]))


def hinge_rank_from_scores(scores: np.ndarray, i: int, margin: float) -> float:
    """Squared-hinge surrogate rank of item i, self term included."""
    diff = np.asarray(scores, dtype=np.float64) - scores[i]
    return float(np.sum(np.maximum(diff + margin, 0.0) ** 2))


def exp_rank_from_scores(scores: np.ndarray, i: int) -> float:
    """Exponential surrogate rank of item i; its reciprocal is N_q times
    the softmax exposure of item i."""
    diff = np.asarray(scores, dtype=np.float64) - scores[i]
    return float(np.sum(np.exp(diff)))


def surrogate_rank_hinge(model: ScoringModel, q: int, i: int,
                         items: np.ndarray, margin: float) -> float:
    scores = model.score_many(q, items)
    return hinge_rank_from_scores(scores, i, margin)


def surrogate_rank_exp(model: ScoringModel, q: int, i: int,
                       items: np.ndarray) -> float:
    scores = model.score_many(q, items)
    return exp_rank_from_scores(scores, i)


def ideal_dcg(labels: np.ndarray) -> float:
    """Max achievable DCG for a label multiset (the NDCG normalizer)."""
    gains = np.sort(2.0 ** np.asarray(labels, dtype=np.float64) - 1.0)[::-1]
    ranks = np.arange(1, len(gains) + 1)
    return float(np.sum(gains / np.log2(1.0 + ranks)))


def ndcg_loss(model: ScoringModel, q: int, items: np.ndarray,
              labels: np.ndarray, margin: float) -> LossResult:
    """- (1/Z_q) sum_i (2^y_i - 1) / log2(1 + hinge_rank_i)."""
    labels = np.asarray(labels, dtype=np.float64)
    z = ideal_dcg(labels)
    if z <= 0.0:
        return LossResult(0.0, True)
    scores = model.score_many(q, items)
    diff = scores[None, :] - scores[:, None]          # diff[i, j] = h_j - h_i
    gbar = np.sum(np.maximum(diff + margin, 0.0) ** 2, axis=1)
    value = -np.sum((2.0 ** labels - 1.0) / np.log2(1.0 + gbar)) / z
    return LossResult(float(value), False)


def listnet_loss(model: ScoringModel, q: int, items: np.ndarray,
                 labels: np.ndarray) -> float:
    """sum_i softmax(y)_i * log(exp-surrogate-rank_i)."""
    labels = np.asarray(labels, dtype=np.float64)
    p = np.exp(labels - labels.max())
    p /= p.sum()
    scores = model.score_many(q, items)
    diff = scores[None, :] - scores[:, None]
    ghat = np.sum(np.exp(diff), axis=1)
    return float(np.sum(p * np.log(ghat)))


def query_loss(model: ScoringModel, q, items, labels, kind: RankLossKind) -> float:
    """L_q under the configured loss; degenerate NDCG queries contribute 0."""
    if kind.variant is LossVariant.NDCG:
        return ndcg_loss(model, q, items, labels, kind.margin).value
    return listnet_loss(model, q, items, labels)


def dataset_loss(model: ScoringModel, d: Dataset, kind: RankLossKind) -> float:
    """L(w) = (1 / |S|) * sum_q L_q(w); the finite-difference target for G1."""
    total = sum(
        query_loss(model, q.query_index, q.feature_idx, q.relevance, kind)
        for q in d.queries
    )
    return total / d.total_pairs


@dataclass
class PairEstimatorTable:
    """Moving averages u_{q,i} of the normalized surrogate ranks.

    First touch initializes an entry to the current minibatch estimate,
    which avoids the blow-up of the outer derivative near u = 0.
    """

    gamma: float = 0.3
    u: dict[tuple[int, int], float] = field(default_factory=dict)

    def update(self, key: tuple[int, int], estimate: float) -> float:
        if key not in self.u:
            self.u[key] = estimate
        else:
            self.u[key] = self.gamma * estimate + (1.0 - self.gamma) * self.u[key]
        return self.u[key]


def _outer_derivative(kind: RankLossKind, u: np.ndarray, labels: np.ndarray,
                      z: float, n_q: int, label_softmax: np.ndarray | None) -> np.ndarray:
    """df/dg evaluated at the tracked inner estimates u."""
    if kind.variant is LossVariant.NDCG:
        if z <= 0.0:
            return np.zeros_like(u)
        arg = n_q * u + 1.0
        log2arg = np.log2(arg)
        return (2.0 ** labels - 1.0) / z * n_q / (arg * _LN2 * log2arg ** 2)
    # ListNet: f(g) = p_i log(N_q g) => f'(g) = p_i / g
    return label_softmax / u


def g1_estimate(model: ScoringModel, d: Dataset, batch: BatchSample,
                kind: RankLossKind, table: PairEstimatorTable) -> np.ndarray:
    """Stochastic gradient of the ranking loss over the pair batch.

    Updates the moving averages for every sampled pair first, then
    assembles G1 with the refreshed values; with full batches and
    gamma = 1 this reproduces the exact full-batch gradient.
    """
    if batch.num_pairs == 0:
        raise EmptyDatasetError("empty pair batch")
    grad = np.zeros(len(model.params.values))
    acc_q: list[np.ndarray] = []
    acc_i: list[np.ndarray] = []
    acc_c: list[np.ndarray] = []
    inv_b = 1.0 / batch.num_pairs

    for qp in np.unique(batch.pair_qpos):
        qg = d.queries[qp]
        sub = batch.per_query[int(qp)]
        pair_rows = batch.pair_ipos[batch.pair_qpos == qp]
        inner = sub.items
        s_pairs = model.score_many(qg.query_index, qg.feature_idx[pair_rows])
        s_inner = model.score_many(qg.query_index, qg.feature_idx[inner])
        diff = s_inner[None, :] - s_pairs[:, None]     # (pairs, inner)

        if kind.variant is LossVariant.NDCG:
            hinge = np.maximum(diff + kind.margin, 0.0)
            ell = hinge ** 2
            dell = 2.0 * hinge
        else:
            ell = np.exp(diff)
            dell = ell

        ghat = ell.mean(axis=1)
        u = np.array([
            table.update((qg.query_index, int(qg.item_ids[r])), float(g))
            for r, g in zip(pair_rows, ghat)
        ])
        labels = qg.relevance[pair_rows]
        if kind.variant is LossVariant.NDCG:
            z = ideal_dcg(qg.relevance)
            fprime = _outer_derivative(kind, u, labels, z, qg.num_items, None)
        else:
            p_all = np.exp(qg.relevance - qg.relevance.max())
            p_all /= p_all.sum()
            fprime = _outer_derivative(kind, u, labels, 0.0, qg.num_items, p_all[pair_rows])

        # d ghat / dw = (1/|inner|) sum_j dell(h_j - h_i) (grad h_j - grad h_i)
        w = fprime[:, None] * dell / len(inner) * inv_b
        inner_coeff = w.sum(axis=0)                    # onto each inner item
        pair_coeff = -w.sum(axis=1)                    # onto each pair item
        n_pairs, n_inner = len(pair_rows), len(inner)
        acc_q.append(np.full(n_inner + n_pairs, qg.query_index, dtype=np.int64))
        acc_i.append(np.concatenate([qg.feature_idx[inner], qg.feature_idx[pair_rows]]))
        acc_c.append(np.concatenate([inner_coeff, pair_coeff]))

    model.add_weighted_grads(np.concatenate(acc_q), np.concatenate(acc_i),
                             np.concatenate(acc_c), grad)
    return grad
