"""Bounded scoring models with analytic parameter gradients.

The default scorer is a matrix factorization with a tanh output squashing,
so scores are bounded by construction and every exp(score) downstream is
finite.  Parameters live in one flat vector with a named segment layout so
the optimizer can treat any model uniformly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigurationError, LookupError_

_MAGIC = b"RANKCKP1"


@dataclass
class ParamVector:
    """Flat parameter vector plus a named segment layout."""

    values: np.ndarray
    layout: dict[str, tuple[int, int]]   # name -> (offset, length)

    def segment(self, name: str) -> np.ndarray:
        off, length = self.layout[name]
        return self.values[off:off + length]

    def __len__(self) -> int:
        return len(self.values)


class ScoringModel:
    """Interface: a bounded score function with analytic gradients."""

    params: ParamVector
    score_bound: float

    def score(self, q: int, x: int) -> float:
        raise NotImplementedError

    def score_many(self, q: int, items: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_gradient(self, q: int, x: int) -> np.ndarray:
        raise NotImplementedError

    def add_weighted_grads(self, q_idx: np.ndarray, item_idx: np.ndarray,
                           coeff: np.ndarray, out: np.ndarray) -> None:
        """out += sum_j coeff[j] * grad_w score(q_idx[j], item_idx[j])."""
        raise NotImplementedError


class FactorizationScorer(ScoringModel):
    """score = B_h * tanh((u_q . v_i + b_i) / s)."""

    def __init__(self, num_queries: int, num_items: int, dim: int,
                 bound: float = 10.0, scale: float = 1.0, seed: int = 0):
        if num_queries < 1 or num_items < 1 or dim < 1:
            raise ConfigurationError("model dimensions must be positive")
        if bound <= 0 or scale <= 0:
            raise ConfigurationError("bound and scale must be positive")
        self.num_queries = num_queries
        self.num_items = num_items
        self.dim = dim
        self.score_bound = float(bound)
        self.scale = float(scale)

        nq, ni, d = num_queries, num_items, dim
        values = np.zeros(nq * d + ni * d + ni)
        layout = {
            "query_emb": (0, nq * d),
            "item_emb": (nq * d, ni * d),
            "item_bias": (nq * d + ni * d, ni),
        }
        self.params = ParamVector(values=values, layout=layout)
        rng = np.random.default_rng(seed)
        self.params.segment("query_emb")[:] = rng.normal(0.0, 0.1, nq * d)
        self.params.segment("item_emb")[:] = rng.normal(0.0, 0.1, ni * d)
        # biases start at zero

    # segment views (share memory with the flat vector)
    @property
    def query_emb(self) -> np.ndarray:
        return self.params.segment("query_emb").reshape(self.num_queries, self.dim)

    @property
    def item_emb(self) -> np.ndarray:
        return self.params.segment("item_emb").reshape(self.num_items, self.dim)

    @property
    def item_bias(self) -> np.ndarray:
        return self.params.segment("item_bias")

    def _check_q(self, q: int) -> None:
        if not 0 <= q < self.num_queries:
            raise LookupError_(f"query index {q} out of range")

    def _check_items(self, items: np.ndarray) -> None:
        if len(items) and (items.min() < 0 or items.max() >= self.num_items):
            raise LookupError_("item index out of range")

    def _pre(self, q: int, items: np.ndarray) -> np.ndarray:
        return (self.item_emb[items] @ self.query_emb[q] + self.item_bias[items]) / self.scale

    def score(self, q: int, x: int) -> float:
        return float(self.score_many(q, np.array([x]))[0])

    def score_many(self, q: int, items) -> np.ndarray:
        self._check_q(q)
        items = np.asarray(items, dtype=np.int64)
        self._check_items(items)
        return self.score_bound * np.tanh(self._pre(q, items))

    def score_gradient(self, q: int, x: int) -> np.ndarray:
        grad = np.zeros(len(self.params))
        self.add_weighted_grads(np.array([q]), np.array([x]), np.array([1.0]), grad)
        return grad

    def add_weighted_grads(self, q_idx, item_idx, coeff, out) -> None:
        q_idx = np.asarray(q_idx, dtype=np.int64)
        item_idx = np.asarray(item_idx, dtype=np.int64)
        coeff = np.asarray(coeff, dtype=np.float64)
        if len(q_idx):
            if q_idx.min() < 0 or q_idx.max() >= self.num_queries:
                raise LookupError_("query index out of range")
        self._check_items(item_idx)
        t = np.tanh((np.einsum("ij,ij->i", self.item_emb[item_idx], self.query_emb[q_idx])
                     + self.item_bias[item_idx]) / self.scale)
        c = coeff * self.score_bound * (1.0 - t * t) / self.scale
        d = self.dim
        qe = out[self.params.layout["query_emb"][0]:
                 self.params.layout["query_emb"][0] + self.num_queries * d].reshape(-1, d)
        ie = out[self.params.layout["item_emb"][0]:
                 self.params.layout["item_emb"][0] + self.num_items * d].reshape(-1, d)
        ib = out[self.params.layout["item_bias"][0]:
                 self.params.layout["item_bias"][0] + self.num_items]
        np.add.at(qe, q_idx, c[:, None] * self.item_emb[item_idx])
        np.add.at(ie, item_idx, c[:, None] * self.query_emb[q_idx])
        np.add.at(ib, item_idx, c)

    def clone(self) -> "FactorizationScorer":
        m = FactorizationScorer(self.num_queries, self.num_items, self.dim,
                                self.score_bound, self.scale, seed=0)
        m.params.values[:] = self.params.values
        return m

    def save(self, path: str) -> None:
        """Binary checkpoint: 8-byte magic, JSON header, raw float64 params."""
        header = json.dumps({
            "num_queries": self.num_queries,
            "num_items": self.num_items,
            "dim": self.dim,
            "bound": self.score_bound,
            "scale": self.scale,
            "layout": {k: list(v) for k, v in self.params.layout.items()},
            "dtype": "float64",
        }).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(self.params.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "FactorizationScorer":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise CheckpointError(f"{path}: bad magic header {magic!r}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode())
            raw = fh.read()
        m = cls(header["num_queries"], header["num_items"], header["dim"],
                header["bound"], header["scale"], seed=0)
        values = np.frombuffer(raw, dtype="<f8")
        if len(values) != len(m.params):
            raise CheckpointError(f"{path}: expected {len(m.params)} params, got {len(values)}")
        m.params.values[:] = values
        return m
