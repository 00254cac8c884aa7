"""Dataset representation, CSV ingestion, synthetic data and minibatch sampling.

Items within a query belong to one of two disjoint groups: group A (the
protected / minority group, encoded 0 on disk) and group B (the majority
group, encoded 1).  Queries keep a fixed ``query_index`` row so that the
same scoring model can be shared by train / validation / test splits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DuplicateItemError,
    EmptyDatasetError,
    ParseError,
)

GROUP_A = 0
GROUP_B = 1


@dataclass
class QueryGroup:
    """Per-query item list with relevance labels and group tags."""

    query_id: str
    query_index: int
    item_ids: np.ndarray      # int64, dataset-level item identifiers
    feature_idx: np.ndarray   # int64, rows of the model's item table
    relevance: np.ndarray     # float64, y >= 0
    groups: np.ndarray        # int8, GROUP_A or GROUP_B

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def group_positions(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.groups == group)

    def has_both_groups(self) -> bool:
        return bool(np.any(self.groups == GROUP_A) and np.any(self.groups == GROUP_B))


@dataclass
class Dataset:
    """A collection of queries plus the item vocabulary shared across them."""

    queries: list[QueryGroup]
    item_index: dict[int, int]        # item_id -> feature row
    item_groups: dict[int, int]       # item_id -> group tag
    num_query_rows: int
    num_item_rows: int
    # item ids observed for each query in the *source* dataset; set by split()
    # so evaluation can sample genuinely unobserved items as negatives.
    observed: dict[str, frozenset] | None = None

    _pair_qpos: np.ndarray | None = field(default=None, repr=False)
    _pair_ipos: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_queries(self) -> int:
        return len(self.queries)

    @property
    def total_pairs(self) -> int:
        return sum(q.num_items for q in self.queries)

    def _pairs(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pair_qpos is None:
            qpos = np.concatenate(
                [np.full(q.num_items, k, dtype=np.int64)
                 for k, q in enumerate(self.queries)]
            ) if self.queries else np.zeros(0, dtype=np.int64)
            ipos = np.concatenate(
                [np.arange(q.num_items, dtype=np.int64) for q in self.queries]
            ) if self.queries else np.zeros(0, dtype=np.int64)
            self._pair_qpos, self._pair_ipos = qpos, ipos
        return self._pair_qpos, self._pair_ipos


@dataclass
class QuerySubBatch:
    """Sampled sub-batches of one query's item list."""

    items: np.ndarray   # positions into the QueryGroup arrays
    group_a: np.ndarray
    group_b: np.ndarray
    fairness_skipped: bool


@dataclass
class BatchSample:
    """One Algorithm-level draw: pair batch plus per-query sub-batches."""

    pair_qpos: np.ndarray
    pair_ipos: np.ndarray
    per_query: dict[int, QuerySubBatch]   # keyed by query position in Dataset.queries

    @property
    def num_pairs(self) -> int:
        return len(self.pair_qpos)


def _build_dataset(rows: list[tuple[str, int, float, int]]) -> Dataset:
    """Group (query_id, item_id, relevance, group) rows in first-appearance order."""
    by_query: dict[str, list[tuple[int, float, int]]] = {}
    order: list[str] = []
    item_index: dict[int, int] = {}
    item_groups: dict[int, int] = {}
    seen: set[tuple[str, int]] = set()
    for qid, iid, rel, grp in rows:
        if (qid, iid) in seen:
            raise DuplicateItemError(f"duplicate (query, item) pair ({qid}, {iid})")
        seen.add((qid, iid))
        if qid not in by_query:
            by_query[qid] = []
            order.append(qid)
        by_query[qid].append((iid, rel, grp))
        if iid not in item_index:
            item_index[iid] = len(item_index)
        item_groups[iid] = grp

    queries = []
    for k, qid in enumerate(order):
        entries = by_query[qid]
        queries.append(QueryGroup(
            query_id=qid,
            query_index=k,
            item_ids=np.array([e[0] for e in entries], dtype=np.int64),
            feature_idx=np.array([item_index[e[0]] for e in entries], dtype=np.int64),
            relevance=np.array([e[1] for e in entries], dtype=np.float64),
            groups=np.array([e[2] for e in entries], dtype=np.int8),
        ))
    return Dataset(
        queries=queries,
        item_index=item_index,
        item_groups=item_groups,
        num_query_rows=len(queries),
        num_item_rows=len(item_index),
    )


def load_csv(path: str) -> Dataset:
    """Load ``query_id,item_id,relevance,group`` rows; header auto-detected.

    Group 0 is the protected group A, 1 the majority group B.
    """
    rows: list[tuple[str, int, float, int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, parts in enumerate(reader, start=1):
            if not parts or (len(parts) == 1 and not parts[0].strip()):
                continue
            if lineno == 1 and len(parts) == 4:
                # header if the relevance column is not numeric
                try:
                    float(parts[2])
                except ValueError:
                    continue
            if len(parts) != 4:
                raise ParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            qid = parts[0].strip()
            try:
                iid = int(parts[1])
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer item id {parts[1]!r}")
            try:
                rel = float(parts[2])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric relevance {parts[2]!r}")
            if rel < 0:
                raise ParseError(f"line {lineno}: negative relevance {rel}")
            grp = parts[3].strip()
            if grp not in ("0", "1"):
                raise ParseError(f"line {lineno}: group must be 0 or 1, got {grp!r}")
            rows.append((qid, iid, rel, int(grp)))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    return _build_dataset(rows)


def save_csv(d: Dataset, path: str) -> None:
    """Serialize back to the load_csv format (with header)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "item_id", "relevance", "group"])
        for q in d.queries:
            for iid, rel, grp in zip(q.item_ids, q.relevance, q.groups):
                rel = float(rel)
                writer.writerow([q.query_id, int(iid), int(rel) if rel == int(rel) else rel, int(grp)])


def generate_synthetic(num_queries: int, items_per_query: int,
                       minority_fraction: float, bias: float,
                       seed: int) -> Dataset:
    """Synthetic biased data with a shared item pool.

    A pool of ``2 * items_per_query`` items is created; each item has a
    latent quality drawn from N(0, 1), shifted down by ``bias`` for the
    minority group A.  Each query rates ``items_per_query`` items sampled
    from the pool (stratified so both groups are present), with relevance
    a noisy rounding of quality clipped to the 0..4 rating scale.  Sharing
    items across queries lets a per-item model generalize across per-query
    splits, mirroring the recommender setting.
    """
    if items_per_query < 4:
        raise ConfigurationError("items_per_query must be >= 4")
    if not (0.0 < minority_fraction < 1.0):
        raise ConfigurationError("minority_fraction must be in (0, 1)")
    if bias < 0:
        raise ConfigurationError("bias must be >= 0")
    if num_queries < 1:
        raise ConfigurationError("num_queries must be >= 1")

    rng = np.random.default_rng(seed)
    pool_size = 2 * items_per_query
    n_a = max(1, int(round(minority_fraction * pool_size)))
    n_a = min(n_a, pool_size - 1)
    pool_groups = np.array([GROUP_A] * n_a + [GROUP_B] * (pool_size - n_a), dtype=np.int8)
    quality = rng.standard_normal(pool_size)
    quality[pool_groups == GROUP_A] -= bias

    per_query_a = max(1, int(round(minority_fraction * items_per_query)))
    per_query_a = min(per_query_a, items_per_query - 1)
    a_pool = np.flatnonzero(pool_groups == GROUP_A)
    b_pool = np.flatnonzero(pool_groups == GROUP_B)
    if per_query_a > len(a_pool) or items_per_query - per_query_a > len(b_pool):
        raise ConfigurationError("minority_fraction incompatible with items_per_query")

    rows: list[tuple[str, int, float, int]] = []
    for k in range(num_queries):
        picked_a = rng.choice(a_pool, size=per_query_a, replace=False)
        picked_b = rng.choice(b_pool, size=items_per_query - per_query_a, replace=False)
        picked = np.concatenate([picked_a, picked_b])
        noise = rng.normal(0.0, 0.5, size=len(picked))
        rel = np.clip(np.round(quality[picked] + noise), 0.0, 4.0)
        for iid, r in zip(picked, rel):
            rows.append((f"q{k}", int(iid), float(r), int(pool_groups[iid])))
    return _build_dataset(rows)


def split(d: Dataset, fractions: tuple[float, float, float],
          seed: int) -> tuple[Dataset, Dataset, Dataset, int]:
    """Per-query split of each item list into train / valid / test.

    Queries with fewer items than split parts go entirely to train; the
    returned counter reports how many queries were handled that way.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigurationError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError("fractions must sum to 1")

    rng = np.random.default_rng(seed)
    parts: list[list[QueryGroup]] = [[], [], []]
    tiny_queries = 0
    observed = {q.query_id: frozenset(int(i) for i in q.item_ids) for q in d.queries}

    for q in d.queries:
        n = q.num_items
        if n < 3:
            tiny_queries += 1
            counts = [n, 0, 0]
            perm = np.arange(n)
        else:
            perm = rng.permutation(n)
            counts = [int(f * n) for f in fractions]
            remainders = [f * n - c for f, c in zip(fractions, counts)]
            while sum(counts) < n:
                j = int(np.argmax(remainders))
                counts[j] += 1
                remainders[j] = -1.0
        start = 0
        for part, c in zip(parts, counts):
            sel = np.sort(perm[start:start + c])
            start += c
            if c == 0:
                continue
            part.append(QueryGroup(
                query_id=q.query_id,
                query_index=q.query_index,
                item_ids=q.item_ids[sel],
                feature_idx=q.feature_idx[sel],
                relevance=q.relevance[sel],
                groups=q.groups[sel],
            ))

    out = []
    for part in parts:
        out.append(Dataset(
            queries=part,
            item_index=d.item_index,
            item_groups=d.item_groups,
            num_query_rows=d.num_query_rows,
            num_item_rows=d.num_item_rows,
            observed=observed,
        ))
    return out[0], out[1], out[2], tiny_queries


def sample_batch(d: Dataset, sizes: tuple[int, int, int, int],
                 rng: np.random.Generator) -> BatchSample:
    """Draw the pair batch B and per-query sub-batches for one iteration.

    All draws are uniform without replacement; requested sizes are capped
    at the source sizes.  Queries missing a group get an empty sub-batch
    for it and are flagged ``fairness_skipped``.
    """
    n_pairs, n_q, n_a, n_b = sizes
    if min(sizes) < 1:
        raise ConfigurationError("batch sizes must be >= 1")
    qpos_all, ipos_all = d._pairs()
    total = len(qpos_all)
    if total == 0:
        raise EmptyDatasetError("cannot sample from an empty dataset")
    take = min(n_pairs, total)
    sel = rng.choice(total, size=take, replace=False)
    pair_qpos = qpos_all[sel]
    pair_ipos = ipos_all[sel]

    per_query: dict[int, QuerySubBatch] = {}
    for qp in np.unique(pair_qpos):
        q = d.queries[qp]
        items = rng.choice(q.num_items, size=min(n_q, q.num_items), replace=False)
        a_all = q.group_positions(GROUP_A)
        b_all = q.group_positions(GROUP_B)
        skipped = len(a_all) == 0 or len(b_all) == 0
        ga = (rng.choice(a_all, size=min(n_a, len(a_all)), replace=False)
              if len(a_all) else np.zeros(0, dtype=np.int64))
        gb = (rng.choice(b_all, size=min(n_b, len(b_all)), replace=False)
              if len(b_all) else np.zeros(0, dtype=np.int64))
        per_query[int(qp)] = QuerySubBatch(
            items=np.asarray(items, dtype=np.int64),
            group_a=np.asarray(ga, dtype=np.int64),
            group_b=np.asarray(gb, dtype=np.int64),
            fairness_skipped=skipped,
        )
    return BatchSample(pair_qpos=pair_qpos, pair_ipos=pair_ipos, per_query=per_query)
