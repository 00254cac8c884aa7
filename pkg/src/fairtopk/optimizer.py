"""The stochastic training loop: momentum descent on G1 + C * G2.

One step draws the pair batch and per-query sub-batches, refreshes the
moving-average estimator states, assembles the two stochastic gradients,
folds them into the momentum buffer z and takes a parameter step.  Mode
switches select the ablations: ``fairness_mode = none`` (or C = 0) is
color-blind training, ``full_list`` pairs the ranking loss with the
whole-list disparity, and ``top_k`` is the full method.
"""

from __future__ import annotations

import csv as _csv
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import Dataset, sample_batch
from .errors import ConfigurationError, NonFiniteGradientError
from .fairness import (
    CONSTANT_ONE,
    FairnessEstimatorTable,
    SmoothIndicator,
    g2_estimate,
)
from .lambda_solver import (
    LambdaState,
    SmoothingParams,
    init_lambda_state,
    state_step,
)
from .model import FactorizationScorer, ScoringModel
from .rank_losses import (
    LossVariant,
    PairEstimatorTable,
    RankLossKind,
    dataset_loss,
    g1_estimate,
)

FAIRNESS_MODES = ("none", "full_list", "top_k")
LR_SCHEDULES = ("constant", "step_decay")


@dataclass
class TrainConfig:
    k: int = 10
    fair_weight: float = 0.0           # the accuracy/fairness trade-off C
    loss: str = "ndcg"                 # "ndcg" | "listnet"
    margin: float = 1.0                # squared-hinge margin
    fairness_mode: str = "top_k"       # "none" | "full_list" | "top_k"
    gamma0: float = 0.3
    gamma1: float = 0.2
    gamma2: float = 0.2
    gamma3: float = 0.2
    gamma4: float = 0.5
    gamma5: float = 0.9
    eta0: float = 1e-3
    eta1: float = 4e-4
    tau1: float = 1e-2
    tau2: float = 1e-4
    eps: float = 0.5
    tau_psi: float = 0.1
    batch_pairs: int = 256
    batch_items: int = 32
    batch_a: int = 16
    batch_b: int = 16
    epochs: int = 10
    seed: int = 0
    lr_schedule: str = "constant"      # "constant" | "step_decay"
    g2_mode: str = "simplified"        # "simplified" | "full_implicit"
    log_every: int = 100

    def validate(self) -> None:
        if self.fairness_mode not in FAIRNESS_MODES:
            raise ConfigurationError(f"unknown fairness_mode {self.fairness_mode!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.loss not in ("ndcg", "listnet"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if self.g2_mode not in ("simplified", "full_implicit"):
            raise ConfigurationError(f"unknown g2_mode {self.g2_mode!r}")
        if self.fairness_mode == "none" and self.fair_weight > 0:
            raise ConfigurationError("fairness_mode=none conflicts with a positive fair_weight")
        if self.fair_weight < 0:
            raise ConfigurationError("fair_weight must be >= 0")
        for name in ("gamma0", "gamma1", "gamma2", "gamma3", "gamma4", "gamma5"):
            g = getattr(self, name)
            if not 0.0 <= g <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.eta0 < 0 or self.eta1 < 0:
            raise ConfigurationError("step sizes must be >= 0")
        if min(self.batch_pairs, self.batch_items, self.batch_a, self.batch_b) < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")

    def loss_kind(self) -> RankLossKind:
        variant = LossVariant.NDCG if self.loss == "ndcg" else LossVariant.LISTNET
        return RankLossKind(variant=variant, margin=self.margin)

    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(tau1=self.tau1, tau2=self.tau2, eps=self.eps, k=self.k)

    def fairness_active(self) -> bool:
        # C = 0 skips the whole fairness machinery, whatever the mode says.
        return self.fairness_mode != "none" and self.fair_weight > 0.0


def config_to_file(cfg: TrainConfig, path: str) -> None:
    with open(path, "w") as fh:
        for f in fields(cfg):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")


def config_from_file(path: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse the flat key=value config format; unknown keys are errors."""
    cfg = base if base is not None else TrainConfig()
    casts = {f.name: type(getattr(cfg, f.name)) for f in fields(TrainConfig)}
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in casts:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                overrides[key] = casts[key](raw.strip())
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad value for {key}")
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


@dataclass
class MomentumState:
    z: np.ndarray
    gamma: float

    def update(self, grad: np.ndarray) -> None:
        self.z *= 1.0 - self.gamma
        self.z += self.gamma * grad


@dataclass
class TrainerState:
    pair_table: PairEstimatorTable
    fair_table: FairnessEstimatorTable
    lambda_states: dict[int, LambdaState]
    momentum: MomentumState

    @classmethod
    def fresh(cls, cfg: TrainConfig, num_params: int) -> "TrainerState":
        return cls(
            pair_table=PairEstimatorTable(gamma=cfg.gamma0),
            fair_table=FairnessEstimatorTable(
                gamma_a=cfg.gamma1, gamma_b=cfg.gamma2, gamma_g=cfg.gamma3),
            lambda_states={},
            momentum=MomentumState(z=np.zeros(num_params), gamma=cfg.gamma5),
        )


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)

    def append(self, **kwargs) -> None:
        if self.records and kwargs["step"] < self.records[-1]["step"]:
            raise ValueError("step indices must be monotone")
        self.records.append(kwargs)

    def to_csv(self, path: str) -> None:
        if not self.records:
            return
        keys = list(self.records[0].keys())
        with open(path, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.records)


def _check_finite(grad: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"non-finite values in {name}")


def train_step(model: ScoringModel, d: Dataset, cfg: TrainConfig,
               state: TrainerState, rng: np.random.Generator,
               lr_mult: float = 1.0) -> dict:
    """One full iteration: sample, estimate G1 (+ C * G2), momentum, step."""
    batch = sample_batch(
        d, (cfg.batch_pairs, cfg.batch_items, cfg.batch_a, cfg.batch_b), rng)
    g1 = g1_estimate(model, d, batch, cfg.loss_kind(), state.pair_table)
    _check_finite(g1, "G1")

    combined = g1
    if cfg.fairness_active():
        smoothing = cfg.smoothing()
        if cfg.fairness_mode == "full_list":
            psi: SmoothIndicator = CONSTANT_ONE
            for qp in batch.per_query:
                if qp not in state.lambda_states:
                    state.lambda_states[qp] = LambdaState(lam=0.0, s=1.0, v=0.0)
        else:
            psi = SmoothIndicator(temperature=cfg.tau_psi)
            for qp, sub in batch.per_query.items():
                if sub.fairness_skipped:
                    continue
                qg = d.queries[qp]
                if qp not in state.lambda_states:
                    scores = model.score_many(qg.query_index, qg.feature_idx[sub.items])
                    state.lambda_states[qp] = init_lambda_state(
                        scores, smoothing, qg.num_items, cfg.gamma4, cfg.eta0)
        g2 = g2_estimate(model, d, batch, cfg.k, state.fair_table,
                         state.lambda_states, psi, smoothing, mode=cfg.g2_mode)
        _check_finite(g2, "G2")
        if cfg.fairness_mode == "top_k":
            for qp, sub in batch.per_query.items():
                if sub.fairness_skipped:
                    continue
                qg = d.queries[qp]
                scores = model.score_many(qg.query_index, qg.feature_idx[sub.items])
                state_step(state.lambda_states[qp], scores, smoothing,
                           n_total=qg.num_items)
        combined = g1 + cfg.fair_weight * g2

    state.momentum.update(combined)
    _check_finite(state.momentum.z, "momentum z")
    model.params.values -= cfg.eta1 * lr_mult * state.momentum.z
    return {"z_norm": float(np.linalg.norm(state.momentum.z)),
            "num_pairs": batch.num_pairs}


@dataclass
class TrainResult:
    model: ScoringModel
    best_params: np.ndarray
    best_valid_ndcg: float
    trace: TrainTrace


def train(model: ScoringModel, train_d: Dataset, cfg: TrainConfig,
          valid_d: Dataset | None = None, protocol=None) -> TrainResult:
    """Run the full loop; returns the final model, the best-validation
    parameter snapshot and the logged trace."""
    from .evaluation import EvalProtocol, evaluate  # local import avoids a cycle

    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    state = TrainerState.fresh(cfg, len(model.params.values))
    steps_per_epoch = max(1, math.ceil(train_d.total_pairs / cfg.batch_pairs))
    total_steps = cfg.epochs * steps_per_epoch
    trace = TrainTrace()
    best_params = model.params.values.copy()
    best_ndcg = -np.inf
    if valid_d is not None and protocol is None:
        protocol = EvalProtocol(k_list=(cfg.k,), seed=cfg.seed)
    t0 = time.perf_counter()

    for step in range(total_steps):
        epoch = step // steps_per_epoch
        lr_mult = 1.0
        if cfg.lr_schedule == "step_decay" and epoch >= cfg.epochs / 2:
            lr_mult = 0.25
        metrics = train_step(model, train_d, cfg, state, rng, lr_mult=lr_mult)

        if step % cfg.log_every == 0 or step == total_steps - 1:
            loss_probe = Dataset(
                queries=train_d.queries[:min(20, train_d.num_queries)],
                item_index=train_d.item_index, item_groups=train_d.item_groups,
                num_query_rows=train_d.num_query_rows,
                num_item_rows=train_d.num_item_rows)
            record = {"step": step, "epoch": epoch, "z_norm": metrics["z_norm"],
                      "train_loss": dataset_loss(model, loss_probe, cfg.loss_kind()),
                      "valid_ndcg": float("nan"),
                      "valid_mae": float("nan"), "valid_mse": float("nan"),
                      "wall_time": time.perf_counter() - t0}
            if valid_d is not None and valid_d.num_queries:
                report = evaluate(model, valid_d, protocol)
                row = report[protocol.k_list[0]]
                record["valid_ndcg"] = row["ndcg_mean"]
                record["valid_mae"] = row["mae"]
                record["valid_mse"] = row["mse"]
                if row["ndcg_mean"] >= best_ndcg:
                    best_ndcg = row["ndcg_mean"]
                    best_params = model.params.values.copy()
            trace.append(**record)

    if best_ndcg == -np.inf:
        best_params = model.params.values.copy()
    return TrainResult(model=model, best_params=best_params,
                       best_valid_ndcg=float(best_ndcg), trace=trace)


def clone_model(model: FactorizationScorer) -> FactorizationScorer:
    return model.clone()
