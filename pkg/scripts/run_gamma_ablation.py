"""Ablation of the fairness-estimator averaging weights.

Trains the top-K objective at a fixed trade-off weight while varying the
moving-average parameters gamma1 = gamma2 = gamma3, and prints one
(NDCG, MAE) frontier point per setting.

Usage:
    python3 scripts/run_gamma_ablation.py
"""

import argparse

from fairtopk.data import generate_synthetic, split
from fairtopk.evaluation import EvalProtocol, evaluate
from fairtopk.model import FactorizationScorer
from fairtopk.optimizer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gammas", default="0.2,0.6,1.0")
    ap.add_argument("--fair-weight", type=float, default=1000.0)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    d = generate_synthetic(200, 305, 0.3, 2.0, args.seed)
    train_d, _, test_d, _ = split(d, (0.8, 0.1, 0.1), seed=0)
    proto = EvalProtocol(k_list=(50,), seed=0)

    for gamma in (float(g) for g in args.gammas.split(",")):
        model = FactorizationScorer(d.num_query_rows, d.num_item_rows, 8,
                                    seed=args.seed)
        cfg = TrainConfig(k=50, loss="listnet", epochs=args.epochs, eta1=1.0,
                          fair_weight=args.fair_weight, seed=args.seed,
                          gamma1=gamma, gamma2=gamma, gamma3=gamma,
                          log_every=10_000)
        train(model, train_d, cfg, valid_d=None)
        row = evaluate(model, test_d, proto)[50]
        print(f"gamma={gamma:.1f}  ndcg={row['ndcg_mean']:.4f}  "
              f"mae={row['mae']:.2e}")


if __name__ == "__main__":
    main()
