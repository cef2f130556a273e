"""Sweep the history length k on a synthetic pattern; optionally ensemble the runs."""

import argparse

from retemp.config import TrainConfig
from retemp.data import PATTERNS, generate_synthetic
from retemp.model import ReTemp
from retemp.train import POOLINGS, TemporalGraph, evaluate, evaluate_many, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pattern", choices=PATTERNS, default="cyclic-deterministic")
    ap.add_argument("--lengths", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--pooling", choices=POOLINGS, default="avg")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    graph = TemporalGraph.from_dataset(generate_synthetic(args.seed, 20, 4, 30, args.pattern))
    models = []
    for k in args.lengths:
        cfg = TrainConfig(dim=32, history_length=k, channels=8, epochs=args.epochs,
                          patience=10, seed=args.seed)
        model = fit(ReTemp(20, 4, 30, cfg), graph).to_model()
        models.append(model)
        r = evaluate(model, graph, "test")
        print(f"k={k}: MRR {r.mrr:.4f}  H@1 {r.hits1:.4f}  H@10 {r.hits10:.4f}")
    r = evaluate_many(models, graph, "test", args.pooling)
    print(f"ensemble ({args.pooling}): MRR {r.mrr:.4f}  H@1 {r.hits1:.4f}  H@10 {r.hits10:.4f}")


if __name__ == "__main__":
    main()
