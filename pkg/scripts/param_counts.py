"""Print parameter counts per component for a given dataset size."""

import argparse

from retemp.config import TrainConfig
from retemp.model import ReTemp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--entities", type=int, default=7128)
    ap.add_argument("--relations", type=int, default=230)
    ap.add_argument("--timestamps", type=int, default=365)
    ap.add_argument("--dim", type=int, default=200)
    args = ap.parse_args()
    counts = ReTemp(args.entities, args.relations, args.timestamps,
                    TrainConfig(dim=args.dim)).parameter_counts()
    for key, value in counts.items():
        if isinstance(value, int):
            print(f"{key:<10} {value:>12,}")
    for key, value in counts["formula"].items():
        print(f"formula {key}: {value:,}")
    for note in counts["notes"]:
        print(f"note: {note}")


if __name__ == "__main__":
    main()
