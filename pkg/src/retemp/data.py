"""Temporal KG datasets: loading, inverse augmentation, snapshots, statistics, synthetic data.

Facts are kept as int64 arrays with columns ``subject, relation, object,
timestamp, phase``; phase is 0 for original facts and 1 for inverse facts
added by :func:`add_inverses`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from retemp.errors import DatasetError

ORIGINAL, INVERSE = 0, 1
SPLITS = ("train", "valid", "test")
PATTERNS = ("cyclic-deterministic", "uniform-random", "leak-probe", "static-repeat")


class Quadruplet(NamedTuple):
    subject: int
    relation: int
    object: int
    timestamp: int
    phase: int = ORIGINAL


def _facts(rows=()) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    return arr.reshape(-1, 5) if arr.size else np.zeros((0, 5), dtype=np.int64)


@dataclass
class TkgDataset:
    num_entities: int
    num_relations: int
    num_snapshots: int
    train: np.ndarray = field(default_factory=_facts)
    valid: np.ndarray = field(default_factory=_facts)
    test: np.ndarray = field(default_factory=_facts)
    augmented: bool = False
    name: str = ""

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def all_facts(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    def quadruplets(self, split: str) -> list[Quadruplet]:
        return [Quadruplet(*map(int, row)) for row in self.split(split)]

    def timestamps(self, split: str) -> np.ndarray:
        return np.unique(self.split(split)[:, 3])

    def original(self) -> "TkgDataset":
        """The dataset with inverse facts stripped."""
        keep = {s: getattr(self, s)[getattr(self, s)[:, 4] == ORIGINAL] for s in SPLITS}
        return replace(self, augmented=False, **keep)


@dataclass
class Snapshot:
    """All (augmented) edges at one timestamp plus a canonical neighbor index.

    ``src``/``rel``/``dst`` list the edges sorted by (dst, src, rel); messages
    flow from ``src`` into the aggregation target ``dst``.
    """

    timestamp: int
    edges: np.ndarray
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray

    @classmethod
    def from_edges(cls, timestamp: int, edges) -> "Snapshot":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
        s = edges[order]
        return cls(timestamp, edges, s[:, 0].copy(), s[:, 1].copy(), s[:, 2].copy())

    def neighbors(self, entity: int) -> list[tuple[int, int]]:
        """N_t^e: (neighbor entity, relation) pairs whose messages reach ``entity``."""
        lo, hi = np.searchsorted(self.dst, [entity, entity + 1])
        return list(zip(self.src[lo:hi].tolist(), self.rel[lo:hi].tolist()))

    def __len__(self) -> int:
        return len(self.edges)


@dataclass
class DatasetStatistics:
    num_entities: int
    num_relations: int
    num_facts: int
    num_snapshots: int
    snapshots_train: int
    snapshots_valid: int
    snapshots_test: int
    facts_per_snapshot: float
    repetition_pct: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


# ---------------------------------------------------------------- loading


def _read_stat(path: Path) -> tuple[int, int]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    tokens = path.read_text().split()
    try:
        return int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError):
        raise DatasetError(f"{path}: first line must hold NUM_ENTITIES NUM_RELATIONS") from None


def _read_split(path: Path, num_entities: int, num_relations: int) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                s, r, o, t = (int(x) for x in parts[:4])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: expected 4 integer columns") from None
            if not 0 <= s < num_entities or not 0 <= o < num_entities:
                raise DatasetError(f"{path}:{lineno}: entity id out of range "
                                   f"(declared {num_entities} entities)")
            if not 0 <= r < num_relations:
                raise DatasetError(f"{path}:{lineno}: relation id {r} out of range "
                                   f"(declared {num_relations} relations)")
            rows.append((s, r, o, t))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 4)


def infer_interval(raw_timestamps: np.ndarray) -> int:
    """GCD of the gaps between successive distinct raw timestamps (1 if undetermined)."""
    uniq = np.unique(raw_timestamps)
    if len(uniq) < 2:
        return 1
    return int(np.gcd.reduce(np.diff(uniq)))


def load_dataset(directory, interval: int | None = None) -> TkgDataset:
    """Read ``train/valid/test.txt`` and ``stat.txt`` from ``directory``.

    Raw timestamps are mapped to contiguous snapshot indices
    ``(raw - min_raw) / interval``; the interval defaults to the GCD of gaps.
    """
    directory = Path(directory)
    num_entities, num_relations = _read_stat(directory / "stat.txt")
    raw = {s: _read_split(directory / f"{s}.txt", num_entities, num_relations) for s in SPLITS}
    all_t = np.concatenate([raw[s][:, 3] for s in SPLITS])
    if all_t.size == 0:
        raise DatasetError(f"{directory}: dataset has no facts")
    step = interval or infer_interval(all_t)
    origin = int(all_t.min())
    if np.any((all_t - origin) % step):
        raise DatasetError(f"{directory}: timestamps are not multiples of interval {step}")
    splits = {}
    for s in SPLITS:
        f = raw[s]
        t = (f[:, 3] - origin) // step
        splits[s] = np.column_stack([f[:, :3], t, np.full(len(f), ORIGINAL)]).astype(np.int64)
    _check_chronological(splits)
    num_snapshots = int((all_t.max() - origin) // step) + 1
    return TkgDataset(num_entities, num_relations, num_snapshots, augmented=False,
                      name=directory.name, **splits)


def _check_chronological(splits: dict[str, np.ndarray]) -> None:
    spans = [(s, splits[s][:, 3].min(), splits[s][:, 3].max()) for s in SPLITS if len(splits[s])]
    for (a, _, a_max), (b, b_min, _) in zip(spans, spans[1:]):
        if not a_max < b_min:
            raise DatasetError(f"splits are not chronological: {a} ends at snapshot {a_max}, "
                               f"{b} starts at {b_min}")


def write_dataset(dataset: TkgDataset, directory) -> None:
    """Write the original facts in the public text format (plus stat.txt)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    orig = dataset.original()
    (directory / "stat.txt").write_text(f"{dataset.num_entities} {dataset.num_relations}\n")
    for s in SPLITS:
        lines = "".join(f"{a}\t{b}\t{c}\t{d}\n" for a, b, c, d in orig.split(s)[:, :4].tolist())
        (directory / f"{s}.txt").write_text(lines)


# ---------------------------------------------------------------- augmentation


def inverse_facts(facts: np.ndarray, num_relations: int) -> np.ndarray:
    inv = facts[:, [2, 1, 0, 3, 4]].copy()
    inv[:, 1] += num_relations
    inv[:, 4] = INVERSE
    return inv


def add_inverses(dataset: TkgDataset) -> TkgDataset:
    """Append (o, r+|R|, s, t) for every fact (s, r, o, t), tagged as inverse."""
    if dataset.augmented:
        raise DatasetError("dataset is already augmented with inverse facts")
    splits = {s: np.concatenate([f, inverse_facts(f, dataset.num_relations)])
              for s in SPLITS for f in [dataset.split(s)]}
    return replace(dataset, augmented=True, **splits)


def build_snapshots(dataset: TkgDataset) -> list[Snapshot]:
    """One snapshot per timestamp over the whole augmented fact set; empty ones kept."""
    if not dataset.augmented:
        raise DatasetError("build_snapshots needs an augmented dataset (call add_inverses)")
    facts = dataset.all_facts()
    order = np.argsort(facts[:, 3], kind="stable")
    facts = facts[order]
    bounds = np.searchsorted(facts[:, 3], np.arange(dataset.num_snapshots + 1))
    return [Snapshot.from_edges(t, facts[bounds[t]:bounds[t + 1], :3])
            for t in range(dataset.num_snapshots)]


# ---------------------------------------------------------------- statistics


def repetition_proportion(dataset: TkgDataset) -> float | None:
    """Percent of original test facts that also occur one timestamp earlier."""
    orig = dataset.original()
    test = orig.test
    if len(test) == 0:
        return None
    seen = {tuple(row) for row in orig.all_facts()[:, :4].tolist()}
    hits = sum((s, r, o, t - 1) in seen for s, r, o, t in test[:, :4].tolist())
    return 100.0 * hits / len(test)


def compute_statistics(dataset: TkgDataset) -> DatasetStatistics:
    orig = dataset.original()
    num_facts = len(orig.all_facts())
    return DatasetStatistics(
        num_entities=dataset.num_entities,
        num_relations=dataset.num_relations,
        num_facts=num_facts,
        num_snapshots=dataset.num_snapshots,
        snapshots_train=len(orig.timestamps("train")),
        snapshots_valid=len(orig.timestamps("valid")),
        snapshots_test=len(orig.timestamps("test")),
        facts_per_snapshot=round(num_facts / dataset.num_snapshots, 1),
        repetition_pct=repetition_proportion(orig),
    )


# ---------------------------------------------------------------- synthetic data


def chronological_split(num_timestamps: int) -> tuple[int, int, int]:
    """80/10/10 split of snapshot counts."""
    n_train = num_timestamps * 8 // 10
    n_valid = max(1, num_timestamps // 10)
    n_test = num_timestamps - n_train - n_valid
    if n_train < 2 or n_test < 1:
        raise DatasetError(f"{num_timestamps} timestamps are too few for an 80/10/10 split")
    return n_train, n_valid, n_test


def generate_synthetic(seed: int, num_entities: int, num_relations: int, num_timestamps: int,
                       pattern: str = "cyclic-deterministic",
                       facts_per_snapshot: int | None = None) -> TkgDataset:
    """Deterministic synthetic temporal KG (not augmented).

    Patterns:

    * ``cyclic-deterministic``: at timestamp t every subject e (or a window of
      ``facts_per_snapshot`` subjects starting at ``t mod |E|``) has the fact
      (e, (e+t) mod |R|, (e+1) mod |E|). Objects are fixed; relations rotate.
    * ``uniform-random``: independent random facts, no structure to learn.
    * ``leak-probe``: random pairs of distinct entities per timestamp, every
      entity and (while facts <= |R|) every relation used at most once per
      timestamp. History carries no signal; a query's relation and the inverse
      relation on its answer identify each other, which only leaks when both
      phases share relation pools.
    * ``static-repeat``: one random fact set repeated at every timestamp.
    """
    if num_entities < 2:
        raise DatasetError(f"need at least 2 entities, got {num_entities}")
    if num_relations < 1:
        raise DatasetError(f"need at least 1 relation, got {num_relations}")
    if pattern not in PATTERNS:
        raise DatasetError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    n_train, n_valid, _ = chronological_split(num_timestamps)
    rng = np.random.default_rng(seed)
    E, R = num_entities, num_relations
    rows: list[tuple[int, int, int, int]] = []
    if pattern == "static-repeat":
        n = facts_per_snapshot or E
        base = _random_facts(rng, E, R, n)
        rows = [(s, r, o, t) for t in range(num_timestamps) for s, r, o in base]
    for t in range(num_timestamps if pattern != "static-repeat" else 0):
        if pattern == "cyclic-deterministic":
            width = facts_per_snapshot or E
            for j in range(width):
                e = (t + j) % E
                rows.append((e, (e + t) % R, (e + 1) % E, t))
        elif pattern == "uniform-random":
            rows.extend((s, r, o, t) for s, r, o in _random_facts(rng, E, R, facts_per_snapshot or E))
        else:
            n = min(facts_per_snapshot or R, E // 2)
            perm = rng.permutation(E)
            rel = rng.permutation(R)[:n] if n <= R else rng.integers(0, R, size=n)
            rows.extend((int(perm[i]), int(rel[i]), int(perm[n + i]), t) for i in range(n))
    facts = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    facts = np.column_stack([facts, np.zeros(len(facts), dtype=np.int64)])
    t = facts[:, 3]
    return TkgDataset(
        num_entities=E, num_relations=R, num_snapshots=num_timestamps,
        train=facts[t < n_train], valid=facts[(t >= n_train) & (t < n_train + n_valid)],
        test=facts[t >= n_train + n_valid], name=f"synthetic-{pattern}-{seed}",
    )


def _random_facts(rng: np.random.Generator, E: int, R: int, n: int) -> list[tuple[int, int, int]]:
    s = rng.integers(0, E, size=n)
    o = (s + rng.integers(1, E, size=n)) % E
    r = rng.integers(0, R, size=n)
    seen, out = set(), []
    for triple in zip(s.tolist(), r.tolist(), o.tolist()):
        if triple not in seen:
            seen.add(triple)
            out.append(triple)
    return out


def expected_random_mrr(num_candidates: int) -> float:
    """Expected reciprocal rank when the gold rank is uniform over the candidates."""
    return math.fsum(1 / r for r in range(1, num_candidates + 1)) / num_candidates
