"""Cross-validation fold plans: plain k-fold and actor-disjoint k-fold."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..exceptions import ConfigError, DataError
from ..numcore import make_rng

MODES = ("actor_split", "standard")


@dataclass
class FoldPlan:
    k: int
    mode: str
    seed: int
    assignment: dict  # sample id -> fold index

    def test_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f != fold]

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes

    def to_dict(self) -> dict:
        return {"k": self.k, "mode": self.mode, "seed": self.seed, "assignment": dict(self.assignment)}

    @classmethod
    def from_dict(cls, d) -> "FoldPlan":
        try:
            plan = cls(int(d["k"]), d["mode"], int(d["seed"]), {str(k): int(v) for k, v in d["assignment"].items()})
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid fold plan: {exc}") from None
        if plan.mode not in MODES:
            raise DataError(f"invalid fold plan mode {plan.mode!r}")
        return plan

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FoldPlan":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise DataError(f"{path}: fold plan not found") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from None


def _records(source):
    samples = getattr(source, "samples", source)
    return [(s.id, getattr(s, "group", getattr(s, "group_id", ""))) for s in samples]


def make_folds(source, k: int = 10, mode: str = "actor_split", seed: int = 0) -> FoldPlan:
    """Assign every sample of a manifest (or sample list) to one of ``k`` folds.

    ``standard`` shuffles samples and deals them round-robin. ``actor_split``
    shuffles distinct group ids and deals groups round-robin, so every sample
    of an actor lands in the same fold.
    """
    if mode not in MODES:
        raise ConfigError(f"fold mode must be one of {MODES}, got {mode!r}")
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    records = _records(source)
    rng = make_rng(seed, "folds", mode)
    if mode == "standard":
        if len(records) < k:
            raise DataError(f"{len(records)} samples cannot fill {k} folds")
        order = rng.permutation(len(records))
        return FoldPlan(k, mode, seed, {records[i][0]: pos % k for pos, i in enumerate(order)})
    if any(not g for _, g in records):
        raise DataError("actor_split needs a non-empty group id on every sample")
    groups = sorted({g for _, g in records})
    if len(groups) < k:
        raise DataError(f"actor_split needs at least {k} distinct groups, found {len(groups)}")
    group_fold = {groups[i]: pos % k for pos, i in enumerate(rng.permutation(len(groups)))}
    return FoldPlan(k, mode, seed, {sid: group_fold[g] for sid, g in records})


def check_group_disjoint(plan: FoldPlan, source) -> None:
    """Raise if any fold shares a group between its train and test portions."""
    groups = dict(_records(source))
    for fold in range(plan.k):
        test = {groups[s] for s in plan.test_ids(fold)}
        train = {groups[s] for s in plan.train_ids(fold)}
        shared = test & train
        if shared:
            raise DataError(f"fold {fold}: groups {sorted(shared)} appear in both train and test")
