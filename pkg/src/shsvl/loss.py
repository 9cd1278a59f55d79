"""Packet-loss processes feeding lost-edge sets to the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import WeightedDigraph

KINDS = ("none", "sync", "edge", "script")


class LossModelError(ValueError):
    pass


@dataclass(frozen=True)
class LossModel:
    """One of ``none``, ``sync`` (network-wide), ``edge`` (per edge) or ``script``.

    ``schedule`` maps a step index to the (receiver, sender) pairs lost at
    that step; it is only used by the ``script`` kind.
    """

    kind: str = "none"
    p_loss: float = 0.0
    schedule: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LossModelError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.p_loss <= 1.0:
            raise LossModelError(f"loss probability {self.p_loss} outside [0, 1]")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def sync(cls, p):
        return cls("sync", float(p))

    @classmethod
    def edgewise(cls, p):
        return cls("edge", float(p))

    @classmethod
    def scripted(cls, schedule):
        sched = {int(k): frozenset((int(i), int(j)) for i, j in v) for k, v in schedule.items()}
        return cls("script", 0.0, sched)

    def validate(self, g: WeightedDigraph) -> None:
        if self.kind != "script":
            return
        allowed = set(g.edge_pairs) | {(i, i) for i in range(g.n)}
        for k, lost in self.schedule.items():
            if k < 1:
                raise LossModelError(f"scripted loss at step {k}; step 0 always delivers")
            bad = set(lost) - allowed
            if bad:
                raise LossModelError(f"scripted loss at step {k} names non-edges {sorted(bad)}")

    def describe(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "script":
            return "script"
        return f"{self.kind}:{self.p_loss:g}"


def parse_loss(spec: str) -> LossModel:
    """Parse ``none``, ``sync:<p>``, ``edge:<p>`` or ``script:<path>``."""
    kind, _, arg = spec.partition(":")
    if kind == "none" and not arg:
        return LossModel.none()
    if kind in ("sync", "edge"):
        try:
            p = float(arg)
        except ValueError:
            raise LossModelError(f"bad loss probability in {spec!r}") from None
        return LossModel(kind, p)
    if kind == "script" and arg:
        return load_script(arg)
    raise LossModelError(f"cannot parse loss model {spec!r}")


def load_script(path) -> LossModel:
    """Rows ``k i j`` (1-indexed nodes): edge ``(i, j)`` is lost at step ``k``."""
    sched: dict[int, set] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise LossModelError(f"{path}:{lineno}: expected 'k i j'")
        k, i, j = (int(p) for p in parts)
        sched.setdefault(k, set()).add((i - 1, j - 1))
    return LossModel.scripted(sched)


def all_pairs(g: WeightedDigraph) -> frozenset:
    return frozenset(g.edge_pairs) | frozenset((i, i) for i in range(g.n))


def sample_lost_edges(model: LossModel, k: int, rng: np.random.Generator,
                      g: WeightedDigraph) -> frozenset:
    """Lost (receiver, sender) pairs at step ``k``.

    Step 0 always delivers.  ``sync`` loses every edge and every self pair
    together; ``edge`` draws one Bernoulli per edge in canonical order and
    never loses self pairs.
    """
    if k < 1 or model.kind == "none":
        return frozenset()
    if model.kind == "script":
        return frozenset(model.schedule.get(k, ()))
    if model.kind == "sync":
        return all_pairs(g) if rng.random() < model.p_loss else frozenset()
    draws = rng.random(g.m) < model.p_loss
    return frozenset(e for e, lost in zip(g.edge_pairs, draws) if lost)
