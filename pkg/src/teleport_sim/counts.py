from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

PROJECTION_LABELS = ("+", "-", "L", "R", "1", "2")


@dataclass(frozen=True)
class CountTable:
    """Projection label -> count (integers when sampled, expectations in exact mode)."""

    counts: Mapping[str, float]
    total_cycles: int = 0
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        counts = {k: self.counts.get(k, 0) for k in PROJECTION_LABELS}
        unknown = set(self.counts) - set(PROJECTION_LABELS)
        if unknown:
            raise ValueError(f"unknown projection labels {sorted(unknown)}")
        if min(counts.values()) < 0:
            raise ValueError("counts must be >= 0")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "diagnostics", dict(self.diagnostics))

    def __getitem__(self, label: str) -> float:
        return self.counts[label]

    @property
    def total(self) -> float:
        return float(sum(self.counts.values()))

    def scaled(self, factor) -> "CountTable":
        return CountTable({k: v * factor for k, v in self.counts.items()},
                          self.total_cycles, self.diagnostics)

    def to_json(self) -> Dict:
        return {"counts": dict(self.counts), "total_cycles": self.total_cycles,
                "diagnostics": dict(self.diagnostics)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "CountTable":
        return cls(dict(obj["counts"]), int(obj.get("total_cycles", 0)),
                   dict(obj.get("diagnostics", {})))
