"""Per-run metrics and their CSV trace format."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_HEADER = ("k", "regret", "cum_regret", "switches", "max_bonus", "reward")
META_PREFIX = "# meta: "


@dataclass
class RunMetrics:
    """Episode-level rows plus run aggregates.

    ``counters`` holds invariant/diagnostic tallies (optimism violations,
    monotonicity violations, ...). ``wall_time`` is excluded from equality so
    re-parsed traces compare equal to the in-memory run.
    """

    agent: str
    seed: int
    regret: np.ndarray
    switches: np.ndarray
    max_bonus: np.ndarray
    reward: np.ndarray
    var_k: float = 0.0
    counters: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        self.regret = np.asarray(self.regret, dtype=float)
        self.switches = np.asarray(self.switches, dtype=int)
        self.max_bonus = np.asarray(self.max_bonus, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, RunMetrics):
            return NotImplemented
        return (self.agent == other.agent and self.seed == other.seed
                and np.array_equal(self.regret, other.regret)
                and np.array_equal(self.switches, other.switches)
                and np.array_equal(self.max_bonus, other.max_bonus)
                and np.array_equal(self.reward, other.reward)
                and self.var_k == other.var_k and self.counters == other.counters)

    @property
    def K(self) -> int:
        return len(self.regret)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1]) if self.K else 0.0

    @property
    def total_switches(self) -> int:
        return int(self.switches[-1]) if self.K else 0

    def regret_at(self, k: int) -> float:
        return float(self.cum_regret[k - 1]) if k >= 1 else 0.0

    def sublinearity_ratio(self) -> float:
        half = self.regret_at(self.K // 2)
        return (self.final_regret - half) / half if half > 0 else float("nan")

    # trace io ------------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        meta = {"agent": self.agent, "seed": self.seed, "var_k": self.var_k,
                "counters": self.counters}
        buf.write(META_PREFIX + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        cum = self.cum_regret
        for i in range(self.K):
            w.writerow([i + 1, repr(float(self.regret[i])), repr(float(cum[i])),
                        int(self.switches[i]), repr(float(self.max_bonus[i])),
                        repr(float(self.reward[i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunMetrics":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(META_PREFIX):
            raise ValueError("trace is missing its meta line")
        meta = json.loads(lines[0][len(META_PREFIX):])
        reader = csv.reader(lines[1:])
        header = tuple(next(reader))
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        rows = list(reader)
        ks = [int(r[0]) for r in rows]
        if ks != list(range(1, len(rows) + 1)):
            raise ValueError("trace rows do not cover k = 1..K")
        col = lambda j, t=float: [t(r[j]) for r in rows]
        return cls(meta["agent"], meta["seed"], col(1), col(3, int), col(4), col(5),
                   var_k=meta["var_k"], counters=meta["counters"])

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path: str | Path) -> "RunMetrics":
        return cls.from_csv(Path(path).read_text())
