"""Per-stage latency recording and report generation.

Stage names, in report order: capture, stream_to_server, inference,
stream_back, render; end-to-end is tracked separately per frame.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

STAGES = ("capture", "stream_to_server", "inference", "stream_back", "render")
END_TO_END = "end_to_end"

#: Slack allowed between a frame's end-to-end time and its stage sum (us).
MEASUREMENT_SLACK_US = 1000


@dataclass
class StageTiming:
    frame_id: int
    stage_us: dict[str, int] = field(default_factory=dict)
    end_to_end_us: int = 0

    def stage_sum_us(self) -> int:
        return sum(self.stage_us.values())


@dataclass(frozen=True)
class StageStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float


@dataclass(frozen=True)
class LatencyReport:
    stages: dict[str, StageStats]
    end_to_end_ms: float
    fps: float
    frames: int
    drops: int
    mode: str
    incomplete: bool = False

    def residual_ms(self) -> float:
        """End-to-end minus the stage-mean sum: time the five stages do not
        account for (queue waits, bookkeeping)."""
        return self.end_to_end_ms - sum(s.mean_ms for s in self.stages.values())

    def to_dict(self) -> dict:
        d = {
            "stages": {
                name: {"mean_ms": s.mean_ms, "p50_ms": s.p50_ms, "p95_ms": s.p95_ms}
                for name, s in self.stages.items()
            },
            "end_to_end_ms": self.end_to_end_ms,
            "fps": self.fps,
            "frames": self.frames,
            "drops": self.drops,
            "mode": self.mode,
        }
        if self.incomplete:
            d["incomplete"] = True
        return d

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    def render(self) -> str:
        lines = [
            f"{'stage':<18} {'mean ms':>9} {'p50 ms':>9} {'p95 ms':>9}",
        ]
        for name in STAGES:
            s = self.stages[name]
            lines.append(f"{name:<18} {s.mean_ms:>9.2f} {s.p50_ms:>9.2f} {s.p95_ms:>9.2f}")
        lines.append(f"{'end-to-end':<18} {self.end_to_end_ms:>9.2f}")
        lines.append(f"{'residual':<18} {self.residual_ms():>9.2f}")
        lines.append(
            f"frames {self.frames}  drops {self.drops}  fps {self.fps:.2f}  mode {self.mode}"
            + ("  [INCOMPLETE]" if self.incomplete else "")
        )
        return "\n".join(lines)


def quantile_nearest_rank(sorted_ms: list[float], q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th smallest sample."""
    n = len(sorted_ms)
    if n == 0:
        return 0.0
    rank = max(1, math.ceil(q * n))
    return sorted_ms[min(rank, n) - 1]


class Profiler:
    """Collects per-(frame, stage) durations; safe for concurrent workers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._timings: dict[int, StageTiming] = {}

    def record_stage(self, frame_id: int, stage: str, duration_us: int) -> None:
        if stage not in STAGES and stage != END_TO_END:
            raise ValueError(f"unknown stage {stage!r}")
        with self._lock:
            timing = self._timings.setdefault(frame_id, StageTiming(frame_id=frame_id))
            if stage == END_TO_END:
                if timing.end_to_end_us:
                    raise ValueError(f"duplicate end-to-end record for frame {frame_id}")
                timing.end_to_end_us = int(duration_us)
                return
            if stage in timing.stage_us:
                raise ValueError(f"duplicate record for frame {frame_id} stage {stage!r}")
            timing.stage_us[stage] = int(duration_us)

    def timings(self) -> list[StageTiming]:
        with self._lock:
            return sorted(self._timings.values(), key=lambda t: t.frame_id)


def latency_report(
    timings: list[StageTiming],
    mode: str,
    drops: int = 0,
    wall_s: Optional[float] = None,
    incomplete: bool = False,
) -> LatencyReport:
    """Statistics over recorded timings; fps is frames over wall time when
    given, else frames over summed end-to-end time."""
    frames = len(timings)
    stages: dict[str, StageStats] = {}
    for name in STAGES:
        vals = sorted(t.stage_us.get(name, 0) / 1000.0 for t in timings)
        if vals:
            stages[name] = StageStats(
                mean_ms=sum(vals) / len(vals),
                p50_ms=quantile_nearest_rank(vals, 0.50),
                p95_ms=quantile_nearest_rank(vals, 0.95),
            )
        else:
            stages[name] = StageStats(0.0, 0.0, 0.0)
    e2e_vals = [t.end_to_end_us / 1000.0 for t in timings]
    mean_e2e = sum(e2e_vals) / len(e2e_vals) if e2e_vals else 0.0
    if wall_s is None:
        wall_s = sum(e2e_vals) / 1000.0
    fps = frames / wall_s if wall_s > 0 else 0.0
    return LatencyReport(
        stages=stages,
        end_to_end_ms=mean_e2e,
        fps=fps,
        frames=frames,
        drops=drops,
        mode=mode,
        incomplete=incomplete,
    )
