#!/usr/bin/env python3
"""Serial vs pipelined throughput with the reference per-stage delays
(16.76 / 15.95 / 10.43 / 3.39 ms). Prints both reports and the speedup.

Usage: python scripts/latency_experiment.py [frames]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cookar.backends import SceneSpec
from cookar.pipeline import RunConfig, run

REFERENCE_DELAYS_MS = {
    "stream_to_server": 16.76,
    "inference": 15.95,
    "stream_back": 10.43,
    "render": 3.39,
}


def main() -> None:
    frames = int(sys.argv[1]) if len(sys.argv) > 1 else 60
    scene = SceneSpec(seed=7, tool_count=2, width=320, height=240)
    reports = {}
    for mode in ("serial", "pipelined"):
        result = run(
            RunConfig(
                source="synthetic",
                scene=scene,
                frame_count=frames,
                mode=mode,
                stage_delay_ms=REFERENCE_DELAYS_MS,
            )
        )
        reports[mode] = result.report
        print(f"--- {mode} ({frames} frames) ---")
        print(result.report.render())
        print()
    speedup = reports["pipelined"].fps / reports["serial"].fps
    print(f"pipelined speedup: {speedup:.2f}x "
          f"({reports['serial'].fps:.1f} -> {reports['pipelined'].fps:.1f} fps)")


if __name__ == "__main__":
    main()
