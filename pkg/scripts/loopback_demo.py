#!/usr/bin/env python3
"""Full loopback demo: start a synthetic-scene server, stream frames through
the wire protocol, and write stereo composited frames plus the latency
report to an output directory.

Usage: python scripts/loopback_demo.py [out_dir]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cookar.backends import OracleProvider, SceneSpec, Server
from cookar.overlay import PRESET_PREFERRED
from cookar.pipeline import RunConfig, StereoConfig, run


def main() -> None:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("loopback_out")
    spec = SceneSpec(seed=2024, tool_count=4, width=640, height=480)
    with Server(OracleProvider(spec), port=0) as server:
        print(f"oracle server on 127.0.0.1:{server.port}")
        result = run(
            RunConfig(
                source="synthetic",
                backend="remote",
                scene=spec,
                endpoint=("127.0.0.1", server.port),
                frame_count=30,
                out_dir=out_dir,
                style=PRESET_PREFERRED,
                stereo=StereoConfig(focal_px=500.0, baseline_m=0.063),
                mode="pipelined",
            )
        )
    result.report.save(out_dir / "report.json")
    print(result.report.render())
    print(f"wrote {result.frames_presented} stereo frame pairs to {out_dir}/")


if __name__ == "__main__":
    main()
