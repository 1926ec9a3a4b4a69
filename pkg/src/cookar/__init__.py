"""Real-time affordance-segmentation pipeline: wire protocol, segmentation
backends, stereo overlay compositor, latency profiler, mask metrics, and
dataset curation tooling."""

__version__ = "0.1.0"
