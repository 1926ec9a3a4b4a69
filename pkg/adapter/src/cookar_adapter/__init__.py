"""Sidecar inference server: model plug-ins behind the affordance-streaming
wire protocol, with mask-to-polygon contour extraction."""

__version__ = "0.1.0"
