"""Monge-Kantorovich workbench: exact discrete transport, c-convex analysis,
cost-curvature certification, semi-discrete Laguerre cells, and screening."""

__version__ = "0.1.0"
