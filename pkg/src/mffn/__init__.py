"""Multi-view feature fusion network for camouflaged object detection."""

__version__ = "0.1.0"
