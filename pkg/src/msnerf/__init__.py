"""Multi-scale neural radiance fields with graph-based camera pose refinement."""

__version__ = "0.1.0"
