"""Verified tool calling: synthetic selection data, contrastive verification, call evaluation."""

__version__ = "0.1.0"
