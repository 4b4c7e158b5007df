"""Desk-scale 2D jet-box simulator with online (MPO) and offline (CRR)
reinforcement learning, experience logging/relabeling, and analysis tools."""

__version__ = "0.1.0"
