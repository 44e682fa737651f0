"""Budgeted categorical embeddings with shared-table multiplexing.

Subpackages cover the seeded hash families, the signed-sum sketch and
its closed-form estimator moments, compressed embedding table schemes
under a parameter budget, a small trainable model with exact gradient
decomposition, dataset ingestion, ranking metrics, and the sweep
harness behind the ``embmux`` command line tool.
"""

from __future__ import annotations

__version__ = "0.1.0"
