"""Nearest-neighbor machinery: static kd-tree, incremental kd-tree, oracle."""

from .brute import BruteForceIndex
from .ikd_tree import IncrementalKdTree
from .static_kdtree import StaticKdTree

__all__ = ["BruteForceIndex", "IncrementalKdTree", "StaticKdTree"]
