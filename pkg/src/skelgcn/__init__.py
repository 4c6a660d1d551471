"""Skeleton action recognition with filter-refined dynamic topologies and
gate-selective graph convolution, on a self-contained float64 autodiff core."""

from .autodiff import Tensor, finite_diff_check
from .skeleton import (
    SkeletonGraph,
    build_skeleton,
    gaussian_filter,
    load_builtin_skeleton,
    shortest_path_distances,
)

__all__ = [
    "Tensor",
    "finite_diff_check",
    "SkeletonGraph",
    "build_skeleton",
    "gaussian_filter",
    "load_builtin_skeleton",
    "shortest_path_distances",
]
