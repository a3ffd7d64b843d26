"""Numerical laboratory for relative isoperimetric profiles in convex domains.

Builds a family of convex bodies obtained by cutting the product of a
circular cone with a line along the graph of a slowly decaying convex
profile function, and estimates relative isoperimetric profiles inside
them with voxel-based measures and volume-preserving local search.
"""

__version__ = "0.1.0"
