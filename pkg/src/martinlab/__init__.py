"""Numerical potential theory for isotropic stable processes."""
from .geometry import Ball, BoundaryQuery, Box, Difference, Intersection, Point, Union, from_json
from .kernels import ProcessSpec
from .mc import Estimate, ReliabilityError

__version__ = "0.1.0"
