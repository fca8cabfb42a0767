"""Dual-domain density estimation for tiny-object scenes.

A frequency branch built from fixed oriented filter banks and a spatial
branch built from dilated convolutions with channel attention are fused
into a single feature map, which a lightweight head decodes into a
non-negative object-density map.  Everything runs on numpy with explicit
forward/backward passes and a finite-difference gradient checker.
"""

__version__ = "0.1.0"
