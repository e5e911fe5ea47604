"""Boundary Green-operator identities and imaginary-part inversion.

Library + CLI for the one-frequency algebraic relations between the real and
imaginary parts of the Helmholtz/Schrodinger boundary Green operator, their
verification at desk scale, and the reconstruction pipelines they enable:
real part from imaginary part by joint diagonalization with inertia-based
sign resolution, then potential and acoustic-coefficient recovery.
"""

__version__ = "0.1.0"
