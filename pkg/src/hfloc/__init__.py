"""Numerical checks for disordered Hartree-Fock operators on Z^d."""

__version__ = "0.1.0"
