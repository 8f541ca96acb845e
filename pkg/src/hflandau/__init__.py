"""Linearised and weakly nonlinear Hartree-Fock dynamics around translation-invariant equilibria.

Submodules are imported on demand so that thread caps set by the command line
take effect before numpy loads.
"""
__version__ = "0.1.0"
