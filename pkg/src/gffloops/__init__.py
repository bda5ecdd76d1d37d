"""Lattice GFF interfaces and the Brownian laws of their extremal distances.

The package samples discrete Gaussian free fields on lattice disks and
annuli, extracts metric-graph interface loops (sign-cluster boundaries,
first-passage sets, iterated two-valued-set loops), measures extremal
distance and conformal radius of those loops, and compares them with exact
Brownian last-passage and hitting-time laws.
"""

from .closed_form_laws import GAP, LAMBDA

__all__ = ["GAP", "LAMBDA"]
__version__ = "0.1.0"
