"""Active lattice gases: exact stochastic simulation, hydrodynamic limits and their analysis."""

__version__ = "0.1.0"
