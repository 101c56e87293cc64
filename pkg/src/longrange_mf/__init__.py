"""Mean-field phase diagrams, infrared integrals and torus Monte Carlo for
long-range Potts and Blume-Capel models."""

__version__ = "0.1.0"
