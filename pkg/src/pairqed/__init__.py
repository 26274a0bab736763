"""Collective scattering of light from an atom pair in a driven optical cavity.

Dense open-system simulation of one or two two-level atoms coupled to a
single cavity mode: steady states, output photon rates, g2(tau), thermal and
optical-pumping imperfections, and the lattice-imaging geometry that fixes the
interatomic phase.
"""

__version__ = "0.1.0"
