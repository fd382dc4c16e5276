"""Simulation toolkit for electrically read DNA crossbar memories.

Layers, bottom to top: decoherent transport through single strands
(transport), per-strand I-V lookup tables (ivtable), nonlinear crossbar
readout with sneak paths (crossbar, nodal), Fermi-offset Monte Carlo
(montecarlo), and an image-storage benchmark (storage).  The cli module
fronts all of it.
"""

from xbar.runio import ARTIFACT_VERSION as __version__
