"""Simulator of dispersive qubit-based detection of an itinerant microwave photon.

Subpackage layout:

- ``linalg``     dense multipartite density-matrix algebra
- ``model``      physical parameters, Hamiltonian/dissipators, reflection spectra
- ``dynamics``   master-equation propagation, Ramsey gates, output-mode moments
- ``protocol``   full detection protocol, efficiency scans, parameter sweeps
- ``tomography`` quadrature POVMs, synthetic sampling, iterative MLE, Wigner
- ``cli``        command-line entry point
"""

__version__ = "0.1.0"
