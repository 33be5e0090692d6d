"""Desk-scale laboratory for Witten deformation on discretized closed manifolds.

Subpackages:

- ``exterior_core``: cell complexes, Hodge theory, exact Betti numbers
- ``clifford``: exterior-algebra Clifford operators and fiber identities
- ``oscillator``: discretized rescaled harmonic oscillator models
- ``geometry``: parametrized surfaces, Morse data, triangulation
- ``witten``: deformed differentials, spectral sweeps, instanton complexes
- ``thom_smale``: gradient flows, connection counts, Morse homology
- ``indices``: Poincare-Hopf, finite indices, Kervaire semicharacteristic
- ``cli``: scenario runner and acceptance suite front end
"""

__version__ = "0.1.0"
