"""Tomography of matrix-valued Hamiltonians from transition amplitudes.

Subpackages by layer: ``matrix`` (hermitean/unitary toolkit), ``expcalc``
(Lie-algebraic exponential calculus), ``geometry`` (rays and chords),
``fields`` (Hamiltonian fields and phantoms), ``propagator`` (time-ordered
evolution), ``gauge`` (measurements and phase gauges), ``xray`` (line
transforms and Riesz potentials), ``reconstruction`` (inversion solvers),
``io`` and ``cli``.
"""

from .errors import CQTError

__version__ = "0.1.0"

__all__ = ["CQTError", "__version__"]
