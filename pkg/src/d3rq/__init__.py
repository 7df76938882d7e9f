"""Twin-critic categorical actor-critic for continuous control, with the
oracles and invariant suites used to check it."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
