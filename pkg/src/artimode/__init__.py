"""Self-supervised discovery of articulation modes from depth images.

The package covers the full loop: procedural articulated scenes rendered to
depth, adaptive self-supervised data collection, a generative model over
interaction modes with spatial action grounding, goal-conditioned
fine-tuning, and the evaluation harness.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
