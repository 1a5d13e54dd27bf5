"""Uncertainty-aware saliency pipeline for power-quality disturbance classifiers.

The package covers the full workflow: synthetic waveform generation with
exact disturbance ground truth, a small self-contained 1D-CNN engine,
three approximate parameter posteriors, three attribution operators,
distributional saliency summaries, and localisation scoring.
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
