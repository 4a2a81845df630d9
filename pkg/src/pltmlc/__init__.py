"""Training laboratory for multi-label classification with missing labels
and long-tailed class distributions.

The pipeline trains three parallel models (head-biased, tail-biased,
balanced) with online label correction, a multi-granularity focal loss,
and adaptive two-teacher distillation into the balanced model.
"""

__version__ = "0.1.0"
