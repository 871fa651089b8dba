"""Defect and grain-size characterization of microstructure images.

Classical baselines (WCBD boxes, PSILM grain sizes), small numpy
encoder-decoder networks trained on their output, and a CMA-ES search
over the networks' filter sizes.
"""

__version__ = "0.1.0"
