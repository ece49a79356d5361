"""Lung-CT classification pipeline.

CLAHE-based contrast enhancement, seeded augmentation, a small CNN trained
from scratch, and multiclass evaluation, glued together by a CLI.
"""

__version__ = "0.1.0"
