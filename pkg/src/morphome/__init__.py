"""Desk-scale laboratory for studying morphome acquisition in neural
re-inflection models.

Five transformer variants differing only in positional-encoding policy and
tag representation are trained on frequency-controlled verb paradigm data
and probed for L-shaped stem-identity structure.
"""

__version__ = "0.1.0"
