"""tokenforge: token-level image-text alignment at desk scale.

The package covers the full loop: building token-mask corpora from
character-level annotations, training a small feature model with
token-level alignment objectives, compressing feature grids into visual
token sequences, aligning answer tokens against pooled visual features
inside a stub language model, evaluating with segmentation / retrieval /
edit-distance protocols, and serving interactive text-to-region queries
over HTTP.
"""

from tokenforge import errors

__version__ = "0.1.0"

__all__ = ["errors", "__version__"]
