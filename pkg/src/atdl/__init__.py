"""Relation-vector transfer of stacked denoising autoencoders.

A network trained on a large labelled source task is reused in full for a
small target task: each target label is mapped to the mean source-output
response of its samples, all layers are fine-tuned toward those responses,
and new samples are classified by Mahalanobis distance.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["__version__", "BACKEND"]
