"""Serial-parallel dual-path speaking-style recognition, desk scale.

A self-contained float64 stack: reverse-mode autodiff tensors, a toy
encoder/adaptor/decoder serial path that transcribes then brackets a style
label, a parallel acoustic-linguistic similarity classifier, weighted joint
training, probability fusion at inference, and a synthetic-corpus plus
acoustic-curation data pipeline.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad  # noqa: F401
