"""aecodec: a self-contained learned image codec and transfer toolkit.

Train a small convolutional autoencoder (numpy-only autodiff engine),
serialize images into compact latent codes, ship them over a framed TCP
protocol, and measure reconstruction quality and transfer latency.
"""

from .tensor import Tensor, backward, no_grad
from .model import (
    ModelParams,
    LatentCode,
    init_params,
    encode,
    decode,
    forward_train,
    total_loss,
    split_params,
    merge_params,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "ModelParams",
    "LatentCode",
    "init_params",
    "encode",
    "decode",
    "forward_train",
    "total_loss",
    "split_params",
    "merge_params",
    "__version__",
]
