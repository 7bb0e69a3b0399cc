"""Standalone protocol server for masked-sequence model serving.

Speaks newline-delimited JSON over TCP: hello/denoise/reward requests with
strictly increasing ids per connection.  Denoise replies are flat row-major
L x V probability arrays with the mask column zeroed, masked rows
renormalized, and unmasked rows one-hot on the observed token; the handshake
reports the protocol version, vocabulary size, mask id, and the scorer's
Lipschitz constant when known.
"""

from .models import LexiconScorer, ModelBinding, SyntheticMaskedModel, build_model, build_scorer
from .protocol import PROTOCOL_VERSION
from .server import BridgeServer

__all__ = [
    "BridgeServer",
    "LexiconScorer",
    "ModelBinding",
    "PROTOCOL_VERSION",
    "SyntheticMaskedModel",
    "build_model",
    "build_scorer",
]
