"""Temporal attention over the encoder's fused-state history.

At each decoding step a pedestrian's fused state queries every fused state
saved during observation (dot-product scores, softmax over the valid steps,
weighted sum), and the blended context is projected back to hidden size:

    out = tanh(W @ concat(context, query) + b)

If every step is masked the context is zero and the projection still runs,
so the decoder always receives a usable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


@dataclass
class AttentionBank:
    """Per-pedestrian history of fused states from the observation window."""
    keys: list[ad.TensorNode] = field(default_factory=list)
    valid: list[bool] = field(default_factory=list)

    def append(self, key: ad.TensorNode, valid: bool = True) -> None:
        if self.keys and key.shape != self.keys[0].shape:
            raise ShapeError(
                f"attention bank: key shape {key.shape} != {self.keys[0].shape}")
        self.keys.append(key)
        self.valid.append(bool(valid))

    def __len__(self) -> int:
        return len(self.keys)


def attend(query: ad.TensorNode, bank: AttentionBank,
           weight: ad.TensorNode, bias: ad.TensorNode) -> ad.TensorNode:
    """Blend the bank by similarity to ``query`` and project to hidden size.

    ``weight`` has shape (H, 2K) where K is the key/query width.
    """
    if len(bank) == 0:
        raise ShapeError("attend: empty attention bank")
    if query.shape != bank.keys[0].shape:
        raise ShapeError(
            f"attend: query shape {query.shape} != key shape {bank.keys[0].shape}")
    scores = ad.stack([ad.dot(query, key) for key in bank.keys])
    mask = np.asarray(bank.valid, dtype=bool)
    weights = ad.masked_softmax(scores, mask)

    context = None
    for idx, key in enumerate(bank.keys):
        if not mask[idx]:
            continue
        term = ad.mul(weights[idx], key)
        context = term if context is None else ad.add(context, term)
    if context is None:
        context = ad.constant(np.zeros(query.shape))

    return ad.tanh(ad.add(ad.matmul(weight, ad.concat([context, query])), bias))
