"""Shared step primitives: linear embed, LSTM cell, scene-wide spatial pass.

Both the forecaster and the adversarial critic run the same kind of
spatially attentive recurrence, so the per-step machinery lives here.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import spatial
from .geometry import AgentKinematics, compute_encounter


def linear(x: ad.TensorNode, weight: ad.TensorNode, bias: ad.TensorNode) -> ad.TensorNode:
    return ad.add(ad.matmul(weight, x), bias)


def lstm_cell(x: ad.TensorNode, hidden: ad.TensorNode, cell: ad.TensorNode,
              w_ih: ad.TensorNode, w_hh: ad.TensorNode, bias: ad.TensorNode,
              hidden_dim: int):
    """One LSTM update; gate order input, forget, candidate, output."""
    H = hidden_dim
    gates = ad.add(ad.add(ad.matmul(w_ih, x), ad.matmul(w_hh, hidden)), bias)
    i = ad.sigmoid(gates[0:H])
    f = ad.sigmoid(gates[H:2 * H])
    g = ad.tanh(gates[2 * H:3 * H])
    o = ad.sigmoid(gates[3 * H:4 * H])
    new_cell = ad.add(ad.mul(f, cell), ad.mul(i, g))
    new_hidden = ad.mul(o, ad.tanh(new_cell))
    return new_hidden, new_cell


def noise_conditioned_hidden(hidden: ad.TensorNode, noise: np.ndarray,
                             weight: ad.TensorNode, bias: ad.TensorNode) -> ad.TensorNode:
    """Append a noise draw to a hidden state and project back to hidden size."""
    return linear(ad.concat([hidden, ad.constant(noise)]), weight, bias)


def spatial_round(rel_fn: Callable[[int, int], ad.TensorNode],
                  kinematics: Sequence[AgentKinematics],
                  present: Sequence[bool],
                  hiddens: Sequence[ad.TensorNode],
                  grid: spatial.DomainGrid,
                  fuse_w: ad.TensorNode, fuse_b: ad.TensorNode,
                  neighbor_order: Sequence[int],
                  literal_softmax: bool = False,
                  force_zero_context: bool = False):
    """One scene-wide spatial attention pass from a snapshot of hidden states.

    ``rel_fn(a, b)`` must return the (2,) node pointing from pedestrian a to
    pedestrian b; passing live position nodes here is what lets predicted
    geometry receive gradient. ``neighbor_order`` fixes the crowd iteration
    (ascending pedestrian id) so that renumbering a scene permutes outputs
    bit-identically. Absent pedestrians never appear as neighbours.

    Returns (fused, joints): per-pedestrian fused states (hidden size) and
    the pre-projection concatenations (double width).
    """
    n = len(hiddens)
    hidden_dim = hiddens[0].shape[0] if n else 0
    fused: list = [None] * n
    joints: list = [None] * n
    for a in range(n):
        if force_zero_context:
            ctx = ad.constant(np.zeros(hidden_dim))
        else:
            neighbors = [b for b in neighbor_order if b != a and present[b]]
            scores = []
            for b in neighbors:
                geom = compute_encounter(kinematics[a], kinematics[b])
                scores.append(spatial.raw_score(grid, geom,
                                                distance=ad.l2norm(rel_fn(a, b))))
            weights = spatial.normalize_scores(scores,
                                               literal_softmax=literal_softmax)
            ctx = spatial.context_vector(weights, [hiddens[b] for b in neighbors],
                                         hidden_dim)
        fused[a], joints[a] = spatial.fuse_hidden(hiddens[a], ctx, fuse_w, fuse_b)
    return fused, joints
