"""Gradients of the embodiment distance and of network losses, plus a
central-difference checker used to validate them."""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from ..distance import ROTATION_ONLY, Correspondence, Weights, distance_between, resolve_correspondence
from ..embodiment import EmbodimentSpec, normalize
from ..nn import Mlp
from .tape import Tape, value_of


class DistanceGradient(NamedTuple):
    value: np.ndarray
    grad: np.ndarray
    singular: bool


def grad_distance(spec: EmbodimentSpec, spec_hat: EmbodimentSpec, q, q_hat,
                  w: Weights = ROTATION_ONLY, corr: Correspondence = "static",
                  **kwargs) -> DistanceGradient:
    """Distance and its gradient with respect to the learner angles ``q_hat``.

    ``q`` and ``q_hat`` may carry matching batch dimensions; each batch
    element then gets its own gradient.  With binary correspondence the
    assignment is held fixed at its current value.  ``singular`` is set when
    a Euclidean term with nonzero weight sits exactly at zero, where only
    the zero subgradient is available.  Locked joints get zero gradient.
    """
    spec, spec_hat = normalize(spec), normalize(spec_hat)
    corr = resolve_correspondence(corr, spec, spec_hat)
    with Tape() as tape:
        x = tape.watch(q_hat)
        d = distance_between(spec, np.asarray(q, dtype=float), spec_hat, x, w, corr, **kwargs)
        total = d.sum() if d.ndim else d
        (g,) = tape.gradient(total, [x])
    g[..., spec_hat.locked_mask] = 0.0
    return DistanceGradient(value_of(d).copy(), g, tape.singular)


def grad_mlp(net: Mlp, inputs: np.ndarray, loss: Callable, params=None):
    """Loss value and gradients with respect to every network parameter.

    ``loss(outputs, inputs)`` must return a scalar built from tape ops.
    Raises ``FloatingPointError`` naming the offending parameter when the
    loss or any gradient is not finite.
    """
    params = net.params if params is None else params
    with Tape() as tape:
        watched = [tape.watch(p) for p in params]
        out = net.forward(inputs, watched)
        value = loss(out, inputs)
        if not np.isfinite(value_of(value)).all():
            raise FloatingPointError(f"loss is not finite: {value_of(value)}")
        grads = tape.gradient(value, watched)
    for k, g in enumerate(grads):
        if not np.isfinite(g).all():
            kind = "weights" if k % 2 == 0 else "bias"
            raise FloatingPointError(f"non-finite gradient in layer {k // 2} {kind}")
    return float(value_of(value)), grads


def central_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = float(f(x))
        flat[k] = orig - h
        down = float(f(x))
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return g


def relative_error(g, g_ref, floor: float = 1e-8) -> float:
    g, g_ref = np.asarray(g, dtype=float), np.asarray(g_ref, dtype=float)
    scale = max(np.linalg.norm(g), np.linalg.norm(g_ref), floor)
    return float(np.linalg.norm(g - g_ref) / scale)
