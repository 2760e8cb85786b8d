"""Small fully connected networks and the Adam optimizer.

Weights are plain numpy arrays; :meth:`Mlp.forward` also accepts tape
variables as parameters, which is how gradients are taken.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffgraph import tape as ad

FORMAT_VERSION = 1

_HIDDEN = {
    "lrelu": lambda x, slope: ad.leaky_relu(x, slope),
    "tanh": lambda x, slope: ad.tanh(x),
}
_OUTPUT = {
    "linear": lambda x: x,
    "tanh": ad.tanh,
    "tanh_pi": lambda x: np.pi * ad.tanh(x),
}


class Mlp:
    """Multilayer perceptron ``sizes[0] -> ... -> sizes[-1]``.

    Hidden activations are ``"lrelu"`` or ``"tanh"``; the output activation
    is ``"linear"``, ``"tanh"`` or ``"tanh_pi"`` (tanh scaled to [-pi, pi]).
    """

    def __init__(self, sizes, hidden: str = "lrelu", output: str = "linear", *,
                 slope: float = 0.01, seed: int | None = 0, rng: np.random.Generator | None = None,
                 output_gain: float = 1.0):
        if hidden not in _HIDDEN or output not in _OUTPUT:
            raise ValueError(f"unknown activation {hidden!r}/{output!r}")
        self.sizes = [int(s) for s in sizes]
        self.hidden = hidden
        self.output = output
        self.slope = slope
        self.seed = seed
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            if k == len(self.sizes) - 2:
                bound *= output_gain
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def forward(self, x, params=None):
        params = self.params if params is None else params
        h = x
        n_layers = len(params) // 2
        for k in range(n_layers):
            h = ad.matmul(h, params[2 * k]) + params[2 * k + 1]
            if k < n_layers - 1:
                h = _HIDDEN[self.hidden](h, self.slope)
        return _OUTPUT[self.output](h)

    __call__ = forward

    def copy(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "arch": {"sizes": self.sizes, "hidden": self.hidden, "output": self.output,
                     "slope": self.slope},
            "seed": self.seed,
            "layers": [{"W": self.params[2 * k].tolist(), "b": self.params[2 * k + 1].tolist()}
                       for k in range(len(self.params) // 2)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        arch = data["arch"]
        net = cls(arch["sizes"], arch["hidden"], arch["output"], slope=arch["slope"], seed=0)
        net.seed = data.get("seed")
        params = []
        for layer in data["layers"]:
            params.append(np.array(layer["W"], dtype=float).reshape(-1, len(layer["b"])))
            params.append(np.array(layer["b"], dtype=float))
        if [p.shape for p in params] != [p.shape for p in net.params]:
            raise ValueError("layer shapes do not match the stored architecture")
        net.params = params
        return net


def save_weights(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload))


def load_weights(path) -> dict:
    return json.loads(Path(path).read_text())


@dataclass
class Adam:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is None or total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return [g * scale for g in grads], total
