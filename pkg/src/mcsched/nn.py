"""Small dense networks with hand-written backprop and Adam.

Everything is float64 and operates on row batches: inputs are (B, d_in) or a
single (d_in,) vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
}


class CheckpointError(ValueError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


@dataclass
class Tape:
    """Activations cached by ``forward`` for one ``backward`` call."""

    inputs: list
    pre: list
    output: np.ndarray
    single: bool
    version: int


class DenseNet:
    """Fully connected net: hidden layers use ``activation``, the last is ``head``.

    ``head`` is ``"softmax"`` (probability vector) or ``"linear"``.
    """

    def __init__(self, layer_sizes, head="linear", activation="tanh", rng=None):
        if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if head not in ("softmax", "linear"):
            raise ValueError(f"unknown head {head!r}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.head = head
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            self.biases.append(np.zeros(d_out))
        self.adam = AdamState()
        self._version = 0

    @property
    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def version(self) -> int:
        """Bumped whenever the parameters change."""
        return self._version

    def copy(self) -> "DenseNet":
        return load_weights(save_weights(self))

    def load_params_from(self, other: "DenseNet") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src
        self._version += 1

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.layer_sizes[0]}")
        act = _ACTIVATIONS[self.activation][0]
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = act(z) if i < last else z
        if self.head == "softmax":
            h = softmax(h)
        out = h[0] if single else h
        return out, Tape(inputs, pre, h, single, self._version)

    def __call__(self, x) -> np.ndarray:
        """Forward pass without a tape."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.layer_sizes[0]}")
        act = _ACTIVATIONS[self.activation][0]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = act(h @ w + b)
        h = h @ self.weights[-1] + self.biases[-1]
        return softmax(h) if self.head == "softmax" else h

    def backward(self, tape: Tape, output_grad) -> list:
        """Gradients of a scalar loss w.r.t. ``params`` given dL/d(output)."""
        if tape.version != self._version:
            raise RuntimeError("stale tape: parameters changed after forward")
        g = np.asarray(output_grad, dtype=float)
        if tape.single:
            g = g[None, :]
        if self.head == "softmax":
            p = tape.output
            g = p * (g - np.sum(g * p, axis=1, keepdims=True))
        deriv = _ACTIVATIONS[self.activation][1]
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                g = g * deriv(tape.pre[i - 1], tape.inputs[i])
        return grads

    def optimizer_step(self, grads, learning_rate: float) -> None:
        """One Adam step with bias correction; moments live on the net."""
        st = self.adam
        if not st.m:
            st.m = [np.zeros_like(p) for p in self.params]
            st.v = [np.zeros_like(p) for p in self.params]
        st.t += 1
        c1 = 1.0 - st.beta1 ** st.t
        c2 = 1.0 - st.beta2 ** st.t
        for p, g, m, v in zip(self.params, grads, st.m, st.v):
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + st.eps)
        self._version += 1


class StackedForward:
    """Evaluate several same-shaped nets, one input row each, in one pass.

    Row k of the input goes through net k. Stacked weights are rebuilt
    whenever any net's parameters change.
    """

    def __init__(self, nets: list[DenseNet]):
        first = nets[0]
        for net in nets[1:]:
            if (net.layer_sizes != first.layer_sizes or net.head != first.head
                    or net.activation != first.activation):
                raise ValueError("stacked nets must share layer sizes, head and activation")
        self.nets = nets
        self._key = None

    def _refresh(self):
        key = tuple(net.version for net in self.nets)
        if key != self._key:
            self._w = [np.stack(ws) for ws in zip(*(net.weights for net in self.nets))]
            self._b = [np.stack(bs)[:, None, :] for bs in zip(*(net.biases for net in self.nets))]
            self._key = key

    def __call__(self, x: np.ndarray, rows=None) -> np.ndarray:
        """Outputs for ``x[k]`` under net ``rows[k]`` (default: net k)."""
        self._refresh()
        first = self.nets[0]
        act = _ACTIVATIONS[first.activation][0]
        ws, bs = self._w, self._b
        if rows is not None:
            ws = [w[rows] for w in ws]
            bs = [b[rows] for b in bs]
        h = np.asarray(x, dtype=float)[:, None, :]
        for w, b in zip(ws[:-1], bs[:-1]):
            h = act(h @ w + b)
        h = (h @ ws[-1] + bs[-1])[:, 0, :]
        return softmax(h) if first.head == "softmax" else h


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def add_grads(a: list, b: list) -> list:
    return [x + y for x, y in zip(a, b)]


# --------------------------------------------------------------------------
# checkpoints


def _encode(arr: np.ndarray):
    # json writes floats via repr, which round-trips doubles exactly
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _decode(doc) -> np.ndarray:
    return np.asarray(doc["data"], dtype=float).reshape(doc["shape"])


def save_weights(net: DenseNet) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "layer_sizes": net.layer_sizes,
        "head": net.head,
        "activation": net.activation,
        "weights": [_encode(w) for w in net.weights],
        "biases": [_encode(b) for b in net.biases],
        "adam": {
            "beta1": net.adam.beta1, "beta2": net.adam.beta2, "eps": net.adam.eps,
            "t": net.adam.t,
            "m": [_encode(x) for x in net.adam.m],
            "v": [_encode(x) for x in net.adam.v],
        },
    }
    return json.dumps(doc)


def load_weights(document: str) -> DenseNet:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        found = doc.get("schema_version") if isinstance(doc, dict) else None
        raise CheckpointError(f"schema version {found!r}, expected {SCHEMA_VERSION}")
    try:
        net = DenseNet(doc["layer_sizes"], head=doc["head"], activation=doc["activation"])
        weights = [_decode(w) for w in doc["weights"]]
        biases = [_decode(b) for b in doc["biases"]]
        ad = doc["adam"]
        adam = AdamState(ad["beta1"], ad["beta2"], ad["eps"], ad["t"],
                         [_decode(x) for x in ad["m"]], [_decode(x) for x in ad["v"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from None
    if [w.shape for w in weights] != [w.shape for w in net.weights] or \
            [b.shape for b in biases] != [b.shape for b in net.biases]:
        raise CheckpointError("parameter shapes do not match layer_sizes")
    net.weights, net.biases, net.adam = weights, biases, adam
    return net
