"""Fully-connected ReLU binary classifiers: exact forward evaluation with
activation-state capture, sign-split weight parts, margins, and loss-free
model persistence.

Conventions used throughout the package:

* A network with ``d`` hidden layers of widths ``w_1..w_d`` on inputs of
  dimension ``w_0`` is parameterized by ``d+1`` weight matrices
  ``W^l`` of shape ``(w_{l+1}, w_l)`` and biases ``b^l`` of shape
  ``(w_{l+1},)`` for ``l = 0..d``, with ``w_{d+1} = 1`` (scalar output).
* The preactivation of hidden layer ``l`` is
  ``z^l = b^{l-1} + W^{l-1} relu(z^{l-1})`` and the output is the last
  (un-rectified) preactivation.
* A neuron is "on" when its preactivation is ``>= 0``; exact zeros count
  as on (deterministic tie-break; the boundary set has measure zero).
* All arithmetic is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArchSpec",
    "MlpParams",
    "NetworkState",
    "ForwardTrace",
    "forward",
    "forward_batch",
    "state_bits_batch",
    "split_signs",
    "margin",
    "save_params",
    "load_params",
    "params_to_dict",
    "params_from_dict",
]


class InputError(ValueError):
    """Caller-supplied arguments violate a documented precondition."""


@dataclass(frozen=True)
class ArchSpec:
    """Shape of a fully-connected ReLU net: input width and hidden widths.

    The output width is always 1.
    """

    input_dim: int
    hidden_widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise InputError(f"input_dim must be >= 1, got {self.input_dim}")
        if len(self.hidden_widths) < 1:
            raise InputError("need at least one hidden layer")
        if any(w < 1 for w in self.hidden_widths):
            raise InputError(f"hidden widths must be >= 1, got {self.hidden_widths}")

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.hidden_widths)

    @property
    def widths(self) -> tuple[int, ...]:
        """Full width chain (w_0, w_1, ..., w_d, 1)."""
        return (self.input_dim,) + self.hidden_widths + (1,)

    @property
    def total_hidden(self) -> int:
        return sum(self.hidden_widths)

    @property
    def param_count(self) -> int:
        ws = self.widths
        return sum(ws[l + 1] * (ws[l] + 1) for l in range(len(ws) - 1))

    def layer_slice(self, layer: int) -> slice:
        """Bit-slice of hidden layer ``layer`` (1-based) in a flat state vector."""
        if not 1 <= layer <= self.depth:
            raise InputError(f"layer must be in 1..{self.depth}, got {layer}")
        off = sum(self.hidden_widths[: layer - 1])
        return slice(off, off + self.hidden_widths[layer - 1])


@dataclass
class MlpParams:
    """Weights and biases of a ReLU net, shapes checked against ``arch``."""

    arch: ArchSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        ws = self.arch.widths
        n = len(ws) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise InputError(f"expected {n} weight/bias pairs, got {len(self.weights)}/{len(self.biases)}")
        self.weights = [np.ascontiguousarray(W, dtype=np.float64) for W in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (ws[l + 1], ws[l]):
                raise InputError(f"W^{l} shape {W.shape}, expected {(ws[l + 1], ws[l])}")
            if b.shape != (ws[l + 1],):
                raise InputError(f"b^{l} shape {b.shape}, expected {(ws[l + 1],)}")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise InputError(f"non-finite entries in layer {l}")

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def allclose(self, other: "MlpParams", tol: float = 0.0) -> bool:
        if self.arch != other.arch:
            return False
        for a, b in zip(self.weights + self.biases, other.weights + other.biases):
            if tol == 0.0:
                if not np.array_equal(a, b):
                    return False
            elif not np.allclose(a, b, atol=tol, rtol=0.0):
                return False
        return True


@dataclass(frozen=True)
class NetworkState:
    """Concatenated on/off pattern of all hidden neurons (layer 1 first).

    The output neuron's sign is deliberately not part of the state; it lives
    in the sign flags of the state registry.
    """

    bits: tuple[int, ...]
    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != sum(self.widths):
            raise InputError(f"{len(self.bits)} bits for widths {self.widths}")
        if any(b not in (0, 1) for b in self.bits):
            raise InputError("state bits must be 0/1")

    def layer(self, layer: int) -> tuple[int, ...]:
        off = sum(self.widths[: layer - 1])
        return self.bits[off : off + self.widths[layer - 1]]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.uint8)

    @classmethod
    def from_array(cls, bits: np.ndarray, arch: ArchSpec) -> "NetworkState":
        return cls(tuple(int(b) for b in bits), arch.hidden_widths)

    def __str__(self) -> str:
        parts = ["".join(str(b) for b in self.layer(l)) for l in range(1, len(self.widths) + 1)]
        return "|".join(parts)


@dataclass
class ForwardTrace:
    """Per-layer preactivations, output value and activation state for one input."""

    preactivations: list[np.ndarray]
    output: float
    state: NetworkState


def forward(params: MlpParams, x: np.ndarray) -> ForwardTrace:
    """Evaluate the net at ``x``, capturing preactivations and the state."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.arch.input_dim:
        raise InputError(f"input dim {x.shape[0]}, expected {params.arch.input_dim}")
    pre = []
    a = x
    for W, b in zip(params.weights, params.biases):
        z = W @ a + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    # hidden layers only; with d >= 1 pre has d+1 entries, the last is the output
    bits = np.concatenate([(z >= 0).astype(np.uint8) for z in pre[:-1]])
    state = NetworkState.from_array(bits, params.arch)
    return ForwardTrace(pre, float(pre[-1][0]), state)


def forward_batch(params: MlpParams, X: np.ndarray, want_pre: bool = False):
    """Vectorized forward pass.

    Returns ``(outputs, bits)`` where ``outputs`` has shape ``(n,)`` and
    ``bits`` is the ``(n, total_hidden)`` uint8 state matrix; with
    ``want_pre=True`` additionally returns the list of per-layer
    preactivation matrices.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise InputError(f"expected (n, {params.arch.input_dim}) inputs, got {X.shape}")
    pre = []
    a = X
    for W, b in zip(params.weights, params.biases):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    bits = np.concatenate([(z >= 0) for z in pre[:-1]], axis=1).astype(np.uint8)
    out = pre[-1][:, 0]
    if want_pre:
        return out, bits, pre
    return out, bits


def state_bits_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """State matrix only (uint8, one row per input)."""
    return forward_batch(params, X)[1]


def split_signs(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise positive/negative parts: ``M = M_plus - M_minus`` with both
    parts nonnegative and disjoint supports."""
    M = np.asarray(M, dtype=np.float64)
    if not np.isfinite(M).all():
        raise InputError("matrix has non-finite entries")
    return np.maximum(M, 0.0), np.maximum(-M, 0.0)


def margin(params: MlpParams, data) -> float:
    """Smallest signed output over the dataset: min over i of ``(2y_i-1) * N(x_i)``.

    Negative when any sample is misclassified.
    """
    if data.m == 0:
        raise InputError("margin of an empty dataset is undefined")
    out, _ = forward_batch(params, data.points)
    signs = 2.0 * np.asarray(data.labels, dtype=np.float64) - 1.0
    return float(np.min(signs * out))


# -- persistence ------------------------------------------------------------
#
# Models are stored as JSON with every float hex-encoded (float.hex()), so a
# save/load round trip is bit-exact.


def _hex_list(a: np.ndarray) -> list:
    return [v.hex() for v in a.reshape(-1).tolist()]


def _from_hex(vals: list, shape: tuple[int, ...]) -> np.ndarray:
    return np.array([float.fromhex(v) for v in vals], dtype=np.float64).reshape(shape)


def params_to_dict(params: MlpParams, metadata: dict | None = None) -> dict:
    return {
        "format": "relucirc-model-v1",
        "arch": {
            "input_dim": params.arch.input_dim,
            "hidden_widths": list(params.arch.hidden_widths),
        },
        "weights_hex": [_hex_list(W) for W in params.weights],
        "biases_hex": [_hex_list(b) for b in params.biases],
        "metadata": metadata or {},
    }


def params_from_dict(d: dict) -> tuple[MlpParams, dict]:
    arch = ArchSpec(d["arch"]["input_dim"], tuple(d["arch"]["hidden_widths"]))
    ws = arch.widths
    weights = [_from_hex(h, (ws[l + 1], ws[l])) for l, h in enumerate(d["weights_hex"])]
    biases = [_from_hex(h, (ws[l + 1],)) for l, h in enumerate(d["biases_hex"])]
    return MlpParams(arch, weights, biases), d.get("metadata", {})


def save_params(params: MlpParams, path, metadata: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump(params_to_dict(params, metadata), f)


def load_params(path) -> tuple[MlpParams, dict]:
    with open(path) as f:
        return params_from_dict(json.load(f))
