"""Fully-connected generator/discriminator definitions.

Parameters live in one flat float64 vector with an index map, which keeps
serialization, Adam state and the jitted kernels trivial.  Forward passes
here mirror the tape primitives one numpy call per step, so tape evaluation
of the same network is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcore

ACTIVATIONS = ("linear", "tanh", "relu", "leaky_relu")
ACT_ID = {name: i for i, name in enumerate(ACTIVATIONS)}
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class MLPSpec:
    """Architecture description; ``widths`` are per-layer output widths
    (the last entry is the output dimension) and ``activations`` has one tag
    per layer with the final layer linear (raw logit / raw point)."""

    input_dim: int
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    init: str = "xavier-uniform"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if self.input_dim < 1 or any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be >= 1")
        if len(self.widths) != len(self.activations):
            raise ValueError("need one activation tag per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.activations[-1] != "linear":
            raise ValueError("final layer must be linear")
        if self.init not in ("xavier-uniform", "he-normal"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    def layer_dims(self) -> list[tuple[int, int]]:
        fan = [self.input_dim, *self.widths]
        return [(fan[i], fan[i + 1]) for i in range(self.n_layers)]

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())

    def layout(self):
        """(weight starts, bias starts, total) for the flat parameter vector."""
        sw = np.zeros(self.n_layers, dtype=np.int64)
        sb = np.zeros(self.n_layers, dtype=np.int64)
        off = 0
        for l, (fi, fo) in enumerate(self.layer_dims()):
            sw[l] = off
            off += fi * fo
            sb[l] = off
            off += fo
        return sw, sb, off

    def widths_array(self) -> np.ndarray:
        return np.asarray([self.input_dim, *self.widths], dtype=np.int64)

    def acts_array(self) -> np.ndarray:
        return np.asarray([ACT_ID[a] for a in self.activations], dtype=np.int64)


@dataclass
class Params:
    """Flat parameter storage bound to its architecture."""

    spec: MLPSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got {self.flat.shape}"
            )

    def weight(self, l: int) -> np.ndarray:
        sw, sb, _ = self.spec.layout()
        fi, fo = self.spec.layer_dims()[l]
        return self.flat[sw[l] : sw[l] + fi * fo].reshape(fi, fo)

    def bias(self, l: int) -> np.ndarray:
        sw, sb, _ = self.spec.layout()
        fo = self.spec.layer_dims()[l][1]
        return self.flat[sb[l] : sb[l] + fo]

    def copy(self) -> "Params":
        return Params(self.spec, self.flat.copy())


def init_params(spec: MLPSpec, rng: np.random.Generator) -> Params:
    """Seeded init: weights layer by layer, biases zero.

    xavier-uniform draws U(-a, a) with a = sqrt(6/(fan_in+fan_out));
    he-normal draws N(0, sqrt(2/fan_in)).
    """
    flat = np.zeros(spec.n_params, dtype=np.float64)
    sw, sb, _ = spec.layout()
    for l, (fi, fo) in enumerate(spec.layer_dims()):
        if spec.init == "xavier-uniform":
            bound = np.sqrt(6.0 / (fi + fo))
            w = rng.uniform(-bound, bound, size=(fi, fo))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fi), size=(fi, fo))
        flat[sw[l] : sw[l] + fi * fo] = w.ravel()
    return Params(spec, flat)


def _apply_act(a: np.ndarray, act: str) -> np.ndarray:
    if act == "linear":
        return a
    if act == "tanh":
        return np.tanh(a)
    if act == "relu":
        return a * np.where(a >= 0.0, 1.0, 0.0)
    if act == "leaky_relu":
        return a * np.where(a >= 0.0, 1.0, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {act!r}")


def forward(params: Params, x: np.ndarray) -> np.ndarray:
    """Straightforward per-layer forward pass over a batch (rows)."""
    spec = params.spec
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"input batch must be (n, {spec.input_dim})")
    for l in range(spec.n_layers):
        a = np.dot(h, params.weight(l)) + params.bias(l)
        h = _apply_act(a, spec.activations[l])
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite network output")
    return h


def generator_forward(params: Params, z: np.ndarray) -> np.ndarray:
    return forward(params, z)


def discriminator_forward(params: Params, x: np.ndarray) -> np.ndarray:
    """Raw logits, one per batch row."""
    out = forward(params, x)
    if out.shape[1] != 1:
        raise ValueError("discriminator must have a scalar output")
    return out[:, 0]


def build_forward_tape(spec: MLPSpec, batch_n: int):
    """Tape of the forward pass; returns (tape, x id, [(W id, b id)...], out id)."""
    tape = diffcore.Tape()
    x = tape.input("x", (batch_n, spec.input_dim))
    param_ids = []
    h = x
    for l, (fi, fo) in enumerate(spec.layer_dims()):
        w = tape.input(f"W{l}", (fi, fo))
        b = tape.input(f"b{l}", (fo,))
        param_ids.append((w, b))
        a = tape.affine(h, w, b)
        act = spec.activations[l]
        if act == "tanh":
            h = tape.tanh(a)
        elif act == "relu":
            h = tape.relu(a)
        elif act == "leaky_relu":
            h = tape.leaky_relu(a, LEAKY_SLOPE)
        else:
            h = a
    return tape, x, param_ids, h


def param_bindings(params: Params) -> dict[str, np.ndarray]:
    return {
        **{f"W{l}": params.weight(l) for l in range(params.spec.n_layers)},
        **{f"b{l}": params.bias(l) for l in range(params.spec.n_layers)},
    }


def save_params(path, params: Params) -> None:
    """Text format: one header line, then one float per line in index order.

    ``repr`` gives the shortest decimal that round-trips a 64-bit float.
    """
    spec = params.spec
    header = " ".join(
        ["mlp", "v1", str(spec.input_dim)]
        + [str(w) for w in spec.widths]
        + list(spec.activations)
        + [str(spec.seed)]
    )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for v in params.flat:
            fh.write(repr(float(v)) + "\n")


def load_params(path) -> Params:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if header[:2] != ["mlp", "v1"]:
            raise ValueError(f"{path}: not an mlp v1 model file")
        rest = header[2:]
        ints = []
        i = 0
        while i < len(rest):
            try:
                ints.append(int(rest[i]))
            except ValueError:
                break
            i += 1
        acts = rest[i:-1]
        seed = int(rest[-1])
        if len(ints) < 2 or len(acts) != len(ints) - 1:
            raise ValueError(f"{path}: malformed mlp header")
        spec = MLPSpec(ints[0], tuple(ints[1:]), tuple(acts), seed=seed)
        flat = np.empty(spec.n_params, dtype=np.float64)
        for k in range(spec.n_params):
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated model file")
            flat[k] = float(line)
        return Params(spec, flat)


def mixture_generator_spec(latent_dim: int = 2, seed: int = 0) -> MLPSpec:
    """Default generator for the mixture benchmark: latent -> 128 -> 128 -> 3."""
    return MLPSpec(latent_dim, (128, 128, 3), ("tanh", "tanh", "linear"), seed=seed)


def mixture_discriminator_spec(seed: int = 0) -> MLPSpec:
    """Default discriminator: 3 -> 128 -> 128 -> 1, leaky-relu hidden layers."""
    return MLPSpec(3, (128, 128, 1), ("leaky_relu", "leaky_relu", "linear"), seed=seed)
