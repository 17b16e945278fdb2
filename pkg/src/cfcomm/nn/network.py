"""Networks over a single flat parameter vector.

A ``ParameterStore`` owns one float64 vector and hands out reshaped views per
layer, grouped by name so composite models (shared trunks, multiple heads) can
address their pieces. ``Network`` is the plain sequential stack; composites in
other modules reuse the same free functions ``run_layers``/``backprop_layers``.

Forward passes are pure: they never mutate parameters or module state other
than bumping instrumentation counters, and they return a ``Tape`` holding the
intermediates needed for one backward pass. A tape is single-use and becomes
stale as soon as the parameters change.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, UsageError
from .layers import Layer, layer_from_config


def infer_shapes(layers, input_shape):
    """Propagate per-sample shapes through a stack, validating as we go."""
    shapes = [tuple(input_shape)]
    for layer in layers:
        shapes.append(layer.out_shape(shapes[-1]))
    return shapes


class ParameterStore:
    """Flat float64 parameter vector partitioned per (group, layer, array)."""

    def __init__(self, groups: dict, rng: np.random.Generator):
        self.theta = np.concatenate(
            [arr.ravel() for layers in groups.values() for layer in layers
             for arr in layer.init_params(rng)] or [np.empty(0)]
        ).astype(np.float64)
        self.version = 0
        self._views: dict = {}
        self._regions: list = []
        self._group_slices: dict = {}
        offset = 0
        for name, layers in groups.items():
            group_start = offset
            per_layer = []
            for li, layer in enumerate(layers):
                arrays = []
                for shape in layer.param_shapes:
                    size = int(np.prod(shape))
                    view = self.theta[offset:offset + size].reshape(shape)
                    arrays.append(view)
                    self._regions.append((f"{name}[{li}]:{layer.kind}", slice(offset, offset + size)))
                    offset += size
                per_layer.append(arrays)
            self._views[name] = per_layer
            self._group_slices[name] = slice(group_start, offset)

    @property
    def size(self) -> int:
        return self.theta.size

    def params_for(self, group: str):
        return self._views[group]

    def group_slice(self, group: str) -> slice:
        return self._group_slices[group]

    def regions(self):
        return list(self._regions)

    def bump(self):
        self.version += 1

    def get_theta(self) -> np.ndarray:
        return self.theta.copy()

    def set_theta(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.theta.shape:
            raise ConfigError(
                f"parameter vector has {values.size} entries, store holds {self.theta.size}")
        self.theta[:] = values
        self.bump()

    def region_of(self, flat_index: int) -> str:
        for label, sl in self._regions:
            if sl.start <= flat_index < sl.stop:
                return label
        return "<unknown>"


@dataclass
class Tape:
    """Intermediates from one forward pass. Single use, version checked."""

    store: ParameterStore
    version: int
    caches: list
    batch: int
    consumed: bool = field(default=False)

    def check(self):
        if self.consumed:
            raise UsageError("tape already consumed by a backward pass")
        if self.version != self.store.version:
            raise UsageError("tape is stale: parameters changed since the forward pass")
        self.consumed = True


def run_layers(layers, params_per_layer, x):
    """Forward a batch through a stack; returns output and per-layer caches."""
    caches = []
    for layer, params in zip(layers, params_per_layer):
        x, cache = layer.forward(params, x)
        caches.append(cache)
    return x, caches


def backprop_layers(layers, params_per_layer, caches, grad_out):
    """Reverse pass; returns input gradient and per-layer parameter grads."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        grad_out, pgrads = layers[i].backward(params_per_layer[i], caches[i], grad_out)
        grads[i] = pgrads
    return grad_out, grads


def flatten_group_grads(store: ParameterStore, group_grads: dict) -> np.ndarray:
    """Assemble per-(group, layer) gradients into one store-aligned vector.

    Groups absent from ``group_grads`` contribute zeros. When a group appears
    several times (a trunk used by more than one path) the caller sums the
    per-layer arrays before calling this.
    """
    flat = np.zeros(store.size, dtype=np.float64)
    for name, per_layer in group_grads.items():
        sl = store.group_slice(name)
        if per_layer:
            parts = [arr.ravel() for pgrads in per_layer for arr in pgrads]
            if parts:
                flat[sl] = np.concatenate(parts)
    return flat


def add_layer_grads(acc, new):
    """Sum two per-layer gradient lists in place (for shared trunks)."""
    if acc is None:
        return new
    for a, b in zip(acc, new):
        for arr_a, arr_b in zip(a, b):
            arr_a += arr_b
    return acc


class Network:
    """Sequential layer stack with its own flat parameter store."""

    def __init__(self, layers, input_shape, rng: np.random.Generator):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = infer_shapes(self.layers, self.input_shape)
        self.store = ParameterStore({"main": self.layers}, rng)
        self.eval_count = 0

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def n_params(self):
        return self.store.size

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.shape == self.input_shape
        if squeeze:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ConfigError(
                f"network expects input shape {self.input_shape}, got {x.shape[1:]}")
        y, caches = run_layers(self.layers, self.store.params_for("main"), x)
        self.eval_count += x.shape[0]
        tape = Tape(self.store, self.store.version, caches, x.shape[0])
        return (y[0] if squeeze else y), tape

    def backward(self, tape: Tape, grad_out):
        tape.check()
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (tape.batch,) + self.output_shape:
            grad_out = grad_out.reshape((tape.batch,) + self.output_shape)
        grad_in, per_layer = backprop_layers(
            self.layers, self.store.params_for("main"), tape.caches, grad_out)
        flat = flatten_group_grads(self.store, {"main": per_layer})
        return grad_in, flat

    def spec(self) -> dict:
        return {
            "type": "network",
            "input_shape": list(self.input_shape),
            "layers": [layer.config() for layer in self.layers],
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "Network":
        layers = [layer_from_config(cfg) for cfg in spec["layers"]]
        return cls(layers, tuple(spec["input_shape"]), np.random.default_rng(0))
