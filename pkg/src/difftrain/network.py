"""Stacked gated-recurrent regression network with exact backpropagation
through time and an Adam optimizer.

Gate equations per frame t (reset gate applied to the previous hidden state
inside the candidate):

    z_t = sigmoid(Wz a_t + Uz h_{t-1} + bz)
    r_t = sigmoid(Wr a_t + Ur h_{t-1} + br)
    c_t = tanh(Wc a_t + Uc (r_t * h_{t-1}) + bc)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t,   h_0 = 0

Layer k consumes layer k-1's hidden sequence; both output heads (emotion
scalar, optional auxiliary vector) are affine maps of the top layer.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .kernels import gru_backward_scan, gru_forward_scan

log = logging.getLogger(__name__)

STRUCTURE_LAYER_GRID = (1, 3, 5, 7, 9)
STRUCTURE_UNIT_GRID = (40, 80, 120)
AUX_HEADS = ("none", "reconstruction", "uncertainty")


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    num_layers: int = 1
    units_per_layer: int = 40
    aux_head: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.num_layers < 1 or self.units_per_layer < 1:
            raise ValueError("dimensions must be positive")
        if self.aux_head not in AUX_HEADS:
            raise ValueError(f"unknown aux head {self.aux_head!r}")

    @property
    def aux_dim(self) -> int:
        if self.aux_head == "reconstruction":
            return self.input_dim
        if self.aux_head == "uncertainty":
            return 1
        return 0

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "num_layers": self.num_layers,
                "units_per_layer": self.units_per_layer,
                "aux_head": self.aux_head, "seed": self.seed}


def validate_grid_values(layer_counts, unit_counts):
    """Enforce grid membership; only called when grid-search mode is active."""
    for n in layer_counts:
        if n not in STRUCTURE_LAYER_GRID:
            raise ValueError(f"layer count {n} not in grid {STRUCTURE_LAYER_GRID}")
    for u in unit_counts:
        if u not in STRUCTURE_UNIT_GRID:
            raise ValueError(f"unit count {u} not in grid {STRUCTURE_UNIT_GRID}")


_LAYER_SLOTS = ("wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc")


class GruNetwork:
    """Parameter container; mutated only by adam_step."""

    def __init__(self, config: NetworkConfig, layers, head_w, head_b,
                 aux_w=None, aux_b=None):
        self.config = config
        self.layers = layers            # list of dicts with _LAYER_SLOTS arrays
        self.head_w = head_w            # (H,)
        self.head_b = head_b            # (1,)
        self.aux_w = aux_w              # (aux_dim, H) or None
        self.aux_b = aux_b              # (aux_dim,) or None

    def iter_params(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for slot in _LAYER_SLOTS:
                yield f"layer{i}.{slot}", layer[slot]
        yield "emotion.w", self.head_w
        yield "emotion.b", self.head_b
        if self.aux_w is not None:
            yield "aux.w", self.aux_w
            yield "aux.b", self.aux_b

    def copy(self) -> "GruNetwork":
        return GruNetwork(
            self.config,
            [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
            self.head_w.copy(), self.head_b.copy(),
            None if self.aux_w is None else self.aux_w.copy(),
            None if self.aux_b is None else self.aux_b.copy())

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.iter_params())


def parameter_count(config: NetworkConfig) -> int:
    h, d = config.units_per_layer, config.input_dim
    count = 0
    for i in range(config.num_layers):
        in_dim = d if i == 0 else h
        count += 3 * (h * in_dim + h * h + h)
    count += h + 1
    if config.aux_dim:
        count += config.aux_dim * h + config.aux_dim
    return count


def _glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_network(config: NetworkConfig) -> GruNetwork:
    """Fan-based uniform weights, zero biases, deterministic in the seed.

    Core parameters (recurrent layers + emotion head) and the auxiliary head
    draw from independent seed streams, so networks that differ only in the
    auxiliary head share identical core parameters.
    """
    rng = np.random.default_rng([config.seed, 0])
    h = config.units_per_layer
    layers = []
    for i in range(config.num_layers):
        in_dim = config.input_dim if i == 0 else h
        layer = {}
        for gate in "zrc":
            layer[f"w{gate}"] = _glorot(rng, h, in_dim)
            layer[f"u{gate}"] = _glorot(rng, h, h)
            layer[f"b{gate}"] = np.zeros(h)
        layers.append(layer)
    head_w = _glorot(rng, 1, h)[0]
    head_b = np.zeros(1)
    aux_w = aux_b = None
    if config.aux_dim:
        aux_rng = np.random.default_rng([config.seed, 1])
        aux_w = _glorot(aux_rng, config.aux_dim, h)
        aux_b = np.zeros(config.aux_dim)
    return GruNetwork(config, layers, head_w, head_b, aux_w, aux_b)


@dataclass
class PredictionBundle:
    """Forward-pass outputs; keeps the per-layer state needed for backward."""

    emotion_trace: np.ndarray            # (T,)
    aux_trace: np.ndarray | None         # (T, aux_dim) or None
    final_hidden: list[np.ndarray]       # per layer (H,), for chunk carry-over
    cache: list[dict] | None = None      # per layer: inputs + gate activations


def forward(net: GruNetwork, inputs: np.ndarray,
            initial_hidden: list[np.ndarray] | None = None,
            want_cache: bool = True) -> PredictionBundle:
    """Run the full stack over a (T, input_dim) chunk."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.config.input_dim:
        raise ValueError(
            f"input width {inputs.shape[-1] if inputs.ndim == 2 else '?'} does "
            f"not match configured input_dim {net.config.input_dim}")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("non-finite values in network input")
    h_dim = net.config.units_per_layer
    if initial_hidden is None:
        initial_hidden = [np.zeros(h_dim) for _ in net.layers]
    layer_input = inputs
    cache = [] if want_cache else None
    finals = []
    for layer, h0 in zip(net.layers, initial_hidden):
        w = np.concatenate([layer["wz"], layer["wr"], layer["wc"]], axis=0)
        b = np.concatenate([layer["bz"], layer["br"], layer["bc"]])
        gx = layer_input @ w.T + b
        h, z, r, c = gru_forward_scan(np.ascontiguousarray(gx),
                                      layer["uz"], layer["ur"], layer["uc"],
                                      np.ascontiguousarray(h0, dtype=np.float64))
        if want_cache:
            cache.append({"inputs": layer_input, "h": h, "z": z, "r": r,
                          "c": c, "h0": np.asarray(h0, dtype=np.float64)})
        finals.append(h[-1].copy())
        layer_input = h
    emotion = layer_input @ net.head_w + net.head_b[0]
    aux = None
    if net.aux_w is not None:
        aux = layer_input @ net.aux_w.T + net.aux_b
    return PredictionBundle(emotion_trace=emotion, aux_trace=aux,
                            final_hidden=finals, cache=cache)


def backward(net: GruNetwork, bundle: PredictionBundle,
             emotion_grad: np.ndarray,
             aux_grad: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact BPTT over the chunk given per-frame output gradients.

    emotion_grad: (T,) dLoss/d(emotion output). aux_grad: (T, aux_dim) or
    None. Returns a dict keyed like iter_params().
    """
    if bundle.cache is None:
        raise RuntimeError("backward() needs a bundle produced with want_cache=True")
    emotion_grad = np.asarray(emotion_grad, dtype=np.float64).reshape(-1)
    top_h = bundle.cache[-1]["h"]
    grads: dict[str, np.ndarray] = {}
    grads["emotion.w"] = top_h.T @ emotion_grad
    grads["emotion.b"] = np.array([emotion_grad.sum()])
    dh_top = np.outer(emotion_grad, net.head_w)
    if net.aux_w is not None:
        if aux_grad is None:
            aux_grad = np.zeros((top_h.shape[0], net.config.aux_dim))
        aux_grad = np.asarray(aux_grad, dtype=np.float64)
        grads["aux.w"] = aux_grad.T @ top_h
        grads["aux.b"] = aux_grad.sum(axis=0)
        dh_top = dh_top + aux_grad @ net.aux_w
    elif aux_grad is not None:
        raise ValueError("aux_grad given but the network has no auxiliary head")

    dh_ext = dh_top
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        cached = bundle.cache[i]
        dg = gru_backward_scan(np.ascontiguousarray(dh_ext),
                               cached["z"], cached["r"], cached["c"],
                               cached["h"], cached["h0"],
                               layer["uz"], layer["ur"], layer["uc"])
        h_dim = net.config.units_per_layer
        dgz, dgr, dgc = dg[:, :h_dim], dg[:, h_dim:2 * h_dim], dg[:, 2 * h_dim:]
        h_prev = np.vstack([cached["h0"][None, :], cached["h"][:-1]])
        a = cached["inputs"]
        grads[f"layer{i}.wz"] = dgz.T @ a
        grads[f"layer{i}.wr"] = dgr.T @ a
        grads[f"layer{i}.wc"] = dgc.T @ a
        grads[f"layer{i}.uz"] = dgz.T @ h_prev
        grads[f"layer{i}.ur"] = dgr.T @ h_prev
        grads[f"layer{i}.uc"] = dgc.T @ (cached["r"] * h_prev)
        grads[f"layer{i}.bz"] = dgz.sum(axis=0)
        grads[f"layer{i}.br"] = dgr.sum(axis=0)
        grads[f"layer{i}.bc"] = dgc.sum(axis=0)
        if i > 0:
            dh_ext = dgz @ layer["wz"] + dgr @ layer["wr"] + dgc @ layer["wc"]
    return grads


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam_state(net: GruNetwork, learning_rate: float = 0.001) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    for name, arr in net.iter_params():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(net: GruNetwork, grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[GruNetwork, AdamState]:
    """Bias-corrected Adam update in place; skips the step (and reports) on a
    non-finite gradient."""
    params = dict(net.iter_params())
    for name, arr in params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"missing gradient for parameter {name}")
        if np.shape(g) != arr.shape:
            raise ValueError(
                f"gradient shape {np.shape(g)} does not match {name} {arr.shape}")
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient encountered; skipping Adam step")
            return net, state
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, arr in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        arr -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return net, state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Global-norm clipping in place; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Flattened-parameter utilities and the finite-difference oracle
# ---------------------------------------------------------------------------

def get_flat_params(net: GruNetwork) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in net.iter_params()])


def set_flat_params(net: GruNetwork, flat: np.ndarray):
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for _, arr in net.iter_params():
        arr[...] = flat[offset:offset + arr.size].reshape(arr.shape)
        offset += arr.size
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, network needs {offset}")


def flatten_gradients(net: GruNetwork, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(grads[name]).ravel()
                           for name, _ in net.iter_params()])


def numeric_gradient(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray,
                     h: float = 1e-4) -> np.ndarray:
    """Central finite differences, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step size must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + h
        up = loss_fn(probe)
        probe[i] = theta[i] - h
        down = loss_fn(probe)
        probe[i] = theta[i]
        grad[i] = (up - down) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, net: GruNetwork, adam: AdamState | None = None):
    """Self-describing npz: config JSON + parameters (+ Adam state)."""
    payload = {"config": np.frombuffer(
        json.dumps(net.config.to_dict(), sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in net.iter_params():
        payload[f"p/{name}"] = arr
    if adam is not None:
        payload["adam"] = np.array([adam.learning_rate, adam.beta1, adam.beta2,
                                    adam.eps, float(adam.step)])
        for name in adam.m:
            payload[f"m/{name}"] = adam.m[name]
            payload[f"v/{name}"] = adam.v[name]
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[GruNetwork, AdamState | None]:
    with np.load(path) as data:
        config = NetworkConfig(**json.loads(bytes(data["config"]).decode()))
        net = init_network(config)
        for name, arr in net.iter_params():
            arr[...] = data[f"p/{name}"]
        adam = None
        if "adam" in data:
            lr, b1, b2, eps, step = data["adam"]
            adam = AdamState(learning_rate=float(lr), beta1=float(b1),
                             beta2=float(b2), eps=float(eps), step=int(step))
            for name, arr in net.iter_params():
                adam.m[name] = data[f"m/{name}"].copy()
                adam.v[name] = data[f"v/{name}"].copy()
    return net, adam
