"""Layer graph, manifest interchange format, core mapping and forward passes.

A network is an ordered list of :class:`LayerSpec` (linear / conv2d /
batchnorm / relu / maxpool). Linear and conv layers carry natural
parameters ``lambda``; batchnorm carries frozen inference-time
coefficients. The JSON manifest is the interchange format any trainer can
emit:

    {"format_version": 1, "encoding": "base64" | "list",
     "layers": [{"name": ..., "kind": ..., "shape": {...}, "params": {...}}]}

where numeric arrays are row-major lists or base64-encoded little-endian
32-bit floats depending on the ``encoding`` flag.

Deployment maps each parameter layer onto 128x128 crossbar tiles; the
forward pass accumulates per-core 16-bit MVM outputs in a 32-bit tile
accumulator, applies batch-norm in floating point after accumulation
(never folded into the stored parameters), and keeps ReLU / max-pool
exact.
"""

from __future__ import annotations

import base64
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .crossbar import Core, CoreConfig, CoreReadState, mvm, program_core
from .device import (
    DEFAULT_PROGRAM_MAX_ITERS,
    DEFAULT_PROGRAM_TOLERANCE,
    NoiseModel,
)
from .lfsr import Lfsr32
from .reparam import LAMBDA_CLIP, Z_CLIP, lambda_to_p, p_to_z

MANIFEST_VERSION = 1
DEPLOYMENT_VERSION = 1

PARAM_KINDS = ("linear", "conv2d")
LAYER_KINDS = ("linear", "conv2d", "batchnorm", "relu", "maxpool")


class ManifestError(ValueError):
    pass


@dataclass
class LayerSpec:
    name: str
    kind: str
    shape: dict
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ManifestError(f"unknown layer kind {self.kind!r}")
        for arr in self.params.values():
            if not np.all(np.isfinite(arr)):
                raise ManifestError(f"layer {self.name}: non-finite parameters")
        if self.kind == "conv2d":
            lam = self.params["lambda"]
            if lam.ndim != 4 or lam.shape[2] != lam.shape[3]:
                raise ManifestError(f"layer {self.name}: conv kernels must be square")
        if self.kind == "batchnorm":
            gamma = self.params["gamma"]
            tiny = np.flatnonzero(np.abs(gamma) < 1e-12)
            if tiny.size:
                warnings.warn(
                    f"layer {self.name}: near-zero batchnorm gain at channels {tiny.tolist()}"
                )


class NetworkModel:
    """Ordered layer graph with manifest (de)serialization."""

    def __init__(self, layers: list[LayerSpec]):
        self.layers = list(layers)

    # --- manifest IO --------------------------------------------------------

    def to_manifest(self, encoding: str = "base64") -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "encoding": encoding,
            "layers": [
                {
                    "name": l.name,
                    "kind": l.kind,
                    "shape": l.shape,
                    "params": {
                        k: encode_array(v, encoding) for k, v in l.params.items()
                    },
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_manifest(cls, doc: dict) -> "NetworkModel":
        if doc.get("format_version") != MANIFEST_VERSION:
            raise ManifestError("unsupported manifest format_version")
        encoding = doc.get("encoding", "list")
        layers = []
        for entry in doc["layers"]:
            params = {
                k: decode_array(v, encoding) for k, v in entry.get("params", {}).items()
            }
            layers.append(
                LayerSpec(
                    name=entry["name"],
                    kind=entry["kind"],
                    shape=entry.get("shape", {}),
                    params=params,
                )
            )
        return cls(layers)

    def save(self, path, encoding: str = "base64") -> None:
        with open(path, "w") as fh:
            json.dump(self.to_manifest(encoding), fh)

    @classmethod
    def load(cls, path) -> "NetworkModel":
        with open(path) as fh:
            return cls.from_manifest(json.load(fh))

    # --- parameter views ------------------------------------------------------

    def z_for_layer(self, layer: LayerSpec) -> np.ndarray:
        """Clipped reparametrized values for a parameter layer."""
        lam = layer.params["lambda"]
        return p_to_z(lambda_to_p(lam))

    # --- software forward -------------------------------------------------------

    def forward_software(self, x, rng: np.random.Generator | None = None):
        """Floating-point forward pass with ideal parameters.

        With an RNG, every weight is sampled as ``sign(z + N(0,1))`` (fresh
        per call); without one the pass is the deterministic sign-weight
        network. Returns the logit vector.
        """
        h = np.asarray(x, dtype=float)
        for layer in self.layers:
            if layer.kind in PARAM_KINDS:
                z = self.z_for_layer(layer)
                if layer.kind == "conv2d":
                    stride = layer.shape.get("stride", 1)
                    padding = layer.shape.get("padding", 0)
                    out_hw = conv_output_hw(h.shape, layer.shape["kernel"], stride, padding)
                    cols = im2col(h, layer.shape["kernel"], stride, padding)
                    z2d = z.reshape(z.shape[0], -1).T
                else:
                    cols = None
                    z2d = z
                if rng is not None:
                    z2d = z2d + rng.normal(0.0, 1.0, size=z2d.shape)
                w = np.where(z2d >= 0.0, 1.0, -1.0)
                if layer.kind == "linear":
                    h = h @ w
                else:
                    h = (w.T @ cols).reshape(z.shape[0], *out_hw)
            else:
                h = _apply_nonparam(layer, h)
        return h


def _apply_nonparam(layer: LayerSpec, h):
    if layer.kind == "batchnorm":
        g, b = layer.params["gamma"], layer.params["beta"]
        mu, sigma = layer.params["mean"], layer.params["sigma"]
        if h.ndim == 3:
            return g[:, None, None] * (h - mu[:, None, None]) / sigma[:, None, None] + b[:, None, None]
        return g * (h - mu) / sigma + b
    if layer.kind == "relu":
        return np.maximum(h, 0)
    if layer.kind == "maxpool":
        return maxpool2d(h, layer.shape["kernel"], layer.shape["stride"])
    raise ManifestError(f"unexpected layer kind {layer.kind}")


# --- array encoding -----------------------------------------------------------


def encode_array(arr: np.ndarray, encoding: str) -> dict:
    arr = np.asarray(arr)
    if encoding == "list":
        return {"shape": list(arr.shape), "data": arr.astype(float).ravel().tolist()}
    if encoding == "base64":
        raw = arr.astype("<f4").tobytes()
        return {"shape": list(arr.shape), "b64": base64.b64encode(raw).decode("ascii")}
    raise ManifestError(f"unknown encoding {encoding!r}")


def decode_array(entry: dict, encoding: str) -> np.ndarray:
    shape = tuple(entry["shape"])
    if encoding == "list":
        return np.asarray(entry["data"], dtype=float).reshape(shape)
    if encoding == "base64":
        raw = base64.b64decode(entry["b64"])
        return np.frombuffer(raw, dtype="<f4").astype(float).reshape(shape)
    raise ManifestError(f"unknown encoding {encoding!r}")


def encode_array_f64(arr: np.ndarray) -> dict:
    raw = np.asarray(arr, dtype="<f8").tobytes()
    return {"shape": list(np.shape(arr)), "b64f64": base64.b64encode(raw).decode("ascii")}


def decode_array_f64(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["b64f64"])
    return np.frombuffer(raw, dtype="<f8").reshape(tuple(entry["shape"])).copy()


# --- tiling -------------------------------------------------------------------


@dataclass(frozen=True)
class TileSlice:
    row0: int
    row1: int
    col0: int
    col1: int


@dataclass
class TileMapping:
    weight_shape: tuple[int, int]
    slices: list[TileSlice]


def partition_layer(
    weight_shape: tuple[int, int], tile_rows: int = 128, tile_cols: int = 128
) -> TileMapping:
    """Tile a weight matrix onto cores; last-tile remainders are padded."""
    m_tot, n_tot = weight_shape
    if m_tot < 1 or n_tot < 1:
        raise ValueError("weight dimensions must be >= 1")
    slices = []
    for r0 in range(0, m_tot, tile_rows):
        for c0 in range(0, n_tot, tile_cols):
            slices.append(
                TileSlice(r0, min(r0 + tile_rows, m_tot), c0, min(c0 + tile_cols, n_tot))
            )
    return TileMapping(weight_shape=(m_tot, n_tot), slices=slices)


# --- conv lowering -------------------------------------------------------------


def conv_output_hw(x_shape, kernel: int, stride: int = 1, padding: int = 0):
    if len(x_shape) != 3:
        raise ValueError("conv input must be (C, H, W)")
    _, h, w = x_shape
    out_h = (h + 2 * padding - kernel) // stride + 1
    out_w = (w + 2 * padding - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("kernel/stride inconsistent with input size")
    return out_h, out_w


def im2col(x: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Lower (C, H, W) input to a (C*k*k, positions) patch matrix."""
    x = np.asarray(x)
    out_h, out_w = conv_output_hw(x.shape, kernel, stride, padding)
    c = x.shape[0]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c * kernel * kernel, out_h * out_w), dtype=x.dtype)
    pos = 0
    for i in range(out_h):
        for j in range(out_w):
            patch = x[:, i * stride : i * stride + kernel, j * stride : j * stride + kernel]
            cols[:, pos] = patch.ravel()
            pos += 1
    return cols


def maxpool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    x = np.asarray(x)
    c, h, w = x.shape
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("pool kernel/stride inconsistent with input size")
    out = np.empty((c, out_h, out_w), dtype=x.dtype)
    for i in range(out_h):
        for j in range(out_w):
            out[:, i, j] = x[
                :, i * stride : i * stride + kernel, j * stride : j * stride + kernel
            ].max(axis=(1, 2))
    return out


# --- deployment ----------------------------------------------------------------


@dataclass
class DeployedTile:
    sl: TileSlice
    core: Core


@dataclass
class DeployedLayer:
    name: str
    kind: str
    shape: dict
    params: dict
    tiles: list[DeployedTile] = field(default_factory=list)
    z: np.ndarray | None = None
    scale: float = 1.0  # input quantization scale for parameter layers


class Deployment:
    """A network programmed onto crossbar cores, plus its source model."""

    def __init__(
        self,
        network: NetworkModel,
        layers: list[DeployedLayer],
        config: CoreConfig,
        model: NoiseModel,
        seed: int,
        meta: dict | None = None,
    ):
        self.network = network
        self.layers = layers
        self.config = config
        self.model = model
        self.seed = seed
        self.meta = dict(meta or {})
        # Structural guarantee: batch-norm stays a separate layer, the
        # stored parameters are never rescaled by its coefficients.
        kinds = [l.kind for l in network.layers]
        if [l.kind for l in layers] != kinds:
            raise ManifestError("deployment must preserve the layer graph")

    # --- compensation -----------------------------------------------------------

    def set_compensation(self, t: float, nu_c: float = 0.06, quantize: bool = True) -> float:
        from .crossbar import set_drift_compensation

        weight = None
        for layer in self.layers:
            for tile in layer.tiles:
                weight = set_drift_compensation(tile.core, t, nu_c=nu_c, quantize=quantize)
        return weight if weight is not None else 1.0

    def clear_compensation(self) -> None:
        from .crossbar import clear_drift_compensation

        for layer in self.layers:
            for tile in layer.tiles:
                clear_drift_compensation(tile.core)

    @property
    def np_weight(self) -> float:
        for layer in self.layers:
            for tile in layer.tiles:
                return tile.core.np_weight
        return float(self.config.t_ratio)

    # --- forward ---------------------------------------------------------------

    def read_states(self, t: float) -> dict:
        """Per-(layer, tile) deterministic read state at time t."""
        states = {}
        for li, layer in enumerate(self.layers):
            for ti, tile in enumerate(layer.tiles):
                states[(li, ti)] = tile.core.read_state(t)
        return states

    def forward_member(
        self,
        x,
        t: float,
        rng: np.random.Generator,
        lfsr: Lfsr32,
        states: dict | None = None,
    ) -> np.ndarray:
        """One ensemble member's fixed-point forward pass; returns logits."""
        from .inference import quantize_input

        if states is None:
            states = self.read_states(t)
        h = np.asarray(x, dtype=float)
        for li, layer in enumerate(self.layers):
            if layer.kind in PARAM_KINDS:
                if layer.kind == "conv2d":
                    stride = layer.shape.get("stride", 1)
                    padding = layer.shape.get("padding", 0)
                    out_hw = conv_output_hw(h.shape, layer.shape["kernel"], stride, padding)
                    cols = im2col(h, layer.shape["kernel"], stride, padding)
                    q = quantize_input(cols, layer.scale)
                    y = np.stack(
                        [
                            self._linear_tiles(layer, li, q[:, p], rng, lfsr, states)
                            for p in range(q.shape[1])
                        ],
                        axis=1,
                    )
                    h = (y * layer.scale).reshape(-1, *out_hw)
                else:
                    q = quantize_input(h, layer.scale)
                    y = self._linear_tiles(layer, li, q, rng, lfsr, states)
                    h = y * layer.scale
            else:
                h = _apply_nonparam_deployed(layer, h)
        return h

    def _linear_tiles(self, layer, li, q, rng, lfsr, states) -> np.ndarray:
        """Tile-level MVM: per-core int16 outputs summed in a 32-bit accumulator."""
        m_tot, n_tot = layer.z.shape
        acc = np.zeros(n_tot, dtype=np.int32)
        wp_rows = self.config.wp_rows
        for ti, tile in enumerate(layer.tiles):
            sl = tile.sl
            x_pad = np.zeros(wp_rows, dtype=np.int64)
            x_pad[: sl.row1 - sl.row0] = q[sl.row0 : sl.row1]
            y16 = mvm(tile.core, x_pad, states[(li, ti)].t, rng, lfsr, states[(li, ti)])
            acc[sl.col0 : sl.col1] += y16[: sl.col1 - sl.col0].astype(np.int32)
        return acc


def _apply_nonparam_deployed(layer: DeployedLayer, h):
    spec = LayerSpec.__new__(LayerSpec)
    spec.name, spec.kind, spec.shape, spec.params = layer.name, layer.kind, layer.shape, layer.params
    return _apply_nonparam(spec, h)


def deploy(
    network: NetworkModel,
    config: CoreConfig,
    model: NoiseModel,
    seed: int,
    scales: list[float] | None = None,
    tolerance: float = DEFAULT_PROGRAM_TOLERANCE,
    max_iters: int = DEFAULT_PROGRAM_MAX_ITERS,
    tile_rows: int | None = None,
    tile_cols: int | None = None,
) -> Deployment:
    """Program every parameter layer of the network onto cores."""
    tile_rows = tile_rows or config.wp_rows
    tile_cols = tile_cols or config.cols
    if tile_rows > config.wp_rows or tile_cols > config.cols:
        raise ValueError("tile size exceeds core geometry")

    layers: list[DeployedLayer] = []
    scale_iter = iter(scales) if scales is not None else None
    param_index = 0
    for layer in network.layers:
        dl = DeployedLayer(
            name=layer.name, kind=layer.kind, shape=dict(layer.shape), params=dict(layer.params)
        )
        if layer.kind in PARAM_KINDS:
            z = network.z_for_layer(layer)
            if layer.kind == "conv2d":
                out_c = z.shape[0]
                z2d = z.reshape(out_c, -1).T
            else:
                z2d = z
            if config.frequentist:
                block_source = np.where(z2d >= 0.0, 1.0, -1.0)
            else:
                block_source = z2d
            mapping = partition_layer(z2d.shape, tile_rows, tile_cols)
            for ti, sl in enumerate(mapping.slices):
                rng = np.random.default_rng([seed, 0x5EED, param_index, ti])
                core = program_core(
                    block_source[sl.row0 : sl.row1, sl.col0 : sl.col1],
                    config,
                    model,
                    rng,
                    tolerance=tolerance,
                    max_iters=max_iters,
                )
                dl.tiles.append(DeployedTile(sl=sl, core=core))
            dl.z = z2d
            dl.scale = float(next(scale_iter)) if scale_iter is not None else 1.0
            param_index += 1
        layers.append(dl)
    return Deployment(network, layers, config, model, seed)


# --- deployment serialization ----------------------------------------------------


def save_deployment(dep: Deployment, path) -> None:
    doc = {
        "format_version": DEPLOYMENT_VERSION,
        "seed": dep.seed,
        "config": dep.config.to_dict(),
        "noise_model": dep.model.to_dict(),
        "noise_switches": {"prog": dep.model.prog_noise, "read": dep.model.read_noise},
        "manifest": dep.network.to_manifest("base64"),
        "meta": dep.meta,
        "layers": [],
    }
    for layer in dep.layers:
        entry = {"name": layer.name, "kind": layer.kind, "scale": layer.scale, "tiles": []}
        for tile in layer.tiles:
            entry["tiles"].append(
                {
                    "slice": [tile.sl.row0, tile.sl.row1, tile.sl.col0, tile.sl.col1],
                    "wp_pos": encode_array_f64(tile.core.wp_pos),
                    "wp_neg": encode_array_f64(tile.core.wp_neg),
                    "wp_pos_target": encode_array_f64(tile.core.wp_pos_target),
                    "wp_neg_target": encode_array_f64(tile.core.wp_neg_target),
                    "g_n": tile.core.g_n,
                }
            )
        doc["layers"].append(entry)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_deployment(path) -> Deployment:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != DEPLOYMENT_VERSION:
        raise ManifestError("unsupported deployment format_version")
    network = NetworkModel.from_manifest(doc["manifest"])
    config = CoreConfig.from_dict(doc["config"])
    model = NoiseModel.from_dict(doc["noise_model"])
    sw = doc.get("noise_switches", {})
    if not sw.get("prog", True):
        model = model.without_prog_noise()
    if not sw.get("read", True):
        model = model.without_read_noise()

    layers: list[DeployedLayer] = []
    for spec, entry in zip(network.layers, doc["layers"]):
        dl = DeployedLayer(
            name=spec.name, kind=spec.kind, shape=dict(spec.shape), params=dict(spec.params),
            scale=float(entry.get("scale", 1.0)),
        )
        if spec.kind in PARAM_KINDS:
            z = network.z_for_layer(spec)
            dl.z = z.reshape(z.shape[0], -1).T if spec.kind == "conv2d" else z
            for tentry in entry["tiles"]:
                r0, r1, c0, c1 = tentry["slice"]
                core = Core(
                    config=config,
                    model=model,
                    wp_pos=decode_array_f64(tentry["wp_pos"]),
                    wp_neg=decode_array_f64(tentry["wp_neg"]),
                    wp_pos_target=decode_array_f64(tentry["wp_pos_target"]),
                    wp_neg_target=decode_array_f64(tentry["wp_neg_target"]),
                    g_n=tentry["g_n"],
                )
                dl.tiles.append(DeployedTile(sl=TileSlice(r0, r1, c0, c1), core=core))
        layers.append(dl)
    dep = Deployment(network, layers, config, model, int(doc["seed"]), doc.get("meta"))
    return dep
