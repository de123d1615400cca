"""Model construction, naming, serialization, and per-frame inference.

Two families are supported.  NSnet2 is a fully recurrent stack
(FC-GRU-GRU-FC-FC-FC with ReLU activations and a sigmoid output).  CRUSE is a
convolutional-recurrent U-Net: a strided causal conv encoder, a grouped
recurrent bottleneck fed with the encoder output flattened channel-major,
and a mirrored transposed-conv decoder with per-layer skip connections.

Model names follow ``NSnet2-<R>`` and ``CRUSE<L>-<CL>-<N>x<GRU|LSTM><P>``,
e.g. ``CRUSE4-128-1xGRU4``: 4 encoder/decoder layers with channels
16-32-64-128 and one layer of 4 parallel GRUs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    GruWeights,
    LstmWeights,
    activation_apply,
    conv2d_step,
    fc_forward,
    gru_step,
    lstm_step,
    skip_combine,
    tconv2d_step,
    zero_gru_weights,
    zero_lstm_weights,
)

DEFAULT_NUM_BINS = 161
FIRST_CHANNELS = 16
NSNET2_FC_WIDTH = 600

BUNDLE_MAGIC = b"CRUSEWB1"
BUNDLE_FORMAT = "cruse-weights/1"

# Weight-init LCG (64-bit): state <- (MULT * state + INC) mod 2**64.  Each
# draw maps the top 53 bits of the new state to uniform (-0.1, 0.1).
LCG_MULT = 6364136223846793005
LCG_INC = 1442695040888963407
INIT_WEIGHT_RANGE = 0.1

_CONVENTIONS = {
    "matrix_layout": "row-major (out, in)",
    "gru_gate_order": "r,z,n",
    "gru_variant": "reset applied after the recurrent matmul",
    "lstm_gate_order": "i,f,g,o",
    "leaky_relu_slope": 0.2,
    "freq_padding": "symmetric 1-sample zero pad before each strided encoder conv",
    "tconv_crop": "symmetric, extra sample removed at the high-frequency end",
    "bottleneck_flatten": "channel-major (all frequencies of channel 1 first)",
    "dtype": "float32 little-endian",
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; see the family helpers below."""

    family: str                      # "nsnet2" | "cruse"
    num_bins: int = DEFAULT_NUM_BINS
    rnn_width: int = 0               # nsnet2 GRU width R
    layers: int = 0                  # cruse encoder/decoder depth L
    channels: tuple[int, ...] = ()   # cruse C_1..C_L
    rnn_kind: str = "gru"
    rnn_layers: int = 1              # stacked RNN layers N
    parallel_groups: int = 1         # disconnected parallel RNNs P
    skip_kind: str = "add"           # none | add | add_conv1x1 | concat
    kernel: tuple[int, int] = (2, 3)


def nsnet2_spec(rnn_width: int, num_bins: int = DEFAULT_NUM_BINS) -> ModelSpec:
    if rnn_width < 1:
        raise ValueError(f"NSnet2 RNN width must be positive, got {rnn_width}")
    return ModelSpec(family="nsnet2", num_bins=num_bins, rnn_width=rnn_width)


def cruse_spec(
    layers: int = 4,
    last_channels: int = 128,
    rnn_kind: str = "gru",
    rnn_layers: int = 1,
    parallel_groups: int = 1,
    skip_kind: str = "add",
    kernel: tuple[int, int] = (2, 3),
    num_bins: int = DEFAULT_NUM_BINS,
) -> ModelSpec:
    """CRUSE spec with channels starting at 16 and doubling, except C_L is free."""
    if layers < 1:
        raise ValueError(f"CRUSE needs at least one encoder layer, got {layers}")
    if rnn_kind not in ("gru", "lstm"):
        raise ValueError(f"unknown RNN kind {rnn_kind!r}")
    if skip_kind not in ("none", "add", "add_conv1x1", "concat"):
        raise ValueError(f"unknown skip kind {skip_kind!r}")
    if kernel not in ((2, 3), (1, 3)):
        raise ValueError(f"unsupported kernel {kernel}; use (2, 3) or (1, 3)")
    channels = tuple(FIRST_CHANNELS * 2**i for i in range(layers - 1)) + (last_channels,)
    return ModelSpec(
        family="cruse",
        num_bins=num_bins,
        layers=layers,
        channels=channels,
        rnn_kind=rnn_kind,
        rnn_layers=rnn_layers,
        parallel_groups=parallel_groups,
        skip_kind=skip_kind,
        kernel=kernel,
    )


_NSNET2_RE = re.compile(r"^NSnet2-(\d+)$")
_CRUSE_RE = re.compile(r"^CRUSE(\d+)-(\d+)-(\d+)x(GRU|LSTM)(\d+)$")


def parse_model_name(name: str) -> ModelSpec:
    """Parse a canonical model name into a :class:`ModelSpec`.

    Raises:
        ValueError: naming the offending token for malformed names.
    """
    if name.startswith("NSnet2"):
        m = _NSNET2_RE.match(name)
        if not m:
            raise ValueError(f"malformed NSnet2 name {name!r}: expected NSnet2-<width>")
        return nsnet2_spec(int(m.group(1)))
    if name.startswith("CRUSE"):
        m = _CRUSE_RE.match(name)
        if not m:
            raise ValueError(
                f"malformed CRUSE name {name!r}: expected CRUSE<L>-<CL>-<N>x<GRU|LSTM><P>"
            )
        return cruse_spec(
            layers=int(m.group(1)),
            last_channels=int(m.group(2)),
            rnn_layers=int(m.group(3)),
            rnn_kind=m.group(4).lower(),
            parallel_groups=int(m.group(5)),
        )
    raise ValueError(f"unknown model family in {name!r}: expected NSnet2-... or CRUSE...")


def format_model_name(spec: ModelSpec) -> str:
    """Canonical name; round-trips through :func:`parse_model_name`."""
    if spec.family == "nsnet2":
        return f"NSnet2-{spec.rnn_width}"
    kind = spec.rnn_kind.upper()
    return (
        f"CRUSE{spec.layers}-{spec.channels[-1]}-{spec.rnn_layers}x{kind}{spec.parallel_groups}"
    )


# ---------------------------------------------------------------------------
# Graph containers


@dataclass
class FcLayer:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def param_arrays(self):
        return [("weight", self.weight), ("bias", self.bias)]


@dataclass
class RnnLayer:
    """Grouped recurrent block: P disconnected stacks of N cells each."""

    name: str
    kind: str                    # "gru" | "lstm"
    groups: list                 # P entries, each a list of N cell weights

    def param_arrays(self):
        out = []
        for g, stack in enumerate(self.groups):
            for n, cell in enumerate(stack):
                tag = f"g{g}n{n}"
                out += [
                    (f"{tag}.w_input", cell.w_input),
                    (f"{tag}.w_hidden", cell.w_hidden),
                    (f"{tag}.b_input", cell.b_input),
                    (f"{tag}.b_hidden", cell.b_hidden),
                ]
        return out

    @property
    def width(self) -> int:
        return sum(stack[0].width for stack in self.groups)


@dataclass
class ConvLayer:
    name: str
    weight: np.ndarray           # (c_out, c_in, kt, kf)
    bias: np.ndarray
    activation: str
    in_freq: int
    out_freq: int

    def param_arrays(self):
        return [("weight", self.weight), ("bias", self.bias)]


@dataclass
class TconvLayer:
    name: str
    weight: np.ndarray           # (c_out, c_in, kt, kf)
    bias: np.ndarray
    activation: str
    in_freq: int
    f_target: int

    def param_arrays(self):
        return [("weight", self.weight), ("bias", self.bias)]


@dataclass
class SkipLayer:
    name: str
    kind: str
    freq: int = 0                    # width of the skipped tensor
    scale: np.ndarray | None = None  # (channels,), add_conv1x1 only
    bias: np.ndarray | None = None

    def param_arrays(self):
        if self.kind != "add_conv1x1":
            return []
        return [("scale", self.scale), ("bias", self.bias)]


@dataclass
class ModelGraph:
    """Ordered layers plus skip wiring for one architecture instance.

    Weights are treated as immutable during inference, so one graph can be
    shared across threads; all per-stream mutability lives in StreamState.
    """

    spec: ModelSpec
    stack: list = field(default_factory=list)     # nsnet2 sequential path
    encoder: list = field(default_factory=list)   # cruse
    bottleneck: RnnLayer | None = None
    decoder: list = field(default_factory=list)
    skips: list = field(default_factory=list)     # per encoder layer, innermost last

    def iter_layers(self):
        """All layers in canonical (execution and serialization) order."""
        if self.spec.family == "nsnet2":
            yield from self.stack
            return
        yield from self.encoder
        yield self.bottleneck
        yield from self.decoder
        yield from self.skips

    def param_count(self) -> int:
        return sum(arr.size for layer in self.iter_layers() for _, arr in layer.param_arrays())


def conv_freq_sizes(num_bins: int, layers: int) -> list[int]:
    """Frequency widths along the encoder: 161 -> 81 -> 41 -> 21 -> 11 for L=4."""
    sizes = [num_bins]
    for _ in range(layers):
        sizes.append((sizes[-1] - 1) // 2 + 1)
    return sizes


def _make_cell(kind: str, in_dims: int, width: int):
    if kind == "gru":
        return zero_gru_weights(in_dims, width)
    return zero_lstm_weights(in_dims, width)


def build_model(spec: ModelSpec) -> ModelGraph:
    """Construct a zero-weighted graph with all shapes resolved.

    Raises:
        ValueError: when the CRUSE bottleneck width is not divisible by the
            number of parallel groups.
    """
    k = spec.num_bins
    if spec.family == "nsnet2":
        r = spec.rnn_width
        stack = [
            FcLayer("fc_in", np.zeros((r, k)), np.zeros(r), "relu"),
            RnnLayer("gru1", "gru", [[zero_gru_weights(r, r)]]),
            RnnLayer("gru2", "gru", [[zero_gru_weights(r, r)]]),
            FcLayer("fc1", np.zeros((NSNET2_FC_WIDTH, r)), np.zeros(NSNET2_FC_WIDTH), "relu"),
            FcLayer(
                "fc2",
                np.zeros((NSNET2_FC_WIDTH, NSNET2_FC_WIDTH)),
                np.zeros(NSNET2_FC_WIDTH),
                "relu",
            ),
            FcLayer("fc_out", np.zeros((k, NSNET2_FC_WIDTH)), np.zeros(k), "sigmoid"),
        ]
        return ModelGraph(spec=spec, stack=stack)

    if spec.family != "cruse":
        raise ValueError(f"unknown model family {spec.family!r}")

    L = spec.layers
    kt, kf = spec.kernel
    freqs = conv_freq_sizes(k, L)
    chans = (1,) + spec.channels

    encoder = [
        ConvLayer(
            f"enc{l + 1}",
            np.zeros((chans[l + 1], chans[l], kt, kf)),
            np.zeros(chans[l + 1]),
            "leaky_relu",
            in_freq=freqs[l],
            out_freq=freqs[l + 1],
        )
        for l in range(L)
    ]

    width = spec.channels[-1] * freqs[-1]
    p = spec.parallel_groups
    if width % p:
        raise ValueError(
            f"bottleneck width {width} ({spec.channels[-1]} channels x {freqs[-1]} bins) "
            f"is not divisible by {p} parallel groups"
        )
    group_width = width // p
    groups = [
        [_make_cell(spec.rnn_kind, group_width, group_width) for _ in range(spec.rnn_layers)]
        for _ in range(p)
    ]
    bottleneck = RnnLayer("rnn", spec.rnn_kind, groups)

    concat = spec.skip_kind == "concat"
    decoder = []
    for j in range(L):
        c_in = spec.channels[L - 1 - j]
        c_out = chans[L - 1 - j]
        decoder.append(
            TconvLayer(
                f"dec{j + 1}",
                np.zeros((c_out, c_in * (2 if concat else 1), kt, kf)),
                np.zeros(c_out),
                "sigmoid" if j == L - 1 else "leaky_relu",
                in_freq=freqs[L - j],
                f_target=freqs[L - 1 - j],
            )
        )

    skips = []
    for j in range(L):  # skips[j] joins encoder L-j with decoder j+1
        c = spec.channels[L - 1 - j]
        freq = freqs[L - j]
        if spec.skip_kind == "add_conv1x1":
            skips.append(SkipLayer(f"skip{j + 1}", spec.skip_kind, freq, np.zeros(c), np.zeros(c)))
        else:
            skips.append(SkipLayer(f"skip{j + 1}", spec.skip_kind, freq))

    return ModelGraph(spec=spec, encoder=encoder, bottleneck=bottleneck, decoder=decoder, skips=skips)


# ---------------------------------------------------------------------------
# Deterministic test weights

_LCG_BLOCK = 1 << 14


def _lcg_tables(block: int):
    a = np.uint64(LCG_MULT)
    powers = np.ones(block, dtype=np.uint64)
    powers[1:] = a
    powers = np.cumprod(powers, dtype=np.uint64)          # a^0 .. a^(B-1), mod 2^64
    partial = np.cumsum(powers, dtype=np.uint64)          # sum_{i<k} a^i for k=1..B
    return powers * a, partial * np.uint64(LCG_INC)


_LCG_A, _LCG_C = _lcg_tables(_LCG_BLOCK)


class _LcgStream:
    """Vectorized 64-bit LCG, bit-identical to the scalar recurrence."""

    def __init__(self, seed: int):
        self.state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def uniform(self, n: int) -> np.ndarray:
        out = np.empty(n)
        i = 0
        while i < n:
            k = min(_LCG_BLOCK, n - i)
            states = _LCG_A[:k] * self.state + _LCG_C[:k]
            mant = (states >> np.uint64(11)).astype(np.float64) / float(1 << 53)
            out[i : i + k] = -INIT_WEIGHT_RANGE + 2.0 * INIT_WEIGHT_RANGE * mant
            self.state = states[k - 1]
            i += k
        return out


def init_test_weights(graph: ModelGraph, seed: int) -> ModelGraph:
    """Fill all weights from the documented LCG, uniform in (-0.1, 0.1).

    Identical seeds produce bit-identical weights on any platform.  Arrays are
    filled in canonical layer order, each flattened row-major.  Values are
    quantized to float32 so that weight bundles round-trip bit-exactly.
    """
    stream = _LcgStream(seed)
    for layer in graph.iter_layers():
        for _, arr in layer.param_arrays():
            values = stream.uniform(arr.size).astype(np.float32).astype(np.float64)
            arr[...] = values.reshape(arr.shape)
    return graph


# ---------------------------------------------------------------------------
# Weight bundles: JSON manifest + float32 little-endian blob

def _manifest(graph: ModelGraph) -> dict:
    layers = []
    for layer in graph.iter_layers():
        arrays = [{"field": f, "shape": list(a.shape)} for f, a in layer.param_arrays()]
        layers.append({"name": layer.name, "kind": type(layer).__name__, "arrays": arrays})
    spec = graph.spec
    return {
        "format": BUNDLE_FORMAT,
        "name": format_model_name(spec),
        "spec": {
            "family": spec.family,
            "num_bins": spec.num_bins,
            "rnn_width": spec.rnn_width,
            "layers": spec.layers,
            "channels": list(spec.channels),
            "rnn_kind": spec.rnn_kind,
            "rnn_layers": spec.rnn_layers,
            "parallel_groups": spec.parallel_groups,
            "skip_kind": spec.skip_kind,
            "kernel": list(spec.kernel),
        },
        "conventions": _CONVENTIONS,
        "layers": layers,
        "total_params": graph.param_count(),
    }


def save_weights(graph: ModelGraph, path) -> None:
    """Write a weight bundle: magic, manifest length, JSON manifest, blob."""
    manifest = json.dumps(_manifest(graph), indent=1).encode()
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for layer in graph.iter_layers()
        for _, arr in layer.param_arrays()
    )
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(len(manifest).to_bytes(4, "little"))
        fh.write(manifest)
        fh.write(blob)


def _spec_from_manifest(m: dict) -> ModelSpec:
    s = m["spec"]
    return ModelSpec(
        family=s["family"],
        num_bins=s["num_bins"],
        rnn_width=s["rnn_width"],
        layers=s["layers"],
        channels=tuple(s["channels"]),
        rnn_kind=s["rnn_kind"],
        rnn_layers=s["rnn_layers"],
        parallel_groups=s["parallel_groups"],
        skip_kind=s["skip_kind"],
        kernel=tuple(s["kernel"]),
    )


def load_weights(path) -> ModelGraph:
    """Read a weight bundle back into an executable graph.

    Raises:
        ValueError: on bad magic, manifest/graph disagreement, or a blob whose
            size does not match the declared parameter count.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(BUNDLE_MAGIC)] != BUNDLE_MAGIC:
        raise ValueError(f"{path}: not a weight bundle (bad magic)")
    off = len(BUNDLE_MAGIC)
    mlen = int.from_bytes(raw[off : off + 4], "little")
    off += 4
    try:
        manifest = json.loads(raw[off : off + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt manifest: {exc}") from exc
    off += mlen
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{path}: unsupported bundle format {manifest.get('format')!r}")

    graph = build_model(_spec_from_manifest(manifest))
    built = list(graph.iter_layers())
    declared = manifest["layers"]
    if len(built) != len(declared):
        raise ValueError(
            f"{path}: manifest lists {len(declared)} layers, model has {len(built)}"
        )

    blob = raw[off:]
    expected = graph.param_count() * 4
    if len(blob) != expected:
        raise ValueError(
            f"{path}: weight blob is {len(blob)} bytes, expected {expected} "
            f"({graph.param_count()} float32 parameters)"
        )

    pos = 0
    for layer, entry in zip(built, declared):
        arrays = layer.param_arrays()
        if entry["name"] != layer.name or len(entry["arrays"]) != len(arrays):
            raise ValueError(f"{path}: manifest layer {entry['name']!r} does not match model")
        for (fname, arr), decl in zip(arrays, entry["arrays"]):
            if decl["field"] != fname or tuple(decl["shape"]) != arr.shape:
                raise ValueError(
                    f"{path}: layer {layer.name!r} field {fname!r}: manifest shape "
                    f"{decl['shape']} does not match model shape {list(arr.shape)}"
                )
            n = arr.size * 4
            arr[...] = (
                np.frombuffer(blob[pos : pos + n], dtype="<f4").astype(np.float64).reshape(arr.shape)
            )
            pos += n
    return graph


# ---------------------------------------------------------------------------
# Streaming inference


class StreamState:
    """Per-stream recurrent and convolutional carryover; zeros at start.

    One instance per audio stream; never share between concurrent streams.
    """

    def __init__(self, graph: ModelGraph):
        self.layer_states = {}
        for layer in graph.iter_layers():
            if isinstance(layer, RnnLayer):
                if layer.kind == "gru":
                    self.layer_states[layer.name] = [
                        [np.zeros(cell.width) for cell in stack] for stack in layer.groups
                    ]
                else:
                    self.layer_states[layer.name] = [
                        [(np.zeros(cell.width), np.zeros(cell.width)) for cell in stack]
                        for stack in layer.groups
                    ]
            elif isinstance(layer, (ConvLayer, TconvLayer)):
                self.layer_states[layer.name] = None  # lazily zero-initialized


def create_state(graph: ModelGraph) -> StreamState:
    return StreamState(graph)


def _rnn_block_step(layer: RnnLayer, x: np.ndarray, states):
    p = len(layer.groups)
    if x.shape[0] % p:
        raise ValueError(f"bottleneck width {x.shape[0]} not divisible by {p} groups")
    chunk = x.shape[0] // p
    outs = []
    for g, stack in enumerate(layer.groups):
        y = x[g * chunk : (g + 1) * chunk]
        for n, cell in enumerate(stack):
            if layer.kind == "gru":
                y, states[g][n] = gru_step(cell, y, states[g][n])
            else:
                h, c = states[g][n]
                y, h, c = lstm_step(cell, y, h, c)
                states[g][n] = (h, c)
        outs.append(y)
    return np.concatenate(outs)


def infer_frame(graph: ModelGraph, state: StreamState, features: np.ndarray) -> np.ndarray:
    """One forward pass over a single feature frame.

    Advances ``state`` in place and returns the per-bin suppression gains,
    each strictly inside (0, 1).
    """
    k = graph.spec.num_bins
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (k,):
        raise ValueError(f"expected features of shape ({k},), got {features.shape}")
    ls = state.layer_states

    if graph.spec.family == "nsnet2":
        x = features
        for layer in graph.stack:
            if isinstance(layer, FcLayer):
                x = activation_apply(layer.activation, fc_forward(layer.weight, layer.bias, x))
            else:
                x = _rnn_block_step(layer, x, ls[layer.name])
        return x

    x = features[None, :]  # 1 input channel
    enc_outs = []
    for layer in graph.encoder:
        y, ls[layer.name] = conv2d_step(layer.weight, layer.bias, x, ls[layer.name])
        x = activation_apply(layer.activation, y)
        enc_outs.append(x)

    flat = x.reshape(-1)  # channel-major
    flat = _rnn_block_step(graph.bottleneck, flat, ls[graph.bottleneck.name])
    x = flat.reshape(x.shape)

    for j, layer in enumerate(graph.decoder):
        skip = graph.skips[j]
        x = skip_combine(skip.kind, enc_outs[-1 - j], x, skip.scale, skip.bias)
        y, ls[layer.name] = tconv2d_step(layer.weight, layer.bias, x, ls[layer.name], layer.f_target)
        x = activation_apply(layer.activation, y)
    return x[0]


def infer_utterance(graph: ModelGraph, features: np.ndarray) -> np.ndarray:
    """Run a whole utterance from a fresh zero state; rows are gain frames.

    Matches repeated :func:`infer_frame` calls exactly.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected (frames, bins) features, got shape {features.shape}")
    state = create_state(graph)
    gains = np.empty_like(features)
    for n in range(features.shape[0]):
        gains[n] = infer_frame(graph, state, features[n])
    return gains
