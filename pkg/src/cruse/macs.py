"""Deterministic multiply-accumulate accounting per layer and per model.

Counting convention: one unit per weight multiply and one per bias add;
activations, the STFT, and feature extraction are excluded.  Transposed
convolutions count only the multiplies that contribute to retained
(non-cropped) output positions, i.e. the work of a streaming implementation
that computes exactly the outputs it emits.  Per-second figures assume the
10 ms hop (100 frames/s).
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import GRU_GATES, LSTM_GATES
from .models import (
    ConvLayer,
    FcLayer,
    ModelGraph,
    RnnLayer,
    SkipLayer,
    TconvLayer,
    format_model_name,
)

FRAMES_PER_SECOND = 100


@dataclass(frozen=True)
class LayerMacs:
    name: str
    kind: str
    macs: int


@dataclass(frozen=True)
class MacReport:
    model: str
    layers: tuple[LayerMacs, ...]
    params: int

    @property
    def per_frame(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def per_second(self) -> int:
        return self.per_frame * FRAMES_PER_SECOND


def macs_fc(in_dims: int, out_dims: int) -> int:
    """Fully connected layer: in*out weight multiplies plus out bias adds."""
    return in_dims * out_dims + out_dims


def _macs_gated(gates: int, in_dims: int, width: int) -> int:
    # per gate: input matmul, recurrent matmul, input bias, recurrent bias
    return gates * (in_dims * width + width * width + 2 * width)


def macs_gru(in_dims: int, width: int) -> int:
    return _macs_gated(GRU_GATES, in_dims, width)


def macs_lstm(in_dims: int, width: int) -> int:
    """Exactly 4/3 of the GRU count at equal dims (4 gates instead of 3)."""
    return _macs_gated(LSTM_GATES, in_dims, width)


def macs_conv2d(kernel: tuple[int, int], c_in: int, c_out: int, f_out: int) -> int:
    """Strided causal convolution, per frame."""
    kt, kf = kernel
    return kt * kf * c_in * c_out * f_out + c_out * f_out


def macs_tconv2d(kernel: tuple[int, int], c_in: int, c_out: int, f_in: int, f_target: int) -> int:
    """Transposed convolution per frame, counting only retained outputs.

    With frequency stride 2, input position j and kernel tap k address
    upsampled position 2j + k; taps landing in the cropped margin are not
    counted.
    """
    kt, kf = kernel
    full = (f_in - 1) * 2 + kf
    left = (full - f_target) // 2
    inside = sum(
        1 for j in range(f_in) for k in range(kf) if left <= 2 * j + k < left + f_target
    )
    return kt * c_in * c_out * inside + c_out * f_target


def macs_skip_conv1x1(channels: int, freq: int) -> int:
    """Channel-wise scale and bias of an add-skip: one multiply and one add per value."""
    return 2 * channels * freq


def macs_model(graph: ModelGraph, name: str | None = None) -> MacReport:
    """Per-layer and total MAC counts for one model instance."""
    rows = []
    for layer in graph.iter_layers():
        if isinstance(layer, FcLayer):
            out_dims, in_dims = layer.weight.shape
            m = macs_fc(in_dims, out_dims)
        elif isinstance(layer, RnnLayer):
            fn = macs_gru if layer.kind == "gru" else macs_lstm
            m = sum(fn(cell.in_dims, cell.width) for stack in layer.groups for cell in stack)
        elif isinstance(layer, ConvLayer):
            c_out, c_in, kt, kf = layer.weight.shape
            m = macs_conv2d((kt, kf), c_in, c_out, layer.out_freq)
        elif isinstance(layer, TconvLayer):
            c_out, c_in, kt, kf = layer.weight.shape
            m = macs_tconv2d((kt, kf), c_in, c_out, layer.in_freq, layer.f_target)
        elif isinstance(layer, SkipLayer):
            if layer.kind != "add_conv1x1":
                continue  # plain add/concat skips apply no weights
            m = macs_skip_conv1x1(layer.scale.size, layer.freq)
        else:
            raise TypeError(f"unknown layer type {type(layer).__name__}")
        rows.append(LayerMacs(layer.name, type(layer).__name__, int(m)))

    return MacReport(
        model=name or format_model_name(graph.spec),
        layers=tuple(rows),
        params=graph.param_count(),
    )
