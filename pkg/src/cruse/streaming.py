"""Frame-by-frame enhancement: analysis, gain inference, synthesis.

The engine consumes one hop of input at a time and emits one hop of enhanced
output, matching the batch path stft -> infer_utterance -> apply_gain ->
istft sample for sample.  Total algorithmic delay is one window (20 ms).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dsp import DEFAULT_LOG_FLOOR, StftConfig, make_window
from .models import ModelGraph, create_state, infer_frame

_ENVELOPE_EPS = 1e-12


@dataclass
class EnhanceStats:
    frames: int
    mean_frame_ms: float
    max_frame_ms: float

    @property
    def realtime_factor(self) -> float:
        """Processing time per 10 ms hop relative to real time (< 1 is faster)."""
        return self.mean_frame_ms / 10.0


class StreamingEnhancer:
    """Stateful single-stream processor; create one instance per stream."""

    def __init__(self, graph: ModelGraph, config: StftConfig = StftConfig()):
        if graph.spec.num_bins != config.num_bins:
            raise ValueError(
                f"model expects {graph.spec.num_bins} bins but the transform "
                f"produces {config.num_bins}"
            )
        self.graph = graph
        self.config = config
        self.window = make_window(config.window_len)
        self._wsq = self.window * self.window
        self.state = create_state(graph)
        self._input = np.zeros(config.window_len)   # head pad: starts as zeros
        self._acc = np.zeros(config.window_len)
        self._env = np.zeros(config.window_len)
        self._frames = 0
        self.frame_times: list[float] = []

    def process_hop(self, hop_samples: np.ndarray) -> np.ndarray:
        """Consume exactly one hop of input, emit one hop of enhanced output.

        The first emitted hop corresponds to the causal head padding and is
        all zeros; callers streaming a whole file drop it (see
        :func:`enhance_signal`).
        """
        cfg = self.config
        hop_samples = np.asarray(hop_samples, dtype=np.float64)
        if len(hop_samples) != cfg.hop_len:
            raise ValueError(f"expected {cfg.hop_len} samples, got {len(hop_samples)}")
        started = time.perf_counter()

        self._input[: -cfg.hop_len] = self._input[cfg.hop_len :]
        self._input[-cfg.hop_len :] = hop_samples

        spec = np.fft.rfft(self._input * self.window, n=cfg.fft_len)
        feats = np.log(np.maximum(np.abs(spec) ** 2, DEFAULT_LOG_FLOOR))
        gains = infer_frame(self.graph, self.state, feats)
        frame = np.fft.irfft(spec * gains, n=cfg.fft_len)[: cfg.window_len] * self.window

        self._acc += frame
        self._env += self._wsq
        ready = self._acc[: cfg.hop_len]
        env = self._env[: cfg.hop_len]
        out = np.where(env > _ENVELOPE_EPS, ready / np.maximum(env, _ENVELOPE_EPS), 0.0)

        self._acc[: -cfg.hop_len] = self._acc[cfg.hop_len :]
        self._acc[-cfg.hop_len :] = 0.0
        self._env[: -cfg.hop_len] = self._env[cfg.hop_len :]
        self._env[-cfg.hop_len :] = 0.0

        self._frames += 1
        self.frame_times.append(time.perf_counter() - started)
        return out

    def flush(self) -> np.ndarray:
        """Emit the final partially overlapped hop after the last input hop."""
        cfg = self.config
        ready = self._acc[: cfg.hop_len]
        env = self._env[: cfg.hop_len]
        return np.where(env > _ENVELOPE_EPS, ready / np.maximum(env, _ENVELOPE_EPS), 0.0)

    def stats(self) -> EnhanceStats:
        times = np.asarray(self.frame_times)
        if times.size == 0:
            return EnhanceStats(0, 0.0, 0.0)
        return EnhanceStats(
            frames=int(times.size),
            mean_frame_ms=float(times.mean() * 1e3),
            max_frame_ms=float(times.max() * 1e3),
        )


def enhance_signal(graph: ModelGraph, samples: np.ndarray,
                   config: StftConfig = StftConfig()):
    """Stream a whole signal through an enhancer.

    Returns:
        ``(enhanced, stats)`` where enhanced has exactly the input length;
        any tail shorter than a hop is emitted as silence.
    """
    samples = np.asarray(samples, dtype=np.float64)
    engine = StreamingEnhancer(graph, config)
    hop = config.hop_len
    n_hops = len(samples) // hop
    out = np.zeros(len(samples))
    for i in range(n_hops):
        chunk = engine.process_hop(samples[i * hop : (i + 1) * hop])
        if i >= 1:  # the first emission is the synthetic head padding
            out[(i - 1) * hop : i * hop] = chunk
    if n_hops >= 1:
        out[(n_hops - 1) * hop : n_hops * hop] = engine.flush()
    return out, engine.stats()
