"""Shared fixtures: synthetic audio assets and a manifest for datagen tests."""

import numpy as np
import pytest

from cruse.audio_io import write_wav

SR = 16000


def synth_speech(rng, seconds, level=0.4):
    """Tone bursts separated by exact silence, speech-like enough for mixing."""
    n = int(seconds * SR)
    out = np.zeros(n)
    t = np.arange(n) / SR
    pos = 0
    burst = int(0.25 * SR)
    gap = int(0.15 * SR)
    while pos < n:
        end = min(pos + burst, n)
        f0 = float(rng.uniform(120.0, 320.0))
        am = 0.6 + 0.4 * np.sin(2 * np.pi * 3.1 * t[pos:end])
        out[pos:end] = level * np.sin(2 * np.pi * f0 * t[pos:end]) * am
        pos = end + gap
    return out


def synth_noise(rng, seconds, level=0.1):
    return level * rng.standard_normal(int(seconds * SR))


def synth_rir(rng, seconds=0.45, t0=50, decay_s=0.5):
    """Synthetic room response: weak pre-ringing, unit direct path, noisy tail."""
    n = int(seconds * SR)
    h = np.zeros(n)
    if t0 > 0:
        h[max(0, t0 - 5) : t0] = 0.05 * rng.standard_normal(min(5, t0))
    h[t0] = 1.0
    tail = np.arange(1, n - t0) / SR
    h[t0 + 1 :] = 0.3 * rng.standard_normal(n - t0 - 1) * np.exp(-tail * 3.0 * np.log(10) / decay_s)
    return h


@pytest.fixture(scope="session")
def asset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("assets")
    rng = np.random.default_rng(2024)

    write_wav(root / "speech_dry1.wav", synth_speech(rng, 3.5), SR, fmt="float32")
    write_wav(root / "speech_dry2.wav", synth_speech(rng, 4.0, level=0.3), SR, fmt="float32")
    write_wav(root / "speech_rev1.wav", synth_speech(rng, 4.5, level=0.35), SR, fmt="float32")
    write_wav(root / "noise_white.wav", synth_noise(rng, 4.0), SR, fmt="float32")
    write_wav(root / "noise_hum.wav", synth_noise(rng, 12.0, level=0.05), SR, fmt="float32")
    write_wav(root / "rir_room.wav", synth_rir(rng), SR, fmt="float32")

    delta = np.zeros(1600)
    delta[0] = 1.0
    write_wav(root / "rir_delta.wav", delta, SR, fmt="float32")

    (root / "manifest.csv").write_text(
        "path,kind,t60,c50\n"
        "speech_dry1.wav,speech,0.12,22.0\n"
        "speech_dry2.wav,speech,0.08,25.0\n"
        "speech_rev1.wav,speech,0.55,9.0\n"
        "noise_white.wav,noise,,\n"
        "noise_hum.wav,noise,,\n"
        "rir_room.wav,rir,0.5,12.0\n"
        "rir_delta.wav,rir,0.05,40.0\n"
    )
    return root


@pytest.fixture(scope="session")
def asset_store(asset_dir):
    from cruse.datagen import AssetStore

    return AssetStore.from_manifest(asset_dir / "manifest.csv")
