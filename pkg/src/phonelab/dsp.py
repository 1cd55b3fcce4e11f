"""Waveform ingestion and 39-dimensional MFCC extraction.

The MFCC variant is pinned so labels are bit-reproducible: 25 ms Hamming
window, 10 ms hop, pre-emphasis 0.97, 26 mel filters over 0..Nyquist,
512-point FFT, DCT-II (ortho) keeping 13 cepstra including C0, no liftering.
Deltas use the +-2 regression window with edge replication.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, D)
    frame_shift: float  # seconds
    frame_length: float  # seconds


@dataclass(frozen=True)
class MfccConfig:
    window_s: float = 0.025
    hop_s: float = 0.010
    n_filters: int = 26
    n_ceps: int = 13
    preemphasis: float = 0.97
    n_fft: int = 512
    log_floor: float = 1e-10
    delta_window: int = 2


def load_wav(path) -> Waveform:
    """Read a mono PCM16 RIFF/WAVE file; samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            n = wf.getnframes()
            rate = wf.getframerate()
            raw = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise AudioError(f"{path}: unsupported channel count {channels} (mono required)")
    if width != 2:
        raise AudioError(f"{path}: unsupported sample width {8 * width} bit (PCM16 required)")
    if len(raw) != 2 * n:
        raise AudioError(f"{path}: truncated payload ({len(raw)} bytes for {n} frames)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def save_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as mono PCM16."""
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def frame_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // hop


def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters spanning 0..Nyquist, (n_filters, n_fft//2+1)."""

    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    points = to_hz(np.linspace(0.0, to_mel(sample_rate / 2.0), n_filters + 2))
    bins = np.floor((n_fft + 1) * points / sample_rate).astype(int)
    fb = np.zeros((n_filters, n_fft // 2 + 1))
    for m in range(n_filters):
        lo, mid, hi = bins[m], bins[m + 1], bins[m + 2]
        for k in range(lo, mid):
            fb[m, k] = (k - lo) / max(1, mid - lo)
        for k in range(mid, hi):
            fb[m, k] = (hi - k) / max(1, hi - mid)
    return fb


def _deltas(x: np.ndarray, window: int) -> np.ndarray:
    """Regression deltas over +-window frames, boundary frames replicated."""
    t = x.shape[0]
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    padded = np.concatenate([x[:1].repeat(window, axis=0), x, x[-1:].repeat(window, axis=0)])
    out = np.zeros_like(x)
    for n in range(1, window + 1):
        out += n * (padded[window + n: window + n + t] - padded[window - n: window - n + t])
    return out / denom


def mfcc_39(w: Waveform, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """13 MFCC (incl. C0) + 13 deltas + 13 delta-deltas per frame."""
    if w.sample_rate != 16000:
        raise AudioError(f"expected 16 kHz input, got {w.sample_rate}")
    window = int(round(cfg.window_s * w.sample_rate))
    hop = int(round(cfg.hop_s * w.sample_rate))
    t = frame_count(w.samples.size, window, hop)
    if t == 0:
        raise AudioError(f"insufficient samples: {w.samples.size} < window {window}")

    # pre-emphasis with edge replication (x[-1] := x[0]) so constant signals
    # stay constant after filtering
    x = np.empty_like(w.samples)
    x[0] = (1.0 - cfg.preemphasis) * w.samples[0]
    x[1:] = w.samples[1:] - cfg.preemphasis * w.samples[:-1]

    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    frames = x[idx] * np.hamming(window)[None, :]

    spec = np.abs(np.fft.rfft(frames, cfg.n_fft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_filters, cfg.n_fft, w.sample_rate)
    energies = np.maximum(spec @ fb.T, cfg.log_floor)
    ceps = dct(np.log(energies), type=2, norm="ortho", axis=1)[:, : cfg.n_ceps]

    d1 = _deltas(ceps, cfg.delta_window)
    d2 = _deltas(d1, cfg.delta_window)
    return FeatureMatrix(
        frames=np.concatenate([ceps, d1, d2], axis=1),
        frame_shift=cfg.hop_s,
        frame_length=cfg.window_s,
    )
