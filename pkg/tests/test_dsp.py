import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonelab.dsp import (
    AudioError,
    MfccConfig,
    Waveform,
    frame_count,
    load_wav,
    mel_filterbank,
    mfcc_39,
    save_wav,
)


def test_load_zero_wav(tmp_path):
    p = tmp_path / "z.wav"
    save_wav(p, np.zeros(16000), 16000)
    w = load_wav(p)
    assert w.sample_rate == 16000
    assert w.samples.size == 16000
    assert np.all(w.samples == 0.0)


def test_pcm16_scaling(tmp_path):
    p = tmp_path / "m.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(np.array([32767, -32768], dtype="<i2").tobytes())
    w = load_wav(p)
    assert w.samples[0] == pytest.approx(32767 / 32768)
    assert w.samples[1] == -1.0


def test_stereo_rejected(tmp_path):
    p = tmp_path / "s.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(np.zeros(64, dtype="<i2").tobytes())
    with pytest.raises(AudioError, match="channel count"):
        load_wav(p)


def test_wrong_width_rejected(tmp_path):
    p = tmp_path / "w8.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(1)
        wf.setframerate(16000)
        wf.writeframes(bytes(64))
    with pytest.raises(AudioError, match="PCM16"):
        load_wav(p)


def test_garbage_file_rejected(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"this is not RIFF data")
    with pytest.raises(AudioError, match="RIFF"):
        load_wav(p)


def test_one_second_gives_98_frames():
    w = Waveform(np.random.default_rng(0).normal(size=16000) * 0.1, 16000)
    feats = mfcc_39(w)
    assert feats.frames.shape == (98, 39)  # 1 + (16000-400)//160


def test_dc_signal_has_zero_deltas():
    w = Waveform(np.full(8000, 0.25), 16000)
    feats = mfcc_39(w)
    assert np.allclose(feats.frames[:, 13:], 0.0, atol=1e-9)


def test_sine_peaks_at_nearest_filter():
    sr = 16000
    t = np.arange(sr) / sr
    w = Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t), sr)
    cfg = MfccConfig()
    fb = mel_filterbank(cfg.n_filters, cfg.n_fft, sr)

    # filter centers in Hz: peak of each triangle
    centers = np.array([np.argmax(row) for row in fb]) * sr / cfg.n_fft
    expect = int(np.argmin(np.abs(centers - 440.0)))

    x = np.empty_like(w.samples)
    x[0] = (1.0 - cfg.preemphasis) * w.samples[0]
    x[1:] = w.samples[1:] - cfg.preemphasis * w.samples[:-1]
    frames = x[np.arange(400)[None, :] + 160 * np.arange(10)[:, None]] * np.hamming(400)
    spec = np.abs(np.fft.rfft(frames, cfg.n_fft, axis=1)) ** 2
    response = spec @ fb.T
    assert int(np.argmax(response.mean(axis=0))) == expect


def test_no_nan_on_silence():
    w = Waveform(np.zeros(4000), 16000)
    feats = mfcc_39(w)
    assert np.all(np.isfinite(feats.frames))


def test_too_short_raises():
    with pytest.raises(AudioError, match="insufficient samples"):
        mfcc_39(Waveform(np.zeros(100), 16000))


def test_amplitude_scaling_shifts_only_c0():
    rng = np.random.default_rng(5)
    base = rng.normal(size=12000) * 0.05
    a = mfcc_39(Waveform(base, 16000)).frames
    b = mfcc_39(Waveform(base * 3.0, 16000)).frames
    diff = b - a
    # C0 shifts by one constant across frames
    assert np.ptp(diff[:, 0]) < 1e-8
    assert abs(diff[0, 0]) > 1e-3
    # C1..C12 unchanged, hence their delta blocks too
    assert np.max(np.abs(diff[:, 1:13])) < 1e-8
    assert np.max(np.abs(diff[:, 14:26])) < 1e-8
    assert np.max(np.abs(diff[:, 27:39])) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=40000))
def test_frame_count_closed_form(n):
    assert frame_count(n, 400, 160) == (0 if n < 400 else 1 + (n - 400) // 160)
    if n >= 400:
        w = Waveform(np.ones(n) * 0.1, 16000)
        assert mfcc_39(w).frames.shape[0] == frame_count(n, 400, 160)
