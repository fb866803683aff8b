"""Signal synthesis, STFT, and the interaural-difference feature front-end.

The standard pipeline runs at 16 kHz with 1024-point frames at 50% overlap.
Features are frame-averaged level and phase differences between the two
channels: 512 ILD bins (DC dropped), 511 complex IPD bins (DC and Nyquist
dropped), laid out as [ILD, Re(IPD), Im(IPD)] for a 1534-dim input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

NFFT = 1024
HOP = 512
N_BINS = NFFT // 2 + 1
ILD_DIM = 512     # bins 1..512
IPD_DIM = 511     # bins 1..511
FEATURE_DIM = ILD_DIM + 2 * IPD_DIM
MAG_FLOOR = 1e-12


@dataclass
class Signal:
    samples: np.ndarray
    fs: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError(f"signal must be 1-D, got shape {self.samples.shape}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.fs


@dataclass
class Spectrogram:
    """One-sided STFT frames, bins x frames."""

    frames: np.ndarray
    fs: int
    nfft: int = NFFT
    hop: int = HOP

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] != self.nfft // 2 + 1:
            raise ValueError(f"expected ({self.nfft // 2 + 1}, T) frames, "
                             f"got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.arange(self.frames.shape[0]) * self.fs / self.nfft


def white_noise(duration_s: float, rng_seed: int, fs: int = 16000) -> Signal:
    """I.i.d. standard Gaussian samples, deterministic per seed."""
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * fs))
    rng = np.random.default_rng(rng_seed)
    return Signal(rng.standard_normal(n), fs)


def convolve(sig: Signal, rir) -> Signal:
    """Full FFT-based linear convolution of a signal with an impulse response."""
    if sig.fs != rir.fs:
        raise ValueError(f"sample-rate mismatch: signal {sig.fs}, rir {rir.fs}")
    return Signal(fftconvolve(sig.samples, rir.samples, mode="full"), sig.fs)


def add_noise_snr(sig: Signal, snr_db: float, rng_seed: int) -> Signal:
    """Add white Gaussian noise scaled so the signal-to-noise ratio in power
    is exactly `snr_db`. Infinite SNR returns the signal unchanged."""
    if np.isinf(snr_db) and snr_db > 0:
        return Signal(sig.samples.copy(), sig.fs)
    p_sig = float(np.mean(sig.samples ** 2))
    if p_sig <= 0.0:
        raise ValueError("cannot set an SNR against a zero-energy signal")
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(len(sig))
    p_noise = float(np.mean(noise ** 2))
    gain = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Signal(sig.samples + gain * noise, sig.fs)


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(sig: Signal, nfft: int = NFFT, hop: int = HOP) -> Spectrogram:
    """Hann-windowed one-sided STFT, no padding: T = (N - nfft)//hop + 1."""
    x = sig.samples
    if x.shape[0] < nfft:
        raise ValueError(f"signal of {x.shape[0]} samples is shorter than one "
                         f"{nfft}-point frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, nfft)[::hop]
    spec = np.fft.rfft(frames * _hann_periodic(nfft), axis=1)
    return Spectrogram(frames=spec.T.copy(), fs=sig.fs, nfft=nfft, hop=hop)


def features(spec1: Spectrogram, spec2: Spectrogram) -> np.ndarray:
    """Frame-averaged ILD / IPD feature vector of the two channels.

    ILD(f) is the mean log magnitude ratio of channel 2 over channel 1 for
    bins 1..512; IPD(f) is the mean unit-modulus normalized cross-spectrum
    M2 conj(M1) / |M2 M1| for bins 1..511. Magnitudes are floored at 1e-12
    before any division or log.
    """
    if spec1.frames.shape != spec2.frames.shape:
        raise ValueError(f"spectrogram shapes differ: {spec1.frames.shape} "
                         f"vs {spec2.frames.shape}")
    m1 = spec1.frames
    m2 = spec2.frames
    ild = np.mean(
        np.log(np.maximum(np.abs(m2[1:1 + ILD_DIM]), MAG_FLOOR)
               / np.maximum(np.abs(m1[1:1 + ILD_DIM]), MAG_FLOOR)),
        axis=1)
    cross = m2[1:1 + IPD_DIM] * np.conj(m1[1:1 + IPD_DIM])
    ipd = np.mean(cross / np.maximum(np.abs(cross), MAG_FLOOR), axis=1)
    x = np.concatenate([ild, ipd.real, ipd.imag])
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    return x


def read_wav(path, target_fs: int | None = None) -> Signal:
    """Read a WAV as mono float64 in [-1, 1], linearly resampled on request."""
    fs, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(float) - 128.0) / 128.0
    else:
        data = data.astype(float)
    if target_fs is not None and fs != target_fs:
        n_out = int(round(len(data) * target_fs / fs))
        t_out = np.arange(n_out) * (fs / target_fs)
        data = np.interp(t_out, np.arange(len(data)), data)
        fs = target_fs
    return Signal(data, int(fs))


def write_wav(sig: Signal, path, encoding: str = "float32"):
    """Write mono WAV as 32-bit float or 16-bit PCM."""
    if encoding == "float32":
        wavfile.write(path, sig.fs, sig.samples.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(sig.samples, -1.0, 1.0)
        wavfile.write(path, sig.fs, (clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unknown encoding {encoding!r}")


def peak_normalize(sig: Signal, peak: float = 0.95) -> Signal:
    """Scale so the maximum absolute sample equals `peak`."""
    m = float(np.max(np.abs(sig.samples)))
    if m == 0.0:
        raise ValueError("cannot normalize an all-zero signal")
    return Signal(sig.samples * (peak / m), sig.fs)


def features_to_bytes(x: np.ndarray) -> bytes:
    """Feature vector as little-endian float32."""
    return np.asarray(x, dtype="<f4").tobytes()


def features_from_bytes(raw: bytes) -> np.ndarray:
    x = np.frombuffer(raw, dtype="<f4").astype(float)
    if x.shape[0] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM} features, got {x.shape[0]}")
    return x
