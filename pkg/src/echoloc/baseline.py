"""GCC-PHAT angular spectrum and TDOA estimation over a delay grid.

The comparison method for the learned pipeline: phase-transform whitened
cross-spectra accumulated over frames, scanned over candidate delays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import MAG_FLOOR, Signal, Spectrogram, stft
from .geometry import Constants


@dataclass
class TauGrid:
    """Uniform candidate-delay grid in seconds."""

    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")

    def values(self) -> np.ndarray:
        n = int(np.floor((self.hi - self.lo) / self.step)) + 1
        return self.lo + self.step * np.arange(n)


def default_tau_grid(k: Constants = Constants()) -> TauGrid:
    """Search 1.5x past the physical |tau| bound at 1/(8 fs) resolution, so
    raw over-shooting estimates are kept rather than clipped."""
    half = 1.5 * k.d / k.c
    return TauGrid(-half, half, 1.0 / (8.0 * k.fs))


def gcc_phat_spectrum(spec1: Spectrogram, spec2: Spectrogram,
                      grid: TauGrid) -> np.ndarray:
    """GCC-PHAT values over the delay grid.

    Psi(tau) = Re sum_{f,n} M1 M2* / |M1 M2*| exp(-2j pi f tau), with DC and
    Nyquist bins excluded and the whitening magnitude floored at 1e-12.
    Positive peak delay means channel 2 lags channel 1.
    """
    if spec1.frames.shape != spec2.frames.shape:
        raise ValueError(f"spectrogram shapes differ: {spec1.frames.shape} "
                         f"vs {spec2.frames.shape}")
    cross = spec1.frames[1:-1] * np.conj(spec2.frames[1:-1])
    cross = cross / np.maximum(np.abs(cross), MAG_FLOOR)
    per_bin = cross.sum(axis=1)
    freqs = spec1.freqs_hz[1:-1]
    taus = grid.values()
    steering = np.exp(-2j * np.pi * np.outer(freqs, taus))
    return np.real(per_bin @ steering)


def _parabolic_refine(taus: np.ndarray, psi: np.ndarray, i: int) -> float:
    if i == 0 or i == len(taus) - 1:
        return float(taus[i])
    denom = psi[i - 1] - 2.0 * psi[i] + psi[i + 1]
    if denom >= 0.0:
        return float(taus[i])
    delta = 0.5 * (psi[i - 1] - psi[i + 1]) / denom
    return float(taus[i] + delta * (taus[1] - taus[0]))


def estimate_tdoa_gcc(sig1: Signal, sig2: Signal, k: Constants = Constants(),
                      grid: TauGrid | None = None) -> float:
    """TDOA estimate: grid argmax of the GCC-PHAT spectrum with parabolic
    interpolation around the peak."""
    if grid is None:
        grid = default_tau_grid(k)
    spec1 = stft(sig1)
    spec2 = stft(sig2)
    psi = gcc_phat_spectrum(spec1, spec2, grid)
    taus = grid.values()
    return _parabolic_refine(taus, psi, int(np.argmax(psi)))
