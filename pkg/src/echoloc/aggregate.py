"""Steered-response aggregation of predicted echo times over the virtual
four-microphone array.

Each predicted time becomes a Gaussian local spectrum on its virtual pair:
the real pair for the direct-path difference, the image pair for the echo
difference, and the mic/image pair for the direct-to-echo delay. Summing
the Gaussians over plane-wave delays on the (azimuth, elevation) grid gives
a global angular spectrum whose argmax is the DOA estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dsp import Signal, features, stft
from .geometry import Constants, Doa, EchoTimes, VirtualArray
from .model import MlpModel, load_model

GRID_STEP_DEG = 0.5


@dataclass
class GaussianLocal:
    """One echo time as a Gaussian over candidate delays on a virtual pair."""

    center: float       # seconds
    variance: float     # seconds^2, the target's validation MSE
    pair: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        if self.variance <= 0.0:
            raise ValueError(f"variance must be positive, got {self.variance}")


@dataclass
class DoaGrid:
    """0.5-degree sphere sampling: 720 azimuths x 181 elevations."""

    azimuths: np.ndarray
    elevations: np.ndarray

    @classmethod
    def default(cls) -> "DoaGrid":
        az = -179.5 + GRID_STEP_DEG * np.arange(720)
        el = GRID_STEP_DEG * np.arange(181)
        return cls(azimuths=az, elevations=el)

    @property
    def n_points(self) -> int:
        return self.azimuths.size * self.elevations.size

    def unit_vectors(self) -> np.ndarray:
        """(n_el, n_az, 3) unit vectors in the face-aligned frame."""
        az = np.radians(self.azimuths)[None, :]
        el = np.radians(self.elevations)[:, None]
        return np.stack([
            np.cos(el) * np.cos(az),
            np.cos(el) * np.sin(az),
            np.broadcast_to(np.sin(el), (el.size, az.size)),
        ], axis=-1)


@dataclass
class AngularSpectrumMap:
    """Angular-spectrum values over the grid, elevation-major."""

    psi: np.ndarray  # (n_el, n_az)
    grid: DoaGrid

    @property
    def argmax_index(self) -> tuple[int, int]:
        # flat argmax scans elevation-major, azimuth ascending: ties resolve
        # to the lowest elevation, then the lowest azimuth
        i = int(np.argmax(self.psi))
        return divmod(i, self.psi.shape[1])

    @property
    def doa(self) -> Doa:
        i_el, i_az = self.argmax_index
        return Doa(azimuth=float(self.grid.azimuths[i_az]),
                   elevation=float(self.grid.elevations[i_el]))

    def to_csv(self, path):
        """Rows of (azimuth_deg, elevation_deg, psi) for external plotting."""
        az = np.tile(self.grid.azimuths, self.psi.shape[0])
        el = np.repeat(self.grid.elevations, self.psi.shape[1])
        out = np.column_stack([az, el, self.psi.ravel()])
        np.savetxt(path, out, delimiter=",", header="azimuth,elevation,psi",
                   comments="", fmt="%.6g")


def build_locals(v_hat: EchoTimes, variances, va: VirtualArray) -> list[GaussianLocal]:
    """Gaussian locals for the three echo times on their virtual pairs.

    Degenerate pairs (coincident points, as when the mics sit exactly on the
    reflective surface so each image equals its mic) are dropped with a
    warning rather than erroring.
    """
    variances = np.asarray(variances, dtype=float)
    if variances.shape != (3,):
        raise ValueError(f"need 3 variances, got shape {variances.shape}")
    assignments = [
        ("tdoa", v_hat.tdoa, variances[0], (va.m1, va.m2)),
        ("itdoa", v_hat.itdoa, variances[1], (va.im1, va.im2)),
        ("tdoe", v_hat.tdoe, variances[2], (va.m1, va.im1)),
    ]
    locals_ = []
    for name, center, var, pair in assignments:
        if np.linalg.norm(pair[1] - pair[0]) < 1e-12:
            warnings.warn(f"dropping degenerate {name} pair (coincident points)")
            continue
        locals_.append(GaussianLocal(center=float(center), variance=float(var),
                                     pair=pair))
    return locals_


def srp_aggregate(locals_: list[GaussianLocal], grid: DoaGrid | None = None,
                  k: Constants = Constants()) -> AngularSpectrumMap:
    """Sum the Gaussian locals over plane-wave delays on the DOA grid.

    Psi(az, el) = sum_i exp(-(tau_ff(pair_i, az, el) - center_i)^2
                            / (2 var_i)).
    """
    if not locals_:
        raise ValueError("need at least one local spectrum")
    if grid is None:
        grid = DoaGrid.default()
    u = grid.unit_vectors()
    psi = np.zeros(u.shape[:2])
    for loc in locals_:
        baseline = loc.pair[1] - loc.pair[0]
        delay = -(u @ baseline) / k.c
        psi += np.exp(-((delay - loc.center) ** 2) / (2.0 * loc.variance))
    return AngularSpectrumMap(psi=psi, grid=grid)


def localize(sig1: Signal, sig2: Signal, model, va: VirtualArray,
             grid: DoaGrid | None = None,
             k: Constants = Constants()) -> tuple[Doa, AngularSpectrumMap]:
    """Full pipeline on one stereo recording with known array geometry.

    Features -> normalized -> network inference -> denormalized echo times
    -> Gaussian locals -> grid aggregation -> argmax DOA. The virtual array
    must be expressed in the face-aligned frame for the returned angles to
    be meaningful (see geometry.virtual_array_in_face_frame).
    """
    if not isinstance(model, MlpModel):
        model = load_model(model)
    x = features(stft(sig1), stft(sig2))
    v_hat = EchoTimes.from_array(model.predict(x))
    locals_ = build_locals(v_hat, model.variances(), va)
    smap = srp_aggregate(locals_, grid, k)
    return smap.doa, smap
