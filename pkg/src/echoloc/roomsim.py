"""Shoebox image-source room impulse responses and random scene sampling.

Scenes follow the close-surface protocol: a 10 cm mic pair within 30 cm of
the room's most reflective face, so the first-order bounce off that face is
the earliest and strongest echo at both microphones. Reflections are pure
specular image sources with frequency-independent absorption.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeasurementError, SceneSamplingError
from .geometry import (
    Constants,
    FaceId,
    MicPair,
    RoomBox,
    as_point,
    echo_times,
    mirror_point,
)

INTERIOR_MARGIN = 0.05     # m, min distance of mics/source from every face
SLAB_DEPTH = 0.30          # m, max mic distance from the close face
MIC_SPACING = 0.10         # m
MIN_SOURCE_MIC_DIST = 0.10 # m, keeps direct-path amplitudes bounded
MAX_REJECTIONS = 10_000

KERNEL_HALF = 40           # windowed-sinc fractional-delay kernel: 81 taps
DEFAULT_MAX_ORDER_CAP = 12

FACE_ORDER = [FaceId.X0, FaceId.X1, FaceId.Y0, FaceId.Y1, FaceId.Z0, FaceId.Z1]


@dataclass
class SceneSpec:
    """One randomly drawn close-surface recording configuration."""

    room: RoomBox
    absorption: dict[FaceId, float]
    close_face: FaceId
    mics: MicPair
    source: np.ndarray
    constants: Constants = field(default_factory=Constants)
    seed: int = 0

    def __post_init__(self):
        self.source = as_point(self.source)
        missing = [f for f in FACE_ORDER if f not in self.absorption]
        if missing:
            raise ValueError(f"absorption missing faces: {missing}")
        for f, a in self.absorption.items():
            if not (0.0 <= a <= 1.0):
                raise ValueError(f"absorption[{f.value}]={a} outside [0, 1]")

    def validate_sampled(self):
        """Assert the full close-surface invariants of sampler output."""
        room, k = self.room, self.constants
        assert abs(self.mics.spacing - MIC_SPACING) <= 1e-9
        for m in (self.mics.m1, self.mics.m2):
            assert room.contains(m, margin=INTERIOR_MARGIN)
            assert _face_distance(m, room, self.close_face) <= SLAB_DEPTH + 1e-12
        assert room.contains(self.source, margin=INTERIOR_MARGIN)
        assert 0.0 < self.absorption[self.close_face] < 0.5
        for f in FACE_ORDER:
            if f != self.close_face:
                assert 0.5 < self.absorption[f] < 1.0

    def to_dict(self) -> dict:
        return {
            "room": self.room.dims.tolist(),
            "absorption": {f.value: self.absorption[f] for f in FACE_ORDER},
            "close_face": self.close_face.value,
            "mics": {"m1": self.mics.m1.tolist(), "m2": self.mics.m2.tolist()},
            "source": self.source.tolist(),
            "constants": {"c": self.constants.c, "d": self.constants.d,
                          "fs": self.constants.fs},
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        kc = d.get("constants", {})
        return cls(
            room=RoomBox(np.array(d["room"], dtype=float)),
            absorption={FaceId(fk): float(a) for fk, a in d["absorption"].items()},
            close_face=FaceId(d["close_face"]),
            mics=MicPair(np.array(d["mics"]["m1"], dtype=float),
                         np.array(d["mics"]["m2"], dtype=float)),
            source=np.array(d["source"], dtype=float),
            constants=Constants(c=float(kc.get("c", 343.0)),
                                d=float(kc.get("d", 0.10)),
                                fs=int(kc.get("fs", 16000))),
            seed=int(d.get("seed", 0)),
        )

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load_json(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Rir:
    """Room impulse response samples plus the analytic first two arrival times."""

    samples: np.ndarray
    fs: int
    direct_delay: float
    first_echo_delay: float


def _face_distance(p, room: RoomBox, face: FaceId) -> float:
    return abs(float(p[face.axis]) - face.plane_coordinate(room))


def sample_scene(rng_seed: int, k: Constants = Constants()) -> SceneSpec:
    """Draw a random close-surface scene, deterministic in the seed.

    Room widths are U[3, 9] m and heights U[2, 4] m; the close face is
    uniform over the six faces with absorption U(0, 0.5) against U(0.5, 1)
    elsewhere; the mic-pair center falls uniformly in the 30 cm slab by the
    close face with orientation uniform on the sphere; the source is uniform
    over the interior. Candidates are rejected until the margins hold and
    the close-face bounce is the earliest echo at both mics by at least one
    sample, which the echo-time targets assume.
    """
    rng = np.random.default_rng(rng_seed)
    gap = k.c / k.fs  # one sample of path length
    for _ in range(MAX_REJECTIONS):
        dims = rng.uniform([3.0, 3.0, 2.0], [9.0, 9.0, 4.0])
        close = FACE_ORDER[int(rng.integers(0, 6))]
        a_close = float(rng.uniform(0.0, 0.5))
        a_others = rng.uniform(0.5, 1.0, size=5)
        orient = rng.normal(size=3)
        depth = rng.uniform(0.0, SLAB_DEPTH)
        tang = rng.uniform(0.0, 1.0, size=2)
        src = rng.uniform(INTERIOR_MARGIN, dims - INTERIOR_MARGIN)

        if not (0.0 < a_close < 0.5) or not np.all((a_others > 0.5) & (a_others < 1.0)):
            continue
        nrm = float(np.linalg.norm(orient))
        if nrm < 1e-12:
            continue
        orient /= nrm

        room = RoomBox(dims)
        center = np.empty(3)
        ax = close.axis
        plane = close.plane_coordinate(room)
        center[ax] = plane + depth * close.interior_normal()[ax]
        others = [i for i in range(3) if i != ax]
        center[others[0]] = tang[0] * dims[others[0]]
        center[others[1]] = tang[1] * dims[others[1]]

        m1 = center - 0.5 * MIC_SPACING * orient
        m2 = center + 0.5 * MIC_SPACING * orient
        ok = True
        for m in (m1, m2):
            if not room.contains(m, margin=INTERIOR_MARGIN):
                ok = False
                break
            if _face_distance(m, room, close) > SLAB_DEPTH:
                ok = False
                break
        if not ok:
            continue
        if (np.linalg.norm(src - m1) < MIN_SOURCE_MIC_DIST
                or np.linalg.norm(src - m2) < MIN_SOURCE_MIC_DIST):
            continue

        # Earliest-echo constraint: the close-face specular path beats every
        # other face's first-order path by >= 1 sample, at both mics.
        for m in (m1, m2):
            d_close = float(np.linalg.norm(mirror_point(m, room, close) - src))
            for f in FACE_ORDER:
                if f == close:
                    continue
                d_other = float(np.linalg.norm(mirror_point(m, room, f) - src))
                if d_other < d_close + gap:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue

        absorption = {close: a_close}
        i = 0
        for f in FACE_ORDER:
            if f != close:
                absorption[f] = float(a_others[i])
                i += 1
        return SceneSpec(room=room, absorption=absorption, close_face=close,
                         mics=MicPair(m1, m2), source=src, constants=k,
                         seed=int(rng_seed))
    raise SceneSamplingError(
        f"no valid scene after {MAX_REJECTIONS} rejections (seed {rng_seed})")


def rt60_sabine(scene: SceneSpec) -> float:
    """Sabine reverberation time 0.161 V / sum(S_face * alpha_face)."""
    dx, dy, dz = scene.room.dims
    areas = {
        FaceId.X0: dy * dz, FaceId.X1: dy * dz,
        FaceId.Y0: dx * dz, FaceId.Y1: dx * dz,
        FaceId.Z0: dx * dy, FaceId.Z1: dx * dy,
    }
    sa = sum(areas[f] * scene.absorption[f] for f in FACE_ORDER)
    if sa == 0.0:
        raise ZeroDivisionError("total absorption is zero; RT60 undefined")
    volume = dx * dy * dz
    return float(0.161 * volume / sa)


def default_max_order(scene: SceneSpec) -> int:
    """Smallest reflection order that stacks past c*RT60 along the largest
    dimension, capped at 12."""
    reach = scene.constants.c * rt60_sabine(scene)
    order = math.ceil(reach / float(np.max(scene.room.dims)))
    return max(1, min(DEFAULT_MAX_ORDER_CAP, order))


def _axis_images(s: float, length: float, beta0: float, beta1: float,
                 p: int, r: np.ndarray):
    """1D image coordinates, bounce orders, and amplitudes along one axis."""
    pos = (1 - 2 * p) * s + 2.0 * r * length
    n0 = np.abs(r - p)
    n1 = np.abs(r)
    amp = beta0 ** n0 * beta1 ** n1
    return pos, n0 + n1, amp


def simulate_rir(scene: SceneSpec, mic_index: int, max_order: int | None = None) -> Rir:
    """Image-source RIR at one microphone of the scene.

    Every image up to `max_order` reflections contributes a pulse of
    amplitude prod(sqrt(1 - alpha)) / distance at delay distance / c,
    band-limited by an 81-tap Hann-windowed sinc so fractional delays land
    between samples. The response is long enough to cover the Sabine RT60
    past the direct arrival.

    Parameters
    ----------
    scene : SceneSpec
    mic_index : 1 or 2
    max_order : highest reflection order to include; defaults to
        `default_max_order(scene)`.
    """
    if mic_index not in (1, 2):
        raise ValueError(f"mic_index must be 1 or 2, got {mic_index}")
    if max_order is None:
        max_order = default_max_order(scene)
    if max_order < 1:
        raise ValueError(f"max_order must be >= 1, got {max_order}")

    k = scene.constants
    mic = scene.mics.m1 if mic_index == 1 else scene.mics.m2
    src = scene.source
    dims = scene.room.dims
    beta = {f: math.sqrt(1.0 - scene.absorption[f]) for f in FACE_ORDER}

    direct_delay = float(np.linalg.norm(mic - src)) / k.c
    echo_delay = float(
        np.linalg.norm(mirror_point(mic, scene.room, scene.close_face) - src)) / k.c
    n_samples = int(math.ceil(k.fs * (direct_delay + rt60_sabine(scene)))) + KERNEL_HALF + 2

    half = max_order // 2 + 1
    r = np.arange(-half, half + 1)
    h = np.zeros(n_samples)
    axis_faces = [(FaceId.X0, FaceId.X1), (FaceId.Y0, FaceId.Y1), (FaceId.Z0, FaceId.Z1)]
    for pbits in range(8):
        p = ((pbits >> 2) & 1, (pbits >> 1) & 1, pbits & 1)
        pos, order, amp = [], [], []
        for i, (f0, f1) in enumerate(axis_faces):
            px, ox, ax_ = _axis_images(src[i], float(dims[i]), beta[f0], beta[f1],
                                       p[i], r)
            pos.append(px)
            order.append(ox)
            amp.append(ax_)
        total_order = (order[0][:, None, None] + order[1][None, :, None]
                       + order[2][None, None, :])
        gain = (amp[0][:, None, None] * amp[1][None, :, None] * amp[2][None, None, :])
        dist = np.sqrt((pos[0][:, None, None] - mic[0]) ** 2
                       + (pos[1][None, :, None] - mic[1]) ** 2
                       + (pos[2][None, None, :] - mic[2]) ** 2)
        keep = (total_order <= max_order) & (gain > 0.0)
        # images arriving past the response end cannot contribute
        keep &= dist <= (n_samples + KERNEL_HALF) * k.c / k.fs
        gain = gain[keep]
        dist = dist[keep]
        if gain.size == 0:
            continue
        _add_pulses(h, dist / k.c * k.fs, gain / dist)

    return Rir(samples=h, fs=k.fs, direct_delay=direct_delay,
               first_echo_delay=echo_delay)


def _add_pulses(h: np.ndarray, delays: np.ndarray, amps: np.ndarray):
    """Scatter-add Hann-windowed sinc pulses at fractional sample delays."""
    n = h.shape[0]
    base = np.ceil(delays - KERNEL_HALF).astype(np.int64)
    taps = np.arange(2 * KERNEL_HALF + 1)
    idx = base[:, None] + taps[None, :]
    x = idx - delays[:, None]
    kern = np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / KERNEL_HALF))
    kern[np.abs(x) > KERNEL_HALF] = 0.0
    kern *= amps[:, None]
    valid = (idx >= 0) & (idx < n)
    h += np.bincount(idx[valid], weights=kern[valid], minlength=n)


def schroeder_rt60(rir: Rir) -> float:
    """RT60 by backward-integrated energy decay.

    Fits a line to the -5 dB to -25 dB span of the Schroeder curve and
    extrapolates to -60 dB. Raises MeasurementError when the span holds
    fewer than 10 samples (nothing to fit, e.g. a lone pulse).
    """
    h = np.asarray(rir.samples, dtype=float)
    if h.size == 0:
        raise ValueError("empty impulse response")
    energy = h * h
    total = energy.sum()
    if total <= 0.0:
        raise MeasurementError("impulse response has no energy")
    edc = np.cumsum(energy[::-1])[::-1] / total
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(np.maximum(edc, 1e-300))
    seg = np.nonzero((edc_db <= -5.0) & (edc_db >= -25.0))[0]
    if seg.size < 10:
        raise MeasurementError(
            f"decay segment has {seg.size} samples; need at least 10")
    t = seg / rir.fs
    slope, _ = np.polyfit(t, edc_db[seg], 1)
    if slope >= 0.0:
        raise MeasurementError("energy decay curve is not decreasing")
    return float(-60.0 / slope)


def rir_to_float32(rir: Rir) -> bytes:
    """Raw little-endian float32 samples."""
    return np.asarray(rir.samples, dtype="<f4").tobytes()


def write_rir_wav(rir: Rir, path):
    """Mono 32-bit float WAV at the RIR's sample rate."""
    from scipy.io import wavfile

    wavfile.write(path, rir.fs, np.asarray(rir.samples, dtype=np.float32))
