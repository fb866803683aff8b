"""Points, shoebox rooms, mirror images, virtual arrays, and closed-form
time-difference / angle formulas.

All positions are 3-vectors in meters, world frame, with the room spanning
[0, dims] on each axis. Angles are in degrees. The direction-of-arrival
frame is aligned with the reflective face: its z-axis is the interior
normal of that face, so elevation 0 is grazing along the surface and
elevation 90 points straight away from it into the room.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


def as_point(p) -> np.ndarray:
    """Coerce to a finite float64 3-vector."""
    a = np.asarray(p, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"point has non-finite components: {a}")
    return a


@dataclass
class Constants:
    """Physical and sampling constants of the standard pipeline."""

    c: float = 343.0   # speed of sound, m/s
    d: float = 0.10    # inter-microphone distance, m
    fs: int = 16000    # sample rate, Hz

    def __post_init__(self):
        if self.c <= 0 or self.d <= 0 or self.fs <= 0:
            raise ValueError("c, d and fs must all be positive")


class FaceId(Enum):
    """One of the six axis-aligned faces of a shoebox room.

    The first character names the axis, the second whether the face sits at
    coordinate 0 or at the far wall (dims[axis]).
    """

    X0 = "x0"
    X1 = "x1"
    Y0 = "y0"
    Y1 = "y1"
    Z0 = "z0"
    Z1 = "z1"

    @property
    def axis(self) -> int:
        return "xyz".index(self.value[0])

    @property
    def at_origin(self) -> bool:
        return self.value[1] == "0"

    def plane_coordinate(self, room: "RoomBox") -> float:
        return 0.0 if self.at_origin else float(room.dims[self.axis])

    def interior_normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = 1.0 if self.at_origin else -1.0
        return n


@dataclass
class RoomBox:
    """Axis-aligned shoebox with one corner at the origin."""

    dims: np.ndarray

    def __post_init__(self):
        self.dims = as_point(self.dims)
        if not np.all(self.dims > 0):
            raise ValueError(f"room dims must be positive, got {self.dims}")

    def contains(self, p, margin: float = 0.0) -> bool:
        p = as_point(p)
        return bool(np.all(p >= margin) and np.all(p <= self.dims - margin))


@dataclass
class MicPair:
    m1: np.ndarray
    m2: np.ndarray

    def __post_init__(self):
        self.m1 = as_point(self.m1)
        self.m2 = as_point(self.m2)
        if np.array_equal(self.m1, self.m2):
            raise ValueError("microphones must not coincide")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.m1 + self.m2)

    @property
    def spacing(self) -> float:
        return float(np.linalg.norm(self.m2 - self.m1))


@dataclass
class VirtualArray:
    """Both true microphones and their mirror images across the close face."""

    m1: np.ndarray
    m2: np.ndarray
    im1: np.ndarray
    im2: np.ndarray

    def __post_init__(self):
        self.m1 = as_point(self.m1)
        self.m2 = as_point(self.m2)
        self.im1 = as_point(self.im1)
        self.im2 = as_point(self.im2)


@dataclass
class Doa:
    """Direction of arrival: azimuth in (-180, 180], elevation in [0, 90]."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (-180.0 < self.azimuth <= 180.0):
            raise ValueError(f"azimuth {self.azimuth} outside (-180, 180]")
        if not (0.0 <= self.elevation <= 90.0):
            raise ValueError(f"elevation {self.elevation} outside [0, 90]")


@dataclass
class EchoTimes:
    """The regression target triple, all in seconds.

    tdoa:  arrival-time difference of the direct sound, mic 2 minus mic 1.
    itdoa: the same difference between the two image microphones,
           equivalently between the two first echoes.
    tdoe:  delay from mic 1's direct arrival to its first echo.
    """

    tdoa: float
    itdoa: float
    tdoe: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tdoa, self.itdoa, self.tdoe])

    @classmethod
    def from_array(cls, v) -> "EchoTimes":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]))


def mirror_point(p, room: RoomBox, face: FaceId) -> np.ndarray:
    """Reflect a point inside the room across one face plane.

    Reflecting twice returns the original point. Raises ValueError if the
    point lies outside the (closed) room box.
    """
    p = as_point(p)
    if not room.contains(p):
        raise ValueError(f"point {p} is outside the room {room.dims}")
    out = p.copy()
    out[face.axis] = 2.0 * face.plane_coordinate(room) - p[face.axis]
    return out


def virtual_array(mics: MicPair, room: RoomBox, face: FaceId) -> VirtualArray:
    """Build the four-element virtual array from a mic pair and the close face."""
    return VirtualArray(
        m1=mics.m1,
        m2=mics.m2,
        im1=mirror_point(mics.m1, room, face),
        im2=mirror_point(mics.m2, room, face),
    )


def echo_times(mics: MicPair, source, room: RoomBox, face: FaceId,
               k: Constants = Constants()) -> EchoTimes:
    """Exact echo-time triple for a source and mic pair near a reflective face.

    Distances to the mirror images give the first-echo path lengths, so

        tdoa  = (|m2 - s| - |m1 - s|) / c
        itdoa = (|im2 - s| - |im1 - s|) / c
        tdoe  = (|im1 - s| - |m1 - s|) / c
    """
    s = as_point(source)
    if not room.contains(s):
        raise ValueError(f"source {s} is outside the room")
    if not (room.contains(mics.m1) and room.contains(mics.m2)):
        raise ValueError("microphones are outside the room")
    r1 = float(np.linalg.norm(mics.m1 - s))
    r2 = float(np.linalg.norm(mics.m2 - s))
    if r1 == 0.0 or r2 == 0.0:
        raise ValueError("source coincides with a microphone")
    va = virtual_array(mics, room, face)
    ri1 = float(np.linalg.norm(va.im1 - s))
    ri2 = float(np.linalg.norm(va.im2 - s))
    return EchoTimes(
        tdoa=(r2 - r1) / k.c,
        itdoa=(ri2 - ri1) / k.c,
        tdoe=(ri1 - r1) / k.c,
    )


def aoa_from_tdoa(tau: float, k: Constants = Constants()) -> float:
    """Angle of arrival in degrees from a pair TDOA, arccos(c*tau/d).

    The argument is clamped to [-1, 1]: noisy estimates routinely overshoot
    the physical bound and saturate to endfire rather than erroring.
    """
    x = k.c * tau / k.d
    return math.degrees(math.acos(min(1.0, max(-1.0, x))))


def doa_unit_vector(doa: Doa) -> np.ndarray:
    """Unit vector for a DOA: azimuth 0 / elevation 0 maps to +x, elevation 90 to +z."""
    az = math.radians(doa.azimuth)
    el = math.radians(doa.elevation)
    return np.array([
        math.cos(el) * math.cos(az),
        math.cos(el) * math.sin(az),
        math.sin(el),
    ])


def pair_delay_farfield(p_a, p_b, doa: Doa, k: Constants = Constants()) -> float:
    """Plane-wave delay of point b relative to point a for a given DOA.

    tau = -u . (p_b - p_a) / c, which reduces to the exact pair TDOA in the
    far-field limit when the DOA is measured from the pair midpoint.
    """
    p_a = as_point(p_a)
    p_b = as_point(p_b)
    if np.array_equal(p_a, p_b):
        raise ValueError("pair points must be distinct")
    u = doa_unit_vector(doa)
    return float(-np.dot(u, p_b - p_a) / k.c)


# Right-handed orthonormal basis (ex, ey, ez) per face with ez the interior
# normal; fixes the azimuth origin of the DOA frame once and for all.
_FACE_BASES = {
    FaceId.X0: ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    FaceId.X1: ((0, 0, 1), (0, 1, 0), (-1, 0, 0)),
    FaceId.Y0: ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    FaceId.Y1: ((1, 0, 0), (0, 0, 1), (0, -1, 0)),
    FaceId.Z0: ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    FaceId.Z1: ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
}


def face_basis(face: FaceId) -> np.ndarray:
    """3x3 rotation whose rows are the face-frame axes expressed in world axes."""
    return np.array(_FACE_BASES[face], dtype=float)


def array_origin(mics: MicPair, room: RoomBox, face: FaceId) -> np.ndarray:
    """Reference point of the virtual array: the mic-pair midpoint projected
    onto the close face, i.e. the centroid of the four virtual elements."""
    mid = mics.midpoint
    out = mid.copy()
    out[face.axis] = face.plane_coordinate(room)
    return out


def to_face_frame(p, origin, face: FaceId) -> np.ndarray:
    """World point -> coordinates in the face-aligned frame at `origin`."""
    return face_basis(face) @ (as_point(p) - as_point(origin))


def virtual_array_in_face_frame(mics: MicPair, room: RoomBox,
                                face: FaceId) -> VirtualArray:
    """Virtual array expressed in the face-aligned DOA frame.

    In this frame the reflective face is the z=0 plane and the array
    centroid is the origin, so image elements are the z-negatives of the
    real ones.
    """
    origin = array_origin(mics, room, face)
    va = virtual_array(mics, room, face)
    return VirtualArray(
        m1=to_face_frame(va.m1, origin, face),
        m2=to_face_frame(va.m2, origin, face),
        im1=to_face_frame(va.im1, origin, face),
        im2=to_face_frame(va.im2, origin, face),
    )


def doa_of_source(source, mics: MicPair, room: RoomBox, face: FaceId) -> Doa:
    """True DOA of a source, measured from the array origin in the face frame."""
    origin = array_origin(mics, room, face)
    v = to_face_frame(source, origin, face)
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise ValueError("source coincides with the array origin")
    az = math.degrees(math.atan2(v[1], v[0]))
    if az <= -180.0:
        az += 360.0
    el = math.degrees(math.asin(min(1.0, max(-1.0, v[2] / r))))
    return Doa(azimuth=az, elevation=max(0.0, el))
