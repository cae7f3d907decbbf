"""Scenario geometry, multipath path enumeration and per-path SNR.

Everything here is two-dimensional. Angles reported on a path are local to
the station: zero along the array boresight, positive counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .constants import DEFAULT_CARRIER_HZ, SPEED_OF_LIGHT

FOUR_PI = 4.0 * math.pi


class DegenerateGeometryError(ValueError):
    """A scatterer sits on top of the station (zero range)."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class BsPose:
    id: int
    position: tuple[float, float]
    rotation: float = 0.0
    antenna_count: int = 8
    element_spacing: float = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ / 2.0
    tx_power: float = 1.0
    tx_gain: float = 10.0
    rx_gain: float = 10.0
    beamwidth_3db: float = 0.2215

    def __post_init__(self):
        if self.antenna_count < 1:
            raise ValueError("antenna_count must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be positive")
        if self.tx_power <= 0:
            raise ValueError("tx_power must be positive")
        if not 0.0 < self.beamwidth_3db < math.pi:
            raise ValueError("beamwidth_3db must lie in (0, pi)")

    def local_angle(self, point: Sequence[float]) -> float:
        """Bearing of ``point`` relative to boresight."""
        dx = point[0] - self.position[0]
        dy = point[1] - self.position[1]
        return wrap_angle(math.atan2(dy, dx) - self.rotation)

    def antenna_positions(self) -> np.ndarray:
        """World positions of the ULA elements, shape (K, 2).

        Element 0 sits at the station position; the array axis is the
        boresight rotated by +90 degrees, which makes the inter-element phase
        progression follow sin(local angle).
        """
        axis = np.array([math.cos(self.rotation + math.pi / 2), math.sin(self.rotation + math.pi / 2)])
        k = np.arange(self.antenna_count)[:, None]
        return np.asarray(self.position, dtype=float)[None, :] + k * self.element_spacing * axis[None, :]


@dataclass(frozen=True)
class RotorConfig:
    rotor_count: int = 0
    blade_count: int = 2
    blade_length: float = 0.1
    rotation_rate: float = 2 * math.pi * 80.0
    azimuth: float = 0.0
    elevation: float = 0.3
    rotor_phase_step: float = 0.0  # rotor n turns at azimuth + n * step; 0 = phase-locked rotors

    def __post_init__(self):
        if self.rotor_count < 0:
            raise ValueError("rotor_count must be >= 0")
        if self.rotor_count >= 1 and self.blade_count < 1:
            raise ValueError("blade_count must be >= 1 when rotors are present")
        if self.blade_length <= 0:
            raise ValueError("blade_length must be positive")


@dataclass(frozen=True)
class UavState:
    id: int
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    rcs: float = 0.1
    rotor: RotorConfig = field(default_factory=RotorConfig)
    is_target: bool = True

    def __post_init__(self):
        if self.rcs <= 0:
            raise ValueError("rcs must be positive")

    def radial_velocity(self, origin: Sequence[float]) -> float:
        """Range rate seen from ``origin`` (positive when receding)."""
        d = np.asarray(self.position, float) - np.asarray(origin, float)
        r = float(np.hypot(*d))
        if r == 0.0:
            return 0.0
        return float(np.dot(self.velocity, d) / r)

    def radial_velocity_per_bs(self, stations: Sequence[BsPose]) -> list[float]:
        return [self.radial_velocity(bs.position) for bs in stations]


@dataclass(frozen=True)
class Reflector:
    id: int
    position: tuple[float, float]
    rcs: float = 50.0

    def __post_init__(self):
        if self.rcs <= 0:
            raise ValueError("rcs must be positive")


class PathKind(str, Enum):
    DIRECT = "Direct"
    GHOST1 = "Ghost1"  # BS -> reflector -> UAV -> BS
    GHOST2 = "Ghost2"  # BS -> UAV -> reflector -> BS
    GHOST2ND = "Ghost2nd"  # BS -> reflector -> UAV -> reflector -> BS


@dataclass(frozen=True)
class PropagationPath:
    kind: PathKind
    uav_id: int
    reflector_id: Optional[int]
    total_path_length: float
    apparent_angle: float
    apparent_velocity: float
    snr: float

    @property
    def apparent_range(self) -> float:
        return self.total_path_length / 2.0

    @property
    def is_ghost(self) -> bool:
        return self.kind is not PathKind.DIRECT


@dataclass(frozen=True)
class Scene:
    stations: tuple[BsPose, ...]
    uavs: tuple[UavState, ...]
    reflectors: tuple[Reflector, ...] = ()
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 90.0, 90.0)

    def station(self, bs_id: int) -> BsPose:
        for bs in self.stations:
            if bs.id == bs_id:
                return bs
        raise KeyError(bs_id)

    def uav(self, uav_id: int) -> UavState:
        for u in self.uavs:
            if u.id == uav_id:
                return u
        raise KeyError(uav_id)

    def with_stations(self, ids: Sequence[int]) -> "Scene":
        keep = set(ids)
        return replace(self, stations=tuple(bs for bs in self.stations if bs.id in keep))


def direct_snr(bs: BsPose, rcs: float, r: float, wavelength: float, noise_power: float) -> float:
    return (bs.tx_power * bs.tx_gain * rcs * bs.rx_gain * wavelength**2) / (FOUR_PI**3 * r**4 * noise_power)


def ghost_snr(bs: BsPose, rcs: float, refl_rcs: float, r: float, r1: float, r2: float,
              wavelength: float, noise_power: float) -> float:
    """First-order indirect path; legs r (BS-UAV), r1 (reflector-UAV), r2 (reflector-BS)."""
    return (bs.tx_power * bs.tx_gain / (FOUR_PI * r**2) * rcs * refl_rcs / (FOUR_PI**2 * r1**2 * r2**2)
            * bs.rx_gain * wavelength**2 / FOUR_PI / noise_power)


def second_order_snr(bs: BsPose, rcs: float, refl_rcs: float, r1: float, r2: float,
                     wavelength: float, noise_power: float) -> float:
    """Four-leg bistatic cascade BS->refl->UAV->refl->BS."""
    return (bs.tx_power * bs.tx_gain / (FOUR_PI * r2**2) * refl_rcs / (FOUR_PI * r1**2)
            * rcs / (FOUR_PI * r1**2) * refl_rcs / (FOUR_PI * r2**2)
            * bs.rx_gain * wavelength**2 / FOUR_PI / noise_power)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.hypot(*v)


def enumerate_paths(
    scene: Scene,
    bs: BsPose,
    noise_power: float,
    wavelength: float = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ,
    snr_floor_db: float = -10.0,
    max_range: Optional[float] = None,
) -> list[PropagationPath]:
    """List the direct and ghost paths seen by one station.

    Paths whose SNR falls below ``snr_floor_db`` are dropped, as are paths
    with an apparent range beyond ``max_range`` (the IF anti-alias filter of
    the receiver removes their beat tones). A reflector coinciding with the
    UAV or the station produces no ghosts.
    """
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    floor = 10.0 ** (snr_floor_db / 10.0)
    p_bs = np.asarray(bs.position, float)
    if not np.all(np.isfinite(p_bs)):
        raise ValueError("station position must be finite")
    paths: list[PropagationPath] = []

    def keep(p: PropagationPath) -> None:
        if p.snr < floor:
            return
        if max_range is not None and p.apparent_range > max_range:
            return
        paths.append(p)

    for uav in scene.uavs:
        p_u = np.asarray(uav.position, float)
        vel = np.asarray(uav.velocity, float)
        if not np.all(np.isfinite(p_u)):
            raise ValueError(f"UAV {uav.id} position must be finite")
        r = float(np.hypot(*(p_u - p_bs)))
        if r == 0.0:
            raise DegenerateGeometryError(f"UAV {uav.id} coincides with station {bs.id}")
        u_bu = _unit(p_u - p_bs)
        keep(PropagationPath(
            kind=PathKind.DIRECT, uav_id=uav.id, reflector_id=None,
            total_path_length=2.0 * r, apparent_angle=bs.local_angle(p_u),
            apparent_velocity=float(vel @ u_bu),
            snr=direct_snr(bs, uav.rcs, r, wavelength, noise_power),
        ))
        for refl in scene.reflectors:
            p_r = np.asarray(refl.position, float)
            r1 = float(np.hypot(*(p_u - p_r)))
            r2 = float(np.hypot(*(p_r - p_bs)))
            if r1 == 0.0 or r2 == 0.0:
                continue
            u_ru = _unit(p_u - p_r)
            g = ghost_snr(bs, uav.rcs, refl.rcs, r, r1, r2, wavelength, noise_power)
            v1 = 0.5 * float(vel @ u_bu + vel @ u_ru)
            length = r + r1 + r2
            keep(PropagationPath(PathKind.GHOST1, uav.id, refl.id, length, bs.local_angle(p_u), v1, g))
            keep(PropagationPath(PathKind.GHOST2, uav.id, refl.id, length, bs.local_angle(p_r), v1, g))
            keep(PropagationPath(
                PathKind.GHOST2ND, uav.id, refl.id, 2.0 * (r1 + r2), bs.local_angle(p_r),
                float(vel @ u_ru),
                second_order_snr(bs, uav.rcs, refl.rcs, r1, r2, wavelength, noise_power),
            ))
    return paths


def sample_reflectors(
    intensity: float,
    bounds: tuple[float, float, float, float],
    rng_seed: int,
    rcs: float = 50.0,
) -> list[Reflector]:
    """Poisson point process of reflectors, uniform over ``bounds``."""
    if intensity < 0:
        raise ValueError("intensity must be >= 0")
    rng = np.random.default_rng(rng_seed)
    n = int(rng.poisson(intensity))
    x0, y0, x1, y1 = bounds
    xs = rng.uniform(x0, x1, n)
    ys = rng.uniform(y0, y1, n)
    return [Reflector(i, (float(x), float(y)), rcs) for i, (x, y) in enumerate(zip(xs, ys))]


# -- JSON (de)serialization ---------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "bounds": list(scene.bounds),
        "stations": [dict(asdict(bs), position=list(bs.position)) for bs in scene.stations],
        "uavs": [
            dict(asdict(u), position=list(u.position), velocity=list(u.velocity),
                 radial_velocity_per_bs=u.radial_velocity_per_bs(scene.stations))
            for u in scene.uavs
        ],
        "reflectors": [dict(asdict(r), position=list(r.position)) for r in scene.reflectors],
    }


def scene_from_dict(d: dict) -> Scene:
    stations = tuple(BsPose(**dict(s, position=tuple(s["position"]))) for s in d["stations"])
    uavs = []
    for u in d["uavs"]:
        u = dict(u)
        u.pop("radial_velocity_per_bs", None)
        u["position"] = tuple(u["position"])
        u["velocity"] = tuple(u.get("velocity", (0.0, 0.0)))
        u["rotor"] = RotorConfig(**u.get("rotor", {}))
        uavs.append(UavState(**u))
    reflectors = tuple(Reflector(**dict(r, position=tuple(r["position"]))) for r in d.get("reflectors", []))
    return Scene(stations, tuple(uavs), reflectors, tuple(d.get("bounds", (0.0, 0.0, 90.0, 90.0))))
