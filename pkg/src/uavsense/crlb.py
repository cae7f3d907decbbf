"""Equivalent Fisher information and CRLB for hybrid range/bearing localization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .scene import BsPose, Scene, direct_snr
from .waveform import WaveformConfig

SINGULAR_CONDITION = 1e12


class SingularGeometryError(ValueError):
    """UAV and antenna coincide, so bearing and its derivatives are undefined."""


class UnobservableError(ValueError):
    """The EFIM is singular: some direction of the position is unobserved."""


@dataclass(frozen=True)
class FimWeights:
    lambda_toa: float  # 1 / m^2
    lambda_aoa: float  # 1 / rad^2

    def __post_init__(self):
        if self.lambda_toa < 0 or self.lambda_aoa < 0:
            raise ValueError("weights must be >= 0")


@dataclass(frozen=True)
class Efim:
    matrix: np.ndarray
    contributing_antennas: int


def _bearing(p_uav: np.ndarray, p_ant: np.ndarray) -> tuple[float, float]:
    d = p_ant - p_uav
    r = float(np.hypot(*d))
    if r == 0.0:
        raise SingularGeometryError("UAV coincides with an antenna")
    return math.atan2(d[1], d[0]), r


def fim_antenna(p_uav: Sequence[float], p_antenna: Sequence[float], w: FimWeights) -> np.ndarray:
    """lambda_toa q q^T + lambda_aoa / r^2 q_perp q_perp^T for one antenna.

    theta is the UAV-to-antenna bearing, q = (cos, sin), q_perp = (sin, -cos).
    """
    theta, r = _bearing(np.asarray(p_uav, float), np.asarray(p_antenna, float))
    q = np.array([math.cos(theta), math.sin(theta)])
    qp = np.array([math.sin(theta), -math.cos(theta)])
    return w.lambda_toa * np.outer(q, q) + (w.lambda_aoa / r**2) * np.outer(qp, qp)


def default_weights(snr: float, bs: BsPose, wf: WaveformConfig) -> FimWeights:
    """Weights tied to the integrated SNR gamma.

    sigma_r = c / (2 B sqrt(2 gamma)); sigma_theta is the ULA MUSIC bound
    sqrt(6 / (K (K^2 - 1) gamma (2 pi d / lambda)^2)). A single element has no
    bearing information.
    """
    if snr <= 0:
        return FimWeights(0.0, 0.0)
    sigma_r = SPEED_OF_LIGHT / (2.0 * wf.bandwidth_hz * math.sqrt(2.0 * snr))
    k = bs.antenna_count
    if k < 2:
        return FimWeights(1.0 / sigma_r**2, 0.0)
    phase = 2.0 * math.pi * bs.element_spacing / wf.wavelength
    var_theta = 6.0 / (k * (k * k - 1) * snr * phase**2)
    return FimWeights(1.0 / sigma_r**2, 1.0 / var_theta)


def integrated_snr(bs: BsPose, rcs: float, p_uav: Sequence[float], wf: WaveformConfig,
                   noise_power: float) -> float:
    """Direct-path SNR after the L*M-point range/velocity FFT gain."""
    r = float(np.hypot(p_uav[0] - bs.position[0], p_uav[1] - bs.position[1]))
    if r == 0.0:
        raise SingularGeometryError("UAV coincides with a station")
    return (direct_snr(bs, rcs, r, wf.wavelength, noise_power)
            * wf.samples_per_pulse * wf.pulse_count)


def efim(p_uav: Sequence[float], stations: Sequence[BsPose],
         weights: Mapping[int, FimWeights]) -> Efim:
    """Sum the per-antenna information over every element of every station."""
    p = np.asarray(p_uav, float)
    j = np.zeros((2, 2))
    count = 0
    for bs in stations:
        w = weights[bs.id]
        if w.lambda_toa == 0 and w.lambda_aoa == 0:
            continue
        for ant in bs.antenna_positions():
            j += fim_antenna(p, ant, w)
            count += 1
    return Efim(0.5 * (j + j.T), count)


def scene_efim(scene: Scene, p_uav: Sequence[float], wf: WaveformConfig, noise_power: float,
               rcs: float = 0.1) -> Efim:
    weights = {bs.id: default_weights(integrated_snr(bs, rcs, p_uav, wf, noise_power), bs, wf)
               for bs in scene.stations}
    return efim(p_uav, scene.stations, weights)


def crlb(j: Efim | np.ndarray) -> float:
    """tr(J_e^-1) in m^2; raises UnobservableError for a singular EFIM."""
    m = j.matrix if isinstance(j, Efim) else np.asarray(j, float)
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) > SINGULAR_CONDITION:
        raise UnobservableError("EFIM is singular; position is not observable")
    return float(np.trace(np.linalg.inv(m)))


# -- numerical oracle -------------------------------------------------------------

def log_likelihood(p_uav: Sequence[float], stations: Sequence[BsPose], weights: Mapping[int, FimWeights],
                   measurements: Mapping[tuple[int, int], tuple[float, float]]) -> float:
    """Gaussian range/bearing log-likelihood up to its constant.

    ``measurements`` maps (station id, antenna index) to a measured
    (range, bearing). Bearing residuals are wrapped to [-pi, pi).
    """
    p = np.asarray(p_uav, float)
    total = 0.0
    for bs in stations:
        w = weights[bs.id]
        for k, ant in enumerate(bs.antenna_positions()):
            theta, r = _bearing(p, ant)
            mr, mt = measurements[(bs.id, k)]
            dt = (mt - theta + math.pi) % (2.0 * math.pi) - math.pi
            total += w.lambda_toa * (mr - r) ** 2 + w.lambda_aoa * dt**2
    return -0.5 * total


def noiseless_measurements(p_uav: Sequence[float], stations: Sequence[BsPose]) -> dict:
    p = np.asarray(p_uav, float)
    out = {}
    for bs in stations:
        for k, ant in enumerate(bs.antenna_positions()):
            theta, r = _bearing(p, ant)
            out[(bs.id, k)] = (r, theta)
    return out


def numerical_fim(p_uav: Sequence[float], stations: Sequence[BsPose], weights: Mapping[int, FimWeights],
                  step: float = 1e-4) -> np.ndarray:
    """Negative central-difference Hessian of the log-likelihood at noiseless data.

    With zero residuals the second-derivative terms of f_r and f_theta drop out,
    so the Hessian equals -J_e without taking an expectation.
    """
    z = noiseless_measurements(p_uav, stations)
    f: Callable[[np.ndarray], float] = lambda q: log_likelihood(q, stations, weights, z)
    p = np.asarray(p_uav, float)
    h = np.zeros((2, 2))
    e = np.eye(2) * step
    for a in range(2):
        for b in range(a, 2):
            if a == b:
                v = (f(p + e[a]) - 2.0 * f(p) + f(p - e[a])) / step**2
            else:
                v = (f(p + e[a] + e[b]) - f(p + e[a] - e[b]) - f(p - e[a] + e[b])
                     + f(p - e[a] - e[b])) / (4.0 * step**2)
            h[a, b] = h[b, a] = v
    return -h


# -- CRLB map ------------------------------------------------------------------------

def crlb_map(scene: Scene, wf: WaveformConfig, noise_power: float, grid_step: float = 1.0,
             rcs: float = 0.1) -> list[tuple[float, float, float]]:
    """(x, y, CRLB) over the scene bounds, endpoints included; nan where undefined."""
    x0, y0, x1, y1 = scene.bounds
    xs = x0 + grid_step * np.arange(int(math.floor((x1 - x0) / grid_step + 1e-9)) + 1)
    ys = y0 + grid_step * np.arange(int(math.floor((y1 - y0) / grid_step + 1e-9)) + 1)
    rows = []
    for y in ys:
        for x in xs:
            try:
                v = crlb(scene_efim(scene, (x, y), wf, noise_power, rcs))
            except (SingularGeometryError, UnobservableError):
                v = math.nan
            rows.append((float(x), float(y), v))
    return rows


def write_crlb_csv(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "y_m", "crlb_m2"])
        for x, y, v in rows:
            w.writerow([f"{x:.9g}", f"{y:.9g}", f"{v:.9g}"])
