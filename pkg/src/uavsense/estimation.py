"""Per-station measurement chain: range/velocity FFTs, CA-CFAR, MUSIC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .scene import BsPose
from .waveform import EchoCube, WaveformConfig


class CfarConfigError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CfarConfig:
    p_fa: float = 1e-3
    ref_cells_range: int = 4
    ref_cells_velocity: int = 4
    guard_cells_range: int = 2
    guard_cells_velocity: int = 2
    ref_stride: int = 2

    def __post_init__(self):
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError("p_fa must lie in (0, 1)")
        if self.ref_cells_range < 1 or self.ref_cells_velocity < 1:
            raise ValueError("reference cell counts must be >= 1")
        if self.guard_cells_range < 0 or self.guard_cells_velocity < 0:
            raise ValueError("guard cell counts must be >= 0")
        if self.ref_stride < 1:
            raise ValueError("ref_stride must be >= 1")

    @property
    def n_ref(self) -> int:
        return self.ref_cells_range * self.ref_cells_velocity

    @property
    def scale(self) -> float:
        n = self.n_ref
        return n * (self.p_fa ** (-1.0 / n) - 1.0)


@dataclass
class RangeVelocityMap:
    power: np.ndarray  # (L, M)
    range_axis: np.ndarray
    velocity_axis: np.ndarray
    spectrum: Optional[np.ndarray] = None  # (K, L, M) complex, kept for angle estimation

    def signed_velocity(self, m: int) -> float:
        """Velocity of bin m with the upper half of the FFT mapped to negative speeds."""
        n = len(self.velocity_axis)
        step = self.velocity_axis[1] if n > 1 else 0.0
        return float((m - n if m >= n // 2 else m) * step)


@dataclass
class Detection:
    bs_id: int
    range_m: float
    velocity_mps: float
    angle_rad: float
    pd: float
    pr: float = 0.5
    snr_est: float = 0.0
    range_bin: int = -1
    velocity_bin: int = -1


def range_profile(cube: EchoCube | np.ndarray) -> np.ndarray:
    """Hamming window and FFT along fast time; returns (K, L, M) complex."""
    s = cube.samples if isinstance(cube, EchoCube) else np.asarray(cube)
    w = np.hamming(s.shape[-1])
    return np.fft.fft(s * w, axis=-1).transpose(0, 2, 1)


def velocity_profile(range_mat: np.ndarray, cfg: WaveformConfig) -> RangeVelocityMap:
    """Hamming window and FFT along slow time; power averaged over antennas."""
    r = np.asarray(range_mat)
    if r.ndim == 2:
        r = r[None]
    w = np.hamming(r.shape[-1])
    v = np.fft.fft(r * w, axis=-1)
    power = np.mean(np.abs(v) ** 2, axis=0)
    l_bins, m_bins = power.shape
    return RangeVelocityMap(
        power=power,
        range_axis=np.arange(l_bins) * cfg.range_bin_m,
        velocity_axis=np.arange(m_bins) * cfg.velocity_bin_mps,
        spectrum=v,
    )


def _reference_offsets(cfg: CfarConfig) -> tuple[np.ndarray, np.ndarray]:
    """Range and velocity offsets of the reference blocks.

    The reference set is the product of N_R range offsets and N_V velocity
    offsets, split evenly on both sides beyond the guard band, so exactly
    N_R*N_V cells enter the average. Offsets step by ``ref_stride`` bins:
    Hamming leakage correlates neighbouring bins, and correlated reference
    cells inflate the false-alarm rate.
    """
    def side(n: int, g: int) -> np.ndarray:
        lead = n // 2
        lag = n - lead
        s = cfg.ref_stride
        return np.concatenate([-(g + 1 + s * np.arange(lead))[::-1], g + 1 + s * np.arange(lag)])

    return side(cfg.ref_cells_range, cfg.guard_cells_range), side(cfg.ref_cells_velocity, cfg.guard_cells_velocity)


def cfar_noise_level(power: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """Mean reference-cell power per cell (beta).

    Velocity wraps (the Doppler axis is periodic); range is clipped at the map
    edges and beta is averaged over whatever reference cells remain.
    """
    dr, dv = _reference_offsets(cfg)
    span_r = int(np.max(np.abs(dr)))
    span_v = int(np.max(np.abs(dv)))
    l_bins, m_bins = power.shape
    if m_bins < 2 * span_v + 1 or l_bins < span_r + 1:
        raise CfarConfigError("map is smaller than the CFAR window")
    kernel = np.zeros((2 * span_r + 1, 2 * span_v + 1))
    for a in dr:
        for b in dv:
            kernel[span_r + a, span_v + b] = 1.0
    padded = np.pad(power, ((0, 0), (span_v, span_v)), mode="wrap")
    padded = np.pad(padded, ((span_r, span_r), (0, 0)), mode="constant")
    ones = np.pad(np.ones_like(power), ((0, 0), (span_v, span_v)), mode="wrap")
    ones = np.pad(ones, ((span_r, span_r), (0, 0)), mode="constant")
    total = ndimage.correlate(padded, kernel, mode="constant")[span_r:-span_r or None, span_v:-span_v or None]
    count = ndimage.correlate(ones, kernel, mode="constant")[span_r:-span_r or None, span_v:-span_v or None]
    return total / np.maximum(count, 1.0)


def ca_cfar(rv: RangeVelocityMap | np.ndarray, cfg: CfarConfig, group: bool = True) -> list[tuple[int, int, float]]:
    """Cell-averaging CFAR over a range-velocity power map.

    A cell passes when E >= N (P_FA^(-1/N) - 1) beta. With ``group`` set,
    a crossing is reported only if no other crossing within one bin (range
    and velocity, velocity wrapping) is stronger, so each peak yields one
    detection while separate peaks in a sidelobe skirt stay distinct.
    Returns (range bin, velocity bin, E/beta - 1).
    """
    power = rv.power if isinstance(rv, RangeVelocityMap) else np.asarray(rv, dtype=float)
    beta = cfar_noise_level(power, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        hits = power >= cfg.scale * beta
        hits &= beta > 0
        ratio = np.where(beta > 0, power / beta, 0.0)
    if not group:
        ls, ms = np.nonzero(hits)
        return [(int(l), int(m), max(float(ratio[l, m]) - 1.0, 0.0)) for l, m in zip(ls, ms)]

    # a crossing survives when no crossing within one bin (velocity wrapping) is stronger
    masked = np.where(hits, power, -np.inf)
    wrapped = np.pad(masked, ((1, 1), (0, 0)), mode="constant", constant_values=-np.inf)
    local = ndimage.maximum_filter(wrapped, size=3, mode="wrap")[1:-1]
    ls, ms = np.nonzero(hits & (masked >= local))
    out = [(int(l), int(m), max(float(ratio[l, m]) - 1.0, 0.0)) for l, m in zip(ls, ms)]
    out.sort()
    return out


def detection_probability(snr, cfg: CfarConfig):
    """Closed-form CA-CFAR detection probability for a fluctuating target."""
    n = cfg.n_ref
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("snr must be >= 0")
    pd = (1.0 + (cfg.p_fa ** (-1.0 / n) - 1.0) / (1.0 + snr)) ** (-n)
    return float(pd) if pd.ndim == 0 else pd


# -- MUSIC --------------------------------------------------------------------

MUSIC_GRID = np.linspace(-np.pi / 2, np.pi / 2, 2048)


def steering_matrix(angles: np.ndarray, k: int, spacing: float, wavelength: float) -> np.ndarray:
    """a_k(theta) = exp(j 2pi/lambda d k sin theta), shape (K, len(angles))."""
    return np.exp(2j * np.pi / wavelength * spacing * np.arange(k)[:, None] * np.sin(np.asarray(angles))[None, :])


def estimate_source_count(eigvals: np.ndarray, snapshots: int, max_sources: Optional[int] = None) -> int:
    """Minimum description length order estimate from ascending eigenvalues."""
    lam = np.sort(np.maximum(np.real(eigvals), 1e-300))[::-1]
    k = len(lam)
    cap = k - 1 if max_sources is None else min(max_sources, k - 1)
    best, best_d = np.inf, 1
    for d in range(0, cap + 1):
        tail = lam[d:]
        geo = np.exp(np.mean(np.log(tail)))
        ari = np.mean(tail)
        mdl = -snapshots * (k - d) * np.log(geo / ari) + 0.5 * d * (2 * k - d) * np.log(snapshots)
        if mdl < best:
            best, best_d = mdl, d
    return max(best_d, 1)


def music_spectrum(snapshot: np.ndarray, array: BsPose, wavelength: float, source_count: int,
                   grid: np.ndarray = MUSIC_GRID) -> np.ndarray:
    """Null spectrum a^H U_N U_N^H a over ``grid`` (small where sources are)."""
    x = np.asarray(snapshot)
    k, n = x.shape
    if n < k:
        raise EstimationError("need at least K snapshots")
    if not 1 <= source_count < k:
        raise EstimationError("source_count must lie in [1, K)")
    cov = x @ x.conj().T / n
    w, v = np.linalg.eigh(cov)
    rank = int(np.sum(w > max(w[-1], 1e-300) * 1e-10))
    if source_count > rank:
        raise EstimationError(f"covariance rank {rank} cannot support {source_count} sources")
    un = v[:, : k - source_count]
    a = steering_matrix(grid, k, array.element_spacing, wavelength)
    proj = un.conj().T @ a
    return np.real(np.sum(proj.conj() * proj, axis=0))


def _parabolic(grid: np.ndarray, y: np.ndarray, i: int) -> float:
    if i <= 0 or i >= len(grid) - 1:
        return float(grid[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = y0 - 2 * y1 + y2
    if den <= 0:
        return float(grid[i])
    return float(grid[i] + 0.5 * (y0 - y2) / den * (grid[1] - grid[0]))


def music_angles(snapshot: np.ndarray, array: BsPose, wavelength: float, source_count: int,
                 grid: np.ndarray = MUSIC_GRID) -> np.ndarray:
    """The ``source_count`` deepest local minima of the null spectrum, refined."""
    spec = music_spectrum(snapshot, array, wavelength, source_count, grid)
    interior = np.flatnonzero((spec[1:-1] <= spec[:-2]) & (spec[1:-1] <= spec[2:])) + 1
    cand = list(interior)
    for edge in (0, len(spec) - 1):
        cand.append(edge)
    cand = sorted(set(cand), key=lambda i: spec[i])[:source_count]
    return np.array([_parabolic(grid, spec, i) for i in cand])


def music_angle(snapshot: np.ndarray, array: BsPose, wavelength: float, source_count: int = 1) -> float:
    return float(music_angles(snapshot, array, wavelength, source_count)[0])


def detect_station(cube: EchoCube, cfg: CfarConfig, bs: BsPose, wf: WaveformConfig,
                   max_sources: int = 3) -> list[Detection]:
    """Range/velocity profiles, CA-CFAR, then a MUSIC angle per detection.

    The MUSIC snapshot is the range bin across all pulses (K x M). When the
    order estimate finds several sources in that bin, the candidate whose
    steering vector best matches the detected Doppler cell is kept. Cells
    above L/2 hold negative beat frequencies, which no echo within the
    unambiguous range produces, so they are not reported.
    """
    rp = range_profile(cube)
    rv = velocity_profile(rp, wf)
    lam = wf.wavelength
    out = []
    for l, m, snr in ca_cfar(rv, cfg):
        if l > wf.samples_per_pulse // 2:
            continue
        snap = rp[:, l, :]
        if bs.antenna_count > 1:
            cov = snap @ snap.conj().T / snap.shape[1]
            d = estimate_source_count(np.linalg.eigvalsh(cov), snap.shape[1], max_sources)
            d = min(d, bs.antenna_count - 1)
            try:
                cands = music_angles(snap, bs, lam, d)
            except EstimationError:
                cands = music_angles(snap, bs, lam, 1)
            if len(cands) > 1:
                cell = rv.spectrum[:, l, m]
                a = steering_matrix(cands, bs.antenna_count, bs.element_spacing, lam)
                theta = float(cands[int(np.argmax(np.abs(a.conj().T @ cell)))])
            else:
                theta = float(cands[0])
        else:
            theta = 0.0
        out.append(Detection(
            bs_id=bs.id, range_m=float(rv.range_axis[l]), velocity_mps=rv.signed_velocity(m),
            angle_rad=theta, pd=float(detection_probability(snr, cfg)), pr=0.5, snr_est=snr,
            range_bin=l, velocity_bin=m,
        ))
    return out


DETECTION_COLUMNS = ["bs_id", "range_m", "velocity_mps", "angle_rad", "pd", "pr", "snr_db"]


def _g9(x: float) -> str:
    return f"{x:.9g}"


def write_detections_csv(detections: Iterable[Detection], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        for d in detections:
            snr_db = 10.0 * math.log10(d.snr_est) if d.snr_est > 0 else -math.inf
            w.writerow([d.bs_id, _g9(d.range_m), _g9(d.velocity_mps), _g9(d.angle_rad),
                        _g9(d.pd), _g9(d.pr), _g9(snr_db)])


def read_detections_csv(path: Path) -> list[Detection]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            snr_db = float(row["snr_db"])
            out.append(Detection(
                bs_id=int(row["bs_id"]), range_m=float(row["range_m"]),
                velocity_mps=float(row["velocity_mps"]), angle_rad=float(row["angle_rad"]),
                pd=float(row["pd"]), pr=float(row["pr"]),
                snr_est=0.0 if snr_db == -math.inf else 10.0 ** (snr_db / 10.0),
            ))
    return out
