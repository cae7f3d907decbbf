"""LFMCW waveform description and de-chirped echo synthesis."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .constants import (
    DEFAULT_BANDWIDTH_HZ,
    DEFAULT_CARRIER_HZ,
    DEFAULT_PULSE_COUNT,
    DEFAULT_PULSE_DURATION_S,
    DEFAULT_SAMPLES_PER_PULSE,
    SPEED_OF_LIGHT,
)
from .scene import BsPose, PropagationPath, RotorConfig


class RangeAmbiguityError(ValueError):
    """A beat tone lands above the Nyquist limit of the IF sampler."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class WaveformConfig:
    carrier_hz: float = DEFAULT_CARRIER_HZ
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ
    pulse_duration_s: float = DEFAULT_PULSE_DURATION_S
    samples_per_pulse: int = DEFAULT_SAMPLES_PER_PULSE
    pulse_count: int = DEFAULT_PULSE_COUNT
    amplitude: float = 1.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.pulse_duration_s <= 0 or self.carrier_hz <= 0:
            raise ValueError("carrier, bandwidth and pulse duration must be positive")
        if not (_is_pow2(self.samples_per_pulse) and _is_pow2(self.pulse_count)):
            raise ValueError("samples_per_pulse and pulse_count must be powers of two")

    @property
    def slope(self) -> float:
        return self.bandwidth_hz / self.pulse_duration_s

    @property
    def sample_rate(self) -> float:
        return self.samples_per_pulse / self.pulse_duration_s

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def range_bin_m(self) -> float:
        """Range spacing of one fast-time FFT bin, c*fs/(2*L*mu)."""
        return SPEED_OF_LIGHT * self.sample_rate / (2.0 * self.samples_per_pulse * self.slope)

    @property
    def velocity_bin_mps(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.carrier_hz * self.pulse_count * self.pulse_duration_s)

    @property
    def max_range(self) -> float:
        """Largest range whose beat frequency stays at or below fs/2."""
        return SPEED_OF_LIGHT * self.sample_rate / (4.0 * self.slope)

    @property
    def max_velocity(self) -> float:
        return self.velocity_bin_mps * self.pulse_count / 2.0

    def beat_frequency(self, range_m: float) -> float:
        return 2.0 * self.slope * range_m / SPEED_OF_LIGHT

    def sample_times(self) -> np.ndarray:
        """t = mT + lT/L as an (M, L) array."""
        m = np.arange(self.pulse_count)[:, None]
        l = np.arange(self.samples_per_pulse)[None, :]
        return m * self.pulse_duration_s + l * self.pulse_duration_s / self.samples_per_pulse


@dataclass
class EchoCube:
    """Complex IF samples indexed (antenna, pulse, fast-time sample)."""

    samples: np.ndarray
    config: WaveformConfig
    bs_id: int = 0

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise ValueError("samples must be K x M x L")
        _, m, l = self.samples.shape
        if (m, l) != (self.config.pulse_count, self.config.samples_per_pulse):
            raise ValueError("cube dimensions disagree with the waveform config")


def complex_noise(shape, noise_power: float, rng_seed: int) -> np.ndarray:
    """Circular complex Gaussian noise of total power ``noise_power`` per sample.

    Philox counter-based stream plus the Box-Muller transform, so the bits
    depend only on the seed.
    """
    rng = np.random.Generator(np.random.Philox(rng_seed))
    u1 = 1.0 - rng.random(shape)
    u2 = rng.random(shape)
    return np.sqrt(-noise_power * np.log(u1)) * np.exp(2j * np.pi * u2)


def synthesize_if_cube(
    paths: Sequence[PropagationPath],
    cfg: WaveformConfig,
    bs: BsPose,
    noise_power: float,
    rng_seed: int,
    reference_noise_power: Optional[float] = None,
    modulation: Optional[Mapping[int, np.ndarray]] = None,
) -> EchoCube:
    """Build the K x M x L de-chirped cube for one station.

    Path amplitudes are sqrt(snr * N0) with N0 = ``reference_noise_power``
    (defaults to ``noise_power``), which reproduces the radar-range amplitude
    the SNR was computed from. ``modulation`` maps a UAV id to an (M, L)
    complex envelope multiplying every path of that UAV.
    """
    if noise_power < 0:
        raise ValueError("noise_power must be >= 0")
    k_ant, m_pulses, l_samples = bs.antenna_count, cfg.pulse_count, cfg.samples_per_pulse
    n0 = noise_power if reference_noise_power is None else reference_noise_power
    if n0 <= 0:
        n0 = 1.0
    lam = cfg.wavelength
    fast = np.arange(l_samples) / cfg.sample_rate
    slow = np.arange(m_pulses) * cfg.pulse_duration_s
    k = np.arange(k_ant)
    cube = np.zeros((k_ant, m_pulses, l_samples), dtype=complex)
    for p in paths:
        fb = cfg.beat_frequency(p.apparent_range)
        if fb > cfg.sample_rate / 2.0:
            raise RangeAmbiguityError(
                f"path range {p.apparent_range:.2f} m exceeds unambiguous range {cfg.max_range:.2f} m")
        amp = cfg.amplitude * math.sqrt(p.snr * n0)
        bulk = np.exp(1j * 4.0 * np.pi * p.apparent_range / lam)
        tone_l = np.exp(2j * np.pi * fb * fast)
        tone_m = np.exp(4j * np.pi * p.apparent_velocity * slow / lam)
        tone_k = np.exp(2j * np.pi / lam * bs.element_spacing * k * math.sin(p.apparent_angle))
        mt = amp * bulk * tone_m[:, None] * tone_l[None, :]
        if modulation is not None and p.uav_id in modulation:
            mt = mt * modulation[p.uav_id]
        cube += tone_k[:, None, None] * mt[None, :, :]
    if noise_power > 0:
        cube += complex_noise(cube.shape, noise_power, rng_seed)
    return EchoCube(cube, cfg, bs.id)


def synthesize_rotor_echo(
    rotor: RotorConfig,
    range_m: float,
    cfg: WaveformConfig,
    wavelength: Optional[float] = None,
    n_samples: Optional[int] = None,
) -> np.ndarray:
    """Coherent blade-echo sum S(t) sampled at fs over M*T seconds.

    Each blade contributes a sinc-weighted term with phase
    (2*pi*L/lambda) cos(beta) cos(theta_n + Omega t - alpha), blade offsets
    theta_n = 2*pi*n/N_bl. Rotor r is offset in azimuth by
    r * ``rotor.rotor_phase_step``; with a zero step the rotors are identical
    and add coherently.
    """
    if rotor.rotor_count < 1:
        raise ValueError("rotor_count must be >= 1")
    lam = cfg.wavelength if wavelength is None else wavelength
    n = cfg.pulse_count * cfg.samples_per_pulse if n_samples is None else n_samples
    t = np.arange(n) / cfg.sample_rate
    blade_offsets = 2.0 * np.pi * np.arange(rotor.blade_count) / rotor.blade_count
    k = (2.0 * np.pi * rotor.blade_length / lam) * math.cos(rotor.elevation)
    bulk = rotor.blade_length * np.exp(-1j * 4.0 * np.pi * range_m / lam)

    def one_rotor(azimuth: float) -> np.ndarray:
        arg = k * np.cos(blade_offsets[:, None] + rotor.rotation_rate * t[None, :] - azimuth)
        # np.sinc is the normalized sinc; the blade model uses sin(x)/x
        return bulk * (np.sinc(arg / np.pi) * np.exp(-1j * arg)).sum(axis=0)

    if rotor.rotor_phase_step == 0.0:
        return rotor.rotor_count * one_rotor(rotor.azimuth)
    return sum(one_rotor(rotor.azimuth + r * rotor.rotor_phase_step) for r in range(rotor.rotor_count))


def rotor_modulation(rotor: RotorConfig, cfg: WaveformConfig, fraction: float) -> np.ndarray:
    """Body-plus-blades envelope on the (M, L) sample grid, unit mean amplitude scale.

    ``fraction`` is the blade-to-body amplitude ratio; zero returns ones.
    """
    shape = (cfg.pulse_count, cfg.samples_per_pulse)
    if fraction == 0.0 or rotor.rotor_count < 1:
        return np.ones(shape, dtype=complex)
    s = synthesize_rotor_echo(rotor, 0.0, cfg)
    s = s / (rotor.rotor_count * rotor.blade_count * rotor.blade_length)
    return ((1.0 + fraction * s) / (1.0 + fraction)).reshape(shape)


def write_cube(cube: EchoCube, path: Path) -> None:
    """Little-endian float32 interleaved I/Q, row-major (k, m, l), plus JSON sidecar."""
    path = Path(path)
    iq = np.empty(cube.samples.shape + (2,), dtype="<f4")
    iq[..., 0] = cube.samples.real
    iq[..., 1] = cube.samples.imag
    path.write_bytes(iq.tobytes(order="C"))
    sidecar = {
        "bs_id": cube.bs_id,
        "dims": {"antennas": cube.samples.shape[0], "pulses": cube.samples.shape[1],
                 "samples": cube.samples.shape[2]},
        "dtype": "float32-le interleaved I/Q",
        "order": "k,m,l",
        "config": asdict(cube.config),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_cube(path: Path) -> EchoCube:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    d = meta["dims"]
    raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(d["antennas"], d["pulses"], d["samples"], 2)
    return EchoCube(raw[..., 0].astype(float) + 1j * raw[..., 1].astype(float),
                    WaveformConfig(**meta["config"]), meta["bs_id"])
