"""Recognition probability from rotor micro-Doppler, plus a synthetic corpus."""

from __future__ import annotations

import csv
import math
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from ..scene import RotorConfig
from ..waveform import WaveformConfig, complex_noise, synthesize_rotor_echo
from .emd import emd
from .features import FEATURE_NAMES, extract_features
from .svm import SvmModel, train_svm

DEFAULT_SEGMENTS = 15


def segment_features(echo: np.ndarray, segment_count: int = DEFAULT_SEGMENTS) -> np.ndarray:
    """Feature rows for ``segment_count`` equal windows of |echo|."""
    x = np.abs(np.asarray(echo))
    if segment_count < 1:
        raise ValueError("segment_count must be >= 1")
    seg = len(x) // segment_count
    if seg < 8:
        raise ValueError("echo too short for the requested segmentation")
    rows = []
    for s in range(segment_count):
        part = x[s * seg:(s + 1) * seg]
        rows.append(extract_features(emd(part, max_imfs=4), part))
    return np.array(rows)


def recognition_probability(echo: np.ndarray, model: SvmModel, segment_count: int = DEFAULT_SEGMENTS) -> float:
    """Fraction of segments the classifier labels as UAV."""
    feats = segment_features(echo, segment_count)
    return int(np.sum(model.decision_function(feats) > 0)) / segment_count


# -- synthetic echoes -----------------------------------------------------------

def quadcopter_rotor(rng: np.random.Generator) -> RotorConfig:
    return RotorConfig(
        rotor_count=4,
        blade_count=int(rng.choice([2, 3])),
        blade_length=float(rng.uniform(0.08, 0.15)),
        rotation_rate=2 * math.pi * float(rng.uniform(70.0, 130.0)),
        azimuth=float(rng.uniform(0, 2 * math.pi)),
        elevation=float(rng.uniform(0.0, 0.6)),
        rotor_phase_step=float(rng.uniform(0.3, 1.2)),
    )


def helicopter_rotor(rng: np.random.Generator) -> RotorConfig:
    return RotorConfig(
        rotor_count=1,
        blade_count=2,
        blade_length=float(rng.uniform(0.8, 1.2)),
        rotation_rate=2 * math.pi * float(rng.uniform(3.0, 8.0)),
        azimuth=float(rng.uniform(0, 2 * math.pi)),
        elevation=float(rng.uniform(0.0, 0.6)),
    )


def noisy_echo(clean: np.ndarray, snr: float, rng_seed: int) -> np.ndarray:
    """Add complex noise so mean |clean|^2 / noise power equals ``snr``."""
    p = float(np.mean(np.abs(clean) ** 2))
    if p == 0:
        return complex_noise(clean.shape, 1.0, rng_seed)
    return clean + complex_noise(clean.shape, p / snr, rng_seed)


def rotor_echo(rotor: RotorConfig, snr: float, cfg: WaveformConfig, rng_seed: int) -> np.ndarray:
    return noisy_echo(synthesize_rotor_echo(rotor, 0.0, cfg), snr, rng_seed)


def static_echo(snr: float, cfg: WaveformConfig, rng_seed: int) -> np.ndarray:
    n = cfg.pulse_count * cfg.samples_per_pulse
    phase = np.random.default_rng(rng_seed).uniform(0, 2 * math.pi)
    return noisy_echo(np.full(n, np.exp(1j * phase)), snr, rng_seed + 1)


def corpus_echo(kind: str, rng: np.random.Generator, cfg: WaveformConfig,
                snr_db_range: tuple[float, float] = (5.0, 25.0)) -> np.ndarray:
    """One echo of ``kind`` in {'rotor', 'static', 'noise', 'helicopter'}."""
    snr = 10 ** (rng.uniform(*snr_db_range) / 10)
    seed = int(rng.integers(2**31))
    if kind == "rotor":
        return rotor_echo(quadcopter_rotor(rng), snr, cfg, seed)
    if kind == "helicopter":
        return rotor_echo(helicopter_rotor(rng), snr, cfg, seed)
    if kind == "static":
        return static_echo(snr, cfg, seed)
    if kind == "noise":
        return complex_noise((cfg.pulse_count * cfg.samples_per_pulse,), 1.0, seed)
    raise ValueError(f"unknown echo kind {kind!r}")


def build_corpus(n_per_class: int, rng_seed: int, cfg: WaveformConfig = WaveformConfig(),
                 negative_kinds: Iterable[str] = ("static", "noise", "helicopter"),
                 segment_count: int = DEFAULT_SEGMENTS) -> tuple[np.ndarray, np.ndarray]:
    """Segment-level features: (positives, negatives).

    Negatives cycle through ``negative_kinds`` so each is equally represented.
    """
    rng = np.random.default_rng(rng_seed)
    kinds = list(negative_kinds)
    pos = [segment_features(corpus_echo("rotor", rng, cfg), segment_count) for _ in range(n_per_class)]
    neg = [segment_features(corpus_echo(kinds[i % len(kinds)], rng, cfg), segment_count)
           for i in range(n_per_class)]
    return np.vstack(pos), np.vstack(neg)


@lru_cache(maxsize=8)
def train_recognizer(rng_seed: int = 0, n_per_class: int = 60,
                     negative_kinds: tuple[str, ...] = ("static", "noise", "helicopter")) -> SvmModel:
    pos, neg = build_corpus(n_per_class, rng_seed, negative_kinds=negative_kinds)
    return train_svm(pos, neg, c=1.0, rng_seed=rng_seed)


def write_feature_csv(pos: np.ndarray, neg: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *FEATURE_NAMES])
        for label, block in ((1, pos), (-1, neg)):
            for row in block:
                w.writerow([label, *(f"{v:.9g}" for v in row)])
