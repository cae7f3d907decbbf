"""Sixteen-value IMF feature vector used by the recognizer."""

from __future__ import annotations

import numpy as np

from .emd import ImfSet, zero_crossings

N_IMF_FEATURES = 4
FEATURE_NAMES = [
    f"imf{d}_{name}"
    for d in range(1, N_IMF_FEATURES + 1)
    for name in ("zero_crossings", "energy", "std", "zc_ratio")
]


def extract_features(imfs: ImfSet, signal: np.ndarray) -> np.ndarray:
    """Per IMF (first four): zero crossings, energy / input energy,
    std / input RMS, zero crossings / input zero crossings.

    Input zero crossings are counted about the input mean, since the
    recognizer feeds magnitude signals that never cross zero. Missing IMFs
    leave their four slots at zero.
    """
    x = np.asarray(signal, dtype=float)
    energy = float(np.sum(x * x))
    if energy <= 0.0:
        raise ValueError("zero-energy input: normalized features are undefined")
    rms = np.sqrt(energy / len(x))
    zc_in = max(zero_crossings(x - x.mean()), 1)
    out = np.zeros(4 * N_IMF_FEATURES)
    for d, m in enumerate(imfs.imfs[:N_IMF_FEATURES]):
        zc = zero_crossings(m)
        out[4 * d: 4 * d + 4] = (zc, float(np.sum(m * m)) / energy, float(np.std(m)) / rms, zc / zc_in)
    return out
