"""Empirical mode decomposition by cubic-spline sifting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass
class ImfSet:
    imfs: list[np.ndarray] = field(default_factory=list)
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def reconstruct(self) -> np.ndarray:
        out = self.residual.copy()
        for m in self.imfs:
            out = out + m
        return out


def local_extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of interior maxima and minima; a plateau counts once at its left edge."""
    d = np.diff(x)
    maxima = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0)) + 1
    minima = np.flatnonzero((d[:-1] < 0) & (d[1:] >= 0)) + 1
    return maxima, minima


def zero_crossings(x: np.ndarray) -> int:
    s = np.signbit(x)
    return int(np.count_nonzero(s[1:] != s[:-1]))


def _envelope(t: np.ndarray, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # mirror the two outermost extrema about each end sample
    n = len(x)
    left = idx[:2][::-1]
    right = idx[-2:][::-1]
    knots = np.concatenate([-left, idx, 2 * (n - 1) - right])
    vals = np.concatenate([x[left], x[idx], x[right]])
    knots, keep = np.unique(knots, return_index=True)
    return CubicSpline(knots, vals[keep])(t)


def _is_imf(h: np.ndarray) -> bool:
    mx, mn = local_extrema(h)
    return abs(len(mx) + len(mn) - zero_crossings(h)) <= 1


def sift(x: np.ndarray, sd_threshold: float = 0.2, max_sifts: int = 100) -> np.ndarray | None:
    """Extract one IMF from ``x``; None when ``x`` has too few extrema."""
    t = np.arange(len(x), dtype=float)
    h = x.copy()
    for _ in range(max_sifts):
        mx, mn = local_extrema(h)
        if len(mx) < 2 or len(mn) < 2:
            return None
        mean = 0.5 * (_envelope(t, h, mx) + _envelope(t, h, mn))
        nxt = h - mean
        denom = float(np.sum(h * h))
        sd = float(np.sum(mean * mean)) / denom if denom > 0 else 0.0
        h = nxt
        if sd < sd_threshold and _is_imf(h):
            break
    return h


def emd(signal: np.ndarray, max_imfs: int = 4, sd_threshold: float = 0.2, max_sifts: int = 100) -> ImfSet:
    """Decompose ``signal`` into at most ``max_imfs`` IMFs plus a residual.

    Stops early once the residual has fewer than two maxima or minima.
    The residual is formed by subtraction, so IMFs + residual reproduce the
    input to rounding error.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or len(x) < 8:
        raise ValueError("signal must be 1-D with at least 8 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal must be finite")
    imfs: list[np.ndarray] = []
    residual = x.copy()
    while len(imfs) < max_imfs:
        h = sift(residual, sd_threshold, max_sifts)
        if h is None:
            break
        imfs.append(h)
        residual = residual - h
    return ImfSet(imfs, residual)
