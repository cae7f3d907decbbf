"""Short-time Fourier transform magnitude."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class Spectrogram:
    magnitude: np.ndarray  # (frequency bin, frame)
    frame_hop: int
    window_len: int

    def frame_times(self, sample_rate: float) -> np.ndarray:
        return (np.arange(self.magnitude.shape[1]) * self.frame_hop + self.window_len / 2) / sample_rate

    def frequencies(self, sample_rate: float) -> np.ndarray:
        return np.fft.fftfreq(self.window_len, 1.0 / sample_rate)


def stft(signal: np.ndarray, window_len: int, hop: int) -> Spectrogram:
    """Hamming-windowed frames every ``hop`` samples, |FFT| per frame."""
    x = np.asarray(signal)
    if window_len > len(x):
        raise ValueError("window_len exceeds signal length")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    frames = sliding_window_view(x, window_len)[::hop]
    mag = np.abs(np.fft.fft(frames * np.hamming(window_len), axis=-1))
    return Spectrogram(mag.T, hop, window_len)
