"""Micro-Doppler recognition: spectrogram, EMD, IMF features, RBF SVM."""

from .emd import ImfSet, emd, local_extrema, zero_crossings
from .features import FEATURE_NAMES, extract_features
from .recognition import recognition_probability, segment_features, train_recognizer
from .spectrogram import Spectrogram, stft
from .svm import SvmModel, train_svm

__all__ = [
    "FEATURE_NAMES", "ImfSet", "Spectrogram", "SvmModel", "emd", "extract_features",
    "local_extrema", "recognition_probability", "segment_features", "stft",
    "train_recognizer", "train_svm", "zero_crossings",
]
