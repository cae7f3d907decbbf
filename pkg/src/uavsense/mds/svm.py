"""Soft-margin RBF support vector machine trained by SMO.

Working-set selection uses the second-order (maximal gain) rule, as in
LIBSVM; the kernel matrix is held in memory, so training
sets are expected to stay in the low thousands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TAU = 1e-12


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized features
    dual_coefficients: np.ndarray  # alpha_i * y_i
    bias: float
    kernel_gamma: float
    regularization_c: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.feature_mean) / self.feature_scale

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        z = self._standardize(x)
        k = rbf_kernel(z, self.support_vectors, self.kernel_gamma)
        return k @ self.dual_coefficients + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(x) > 0, 1, -1)

    def to_dict(self) -> dict:
        return {
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefficients": self.dual_coefficients.tolist(),
            "bias": self.bias,
            "kernel_gamma": self.kernel_gamma,
            "regularization_c": self.regularization_c,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(
            np.asarray(d["support_vectors"], float).reshape(len(d["dual_coefficients"]), -1),
            np.asarray(d["dual_coefficients"], float),
            float(d["bias"]),
            float(d["kernel_gamma"]),
            float(d["regularization_c"]),
            np.asarray(d["feature_mean"], float),
            np.asarray(d["feature_scale"], float),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "SvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * a @ b.T, 0.0)
    return np.exp(-gamma * d2)


def smo_solve(k: np.ndarray, y: np.ndarray, c: float, tol: float = 1e-3,
              max_iter: int = 1_000_000) -> tuple[np.ndarray, float]:
    """Solve the soft-margin dual; returns (alpha, bias) with f(x) = sum a_i y_i K + bias."""
    n = len(y)
    q = (y[:, None] * y[None, :]) * k
    qd = np.diag(q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    for _ in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        g_max = yg[i]
        g_min = float(np.min(yg[low]))
        if g_max - g_min < tol:
            break
        cand = low & (yg < g_max)
        b = g_max - yg[cand]
        a = qd[i] + qd[cand] - 2.0 * y[i] * y[cand] * q[i, cand]
        a = np.where(a > 0, a, TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])

        # two-variable update, as in LIBSVM's Solver::Solve
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(qd[i] + qd[j] + 2.0 * q[i, j], TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, c - diff
            elif alpha[j] > c:
                alpha[j], alpha[i] = c, c + diff
        else:
            quad = max(qd[i] + qd[j] - 2.0 * q[i, j], TAU)
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, total - c
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > c:
                if alpha[j] > c:
                    alpha[j], alpha[i] = c, total - c
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += q[:, i] * (alpha[i] - old_i) + q[:, j] * (alpha[j] - old_j)

    yg = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        ub, lb = np.inf, -np.inf
        for t in range(n):
            if (alpha[t] >= c and y[t] < 0) or (alpha[t] <= 0 and y[t] > 0):
                ub = min(ub, yg[t])
            else:
                lb = max(lb, yg[t])
        rho = 0.5 * (ub + lb)
    return alpha, -rho


def train_svm(positives: np.ndarray, negatives: np.ndarray, c: float = 1.0, gamma: float | None = None,
              rng_seed: int = 0, tol: float = 1e-3, max_samples: int = 3000) -> SvmModel:
    """Fit an RBF SVM separating ``positives`` (+1) from ``negatives`` (-1).

    Features are standardized first. ``gamma`` defaults to
    1 / (n_features * variance of the standardized data). When the training
    set exceeds ``max_samples`` a seeded class-balanced subsample is used.
    """
    pos = np.atleast_2d(np.asarray(positives, dtype=float))
    neg = np.atleast_2d(np.asarray(negatives, dtype=float))
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes must be non-empty")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("features must be finite")
    if len(pos) + len(neg) > max_samples:
        rng = np.random.default_rng(rng_seed)
        half = max_samples // 2
        if len(pos) > half:
            pos = pos[np.sort(rng.choice(len(pos), half, replace=False))]
        if len(neg) > max_samples - len(pos):
            neg = neg[np.sort(rng.choice(len(neg), max_samples - len(pos), replace=False))]
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    if gamma is None:
        var = float(z.var())
        gamma = 1.0 / (z.shape[1] * var) if var > 0 else 1.0
    k = rbf_kernel(z, z, gamma)
    alpha, bias = smo_solve(k, y, c, tol)
    sv = alpha > 0
    return SvmModel(z[sv], (alpha * y)[sv], bias, float(gamma), float(c), mean, scale)
