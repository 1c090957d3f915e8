"""Texture features + linear SVM baseline for the patch classifier comparison.

Features (18-dim): an 8-bin histogram of principal-value gradient
magnitudes, an 8-bin radially averaged power-spectrum energy profile
(both normalized to sum 1), and the gradient-magnitude mean and standard
deviation. The SVM trains by deterministic subgradient descent on the
L2-regularized hinge loss with features standardized by the training set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import phase_gradient, read_raster
from .synthgen import SampleRecord

FEATURE_DIM = 18

_GRAD_BIN_EDGES = np.concatenate([np.arange(8) * 0.125 * math.pi, [np.inf]])


def texture_features(values: np.ndarray) -> np.ndarray:
    """18-dim texture descriptor of one phase patch (float64)."""
    mag = phase_gradient(values).magnitude.astype(np.float64)
    valid = mag[~np.isnan(mag)]
    if valid.size:
        hist, _ = np.histogram(valid, bins=_GRAD_BIN_EDGES)
        grad_hist = hist / valid.size
        gmean = valid.mean()
        gstd = valid.std()
    else:
        grad_hist = np.zeros(8)
        grad_hist[0] = 1.0
        gmean = 0.0
        gstd = 0.0

    spec_hist = _radial_spectrum(values)
    return np.concatenate([grad_hist, spec_hist, [gmean, gstd]])


def _radial_spectrum(values: np.ndarray) -> np.ndarray:
    """8-bin radially averaged power spectrum energies, normalized to sum 1."""
    v = values.astype(np.float64)
    mask = np.isnan(v)
    v = np.where(mask, 0.0, v)
    finite = v[~mask]
    if finite.size:
        v = v - finite.mean() * (~mask)
    power = np.abs(np.fft.fft2(v)) ** 2
    ky = np.fft.fftfreq(v.shape[0])[:, None]
    kx = np.fft.fftfreq(v.shape[1])[None, :]
    k = np.hypot(kx, ky)
    edges = np.linspace(0.0, 0.5 * math.sqrt(2.0), 9)
    idx = np.clip(np.digitize(k.ravel(), edges) - 1, 0, 7)
    flat = power.ravel()
    dc = k.ravel() == 0.0
    energies = np.bincount(idx[~dc], weights=flat[~dc], minlength=8)
    total = energies.sum()
    if total <= 0:
        return np.full(8, 1.0 / 8.0)
    return energies / total


@dataclass
class SvmModel:
    """Linear margin model over standardized texture features."""

    w: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray

    def mnv1_record(self):
        from .nn import TAG_SVM

        dim = self.w.shape[0]
        payload = np.concatenate([self.w, self.mean, self.std]).astype(np.float32)
        return TAG_SVM, [dim], [payload, np.array([self.b], dtype=np.float32)]


def svm_score(model: SvmModel, features: np.ndarray) -> float:
    """Signed margin; positive leans deformation."""
    x = (np.asarray(features, dtype=np.float64) - model.mean) / model.std
    return float(x @ model.w + model.b)


def svm_score_patch(model: SvmModel, values: np.ndarray) -> float:
    return svm_score(model, texture_features(values))


def train_svm_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    lam: float = 1e-3,
    n_iters: int = 1000,
) -> SvmModel:
    """Full-batch subgradient descent on hinge loss + (lam/2)|w|^2.

    Deterministic: zero init, step size 1/(lam*(t+1)). Labels are dataset
    labels {0, 1}; internally y in {-1, +1} with +1 = deformation.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("training requires samples of both classes")
    y = np.where(labels == 1, 1.0, -1.0)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    xs = (x - mean) / std

    n, dim = xs.shape
    w = np.zeros(dim)
    b = 0.0
    for t in range(n_iters):
        margins = y * (xs @ w + b)
        viol = margins < 1.0
        gw = lam * w - (y[viol, None] * xs[viol]).sum(axis=0) / n
        gb = -(y[viol]).sum() / n
        step = 1.0 / (lam * (t + 1))
        w -= step * gw
        b -= step * gb
    return SvmModel(w=w, b=b, mean=mean, std=std)


def features_for_samples(samples: list[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.empty((len(samples), FEATURE_DIM))
    ys = np.empty(len(samples), dtype=np.int64)
    for i, rec in enumerate(samples):
        xs[i] = texture_features(read_raster(rec.path).values)
        ys[i] = rec.label
    return xs, ys


def train_svm(samples: list[SampleRecord], lam: float = 1e-3, n_iters: int = 1000) -> SvmModel:
    xs, ys = features_for_samples(samples)
    return train_svm_arrays(xs, ys, lam=lam, n_iters=n_iters)
