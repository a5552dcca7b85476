"""Diagonal Gaussian and Bernoulli densities.

All log densities sum over the last axis, so a ``(n, d)`` batch gives ``n``
values and a ``(d,)`` vector gives a scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import DomainError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))
P_MIN = 1e-7


@dataclass
class DiagGaussian:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"mean {self.mean.shape} and std {self.std.shape} differ")
        if np.any(~(self.std > 0)):
            raise DomainError("standard deviations must be strictly positive")


@dataclass
class BernoulliVec:
    mean: np.ndarray

    def __post_init__(self):
        self.mean = np.clip(np.asarray(self.mean, dtype=np.float64), P_MIN, 1.0 - P_MIN)


def gaussian_log_pdf(dist: DiagGaussian, value) -> np.ndarray | float:
    value = np.asarray(value, dtype=np.float64)
    if value.shape[-1:] != dist.mean.shape[-1:]:
        raise ShapeError(f"value {value.shape} does not match mean {dist.mean.shape}")
    z = (value - dist.mean) / dist.std
    out = np.sum(-0.5 * LOG_2PI - np.log(dist.std) - 0.5 * z * z, axis=-1)
    return out if np.ndim(out) else float(out)


def standard_normal_log_pdf(value) -> np.ndarray | float:
    value = np.asarray(value, dtype=np.float64)
    out = np.sum(-0.5 * LOG_2PI - 0.5 * value * value, axis=-1)
    return out if np.ndim(out) else float(out)


def reparam_sample(dist: DiagGaussian, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1:] != dist.mean.shape[-1:]:
        raise ShapeError(f"eps {eps.shape} does not match mean {dist.mean.shape}")
    return dist.std * eps + dist.mean


def bernoulli_log_pmf(dist: BernoulliVec, value) -> np.ndarray | float:
    value = np.asarray(value, dtype=np.float64)
    if np.any((value != 0.0) & (value != 1.0)):
        raise ValueError("Bernoulli values must be exactly 0 or 1")
    if value.shape[-1:] != dist.mean.shape[-1:]:
        raise ShapeError(f"value {value.shape} does not match mean {dist.mean.shape}")
    m = dist.mean
    out = np.sum(value * np.log(m) + (1.0 - value) * np.log1p(-m), axis=-1)
    return out if np.ndim(out) else float(out)
