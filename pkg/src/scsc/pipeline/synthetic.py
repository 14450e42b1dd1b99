"""Signals generated from known base filters, for generate-and-recover checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..core import FilterBank, reconstruct
from ..fftops import FilterSupport
from ..prox import ConstraintSet, project_weight_columns


@dataclass
class SyntheticSet:
    signals: list
    filters: np.ndarray      # (R, *M) unit-norm ground-truth base filters
    weights: list            # per-sample (R, K)
    codes: list              # per-sample (K, *S)
    support: FilterSupport

    @property
    def bank(self):
        return FilterBank.from_spatial(self.filters, self.support)


def random_unit_filters(rng, R, extents):
    B = rng.standard_normal((R,) + tuple(extents))
    B /= np.linalg.norm(B.reshape(R, -1), axis=1).reshape((R,) + (1,) * len(extents))
    return B


def smooth_unit_filters(rng, R, extents, blur=1.0):
    """Blurred noise under a Gaussian window: localized, image-like atoms."""
    extents = tuple(extents)
    window = np.ones(extents)
    for axis, m in enumerate(extents):
        ax = np.arange(m) - (m - 1) / 2
        shape = [1] * len(extents)
        shape[axis] = m
        window = window * np.exp(-ax ** 2 / (2 * (m / 4) ** 2)).reshape(shape)
    B = np.stack([gaussian_filter(b, blur, mode="wrap") * window
                  for b in rng.standard_normal((R,) + extents)])
    B /= np.linalg.norm(B.reshape(R, -1), axis=1).reshape((R,) + (1,) * len(extents))
    return B


def sparse_codes(rng, K, shape, density, amplitude=1.0):
    support = rng.random((K,) + tuple(shape)) < density
    return np.where(support, amplitude * rng.standard_normal((K,) + tuple(shape)), 0.0)


def generate(shape, extents, R, K, n_samples, density=0.01, amplitude=3.0,
             constraint="l2", seed=0, filters=None, smooth=False):
    """``n_samples`` signals ``sum_k (B W_i)_k * Z_ik`` with feasible ``W_i`` and sparse ``Z_i``.

    Weight columns are drawn on the boundary of the weight ball so every
    effective filter is used at full scale.  Unless ``filters`` is given the
    base filters are white noise, or smooth windowed atoms with ``smooth=True``.
    """
    rng = np.random.default_rng(seed)
    support = FilterSupport(extents, shape)
    if filters is not None:
        B = np.asarray(filters, dtype=float)
    elif smooth:
        B = smooth_unit_filters(rng, R, support.extents)
    else:
        B = random_unit_filters(rng, R, support.extents)
    bank = FilterBank.from_spatial(B, support)
    cset = ConstraintSet.for_weights(constraint, R)
    signals, Ws, Zs = [], [], []
    for _ in range(n_samples):
        W = rng.standard_normal((R, K))
        W *= cset.radius / np.linalg.norm(W, ord=1 if constraint == "l1" else 2, axis=0)
        W = project_weight_columns(W, cset)
        Z = sparse_codes(rng, K, support.padded, density, amplitude)
        signals.append(reconstruct(bank, W, Z))
        Ws.append(W)
        Zs.append(Z)
    return SyntheticSet(signals, B, Ws, Zs, support)
