"""Model containers and objective evaluators.

Shapes: a signal ``x`` has the padded shape ``S`` (``P = prod(S)``); base
filters are stacked as ``(R, *M)`` spatially or ``(R, *S)`` spectrally;
weights ``W`` are ``(R, K)``; codes ``Z`` are ``(K, *S)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import InvalidInputError
from .fftops import FilterSupport, crop, fft, inverse_fft, zero_pad

PSNR_CAP = 300.0


@dataclass
class FilterBank:
    """Filters kept in the frequency domain together with their support."""

    spectral: np.ndarray
    support: FilterSupport

    def __post_init__(self):
        self.spectral = np.asarray(self.spectral, dtype=complex)
        if self.spectral.shape[1:] != self.support.padded:
            raise InvalidInputError(
                f"filter spectra shape {self.spectral.shape} does not match {self.support.padded}")

    @classmethod
    def from_spatial(cls, B, support):
        B = np.asarray(B, dtype=float)
        if B.shape[1:] != support.extents:
            raise InvalidInputError(f"filters of shape {B.shape[1:]} do not match {support.extents}")
        return cls(fft(zero_pad(B, support), ndim=support.ndim), support)

    @property
    def count(self):
        return self.spectral.shape[0]

    @property
    def spatial(self):
        return crop(inverse_fft(self.spectral, ndim=self.support.ndim), self.support)

    def norms(self):
        return np.linalg.norm(self.spatial.reshape(self.count, -1), axis=1)

    def is_feasible(self, tol=1e-8):
        return bool(np.all(self.norms() <= 1.0 + tol))

    def copy(self):
        return FilterBank(self.spectral.copy(), self.support)


def _check_codes(Z, W, shape=None):
    Z = np.asarray(Z, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or Z.shape[0] != W.shape[1]:
        raise InvalidInputError(f"codes {Z.shape} and weights {W.shape} disagree on K")
    if shape is not None and Z.shape[1:] != tuple(shape):
        raise InvalidInputError(f"code maps {Z.shape[1:]} do not match signal shape {tuple(shape)}")
    return Z, W


def combine_codes(Z, W):
    """Spatial ``Z W^T``: one combined code map per base filter, shape ``(R, *S)``."""
    Z, W = _check_codes(Z, W)
    return np.tensordot(W, Z, axes=(1, 0))


def aggregate_codes(Z, W):
    """Spectra ``fft(Z W^T(:, r))`` for r = 1..R."""
    Z, W = _check_codes(Z, W)
    return fft(combine_codes(Z, W), ndim=Z.ndim - 1)


def sample_dictionary(B, W):
    """Effective spatial filters ``B W``, shape ``(K, *M)``."""
    B = np.asarray(B, dtype=float)
    W = np.asarray(W, dtype=float)
    if B.shape[0] != W.shape[0]:
        raise InvalidInputError(f"{B.shape[0]} base filters but weights have {W.shape[0]} rows")
    return np.tensordot(W.T, B, axes=(1, 0))


def _direct_circular(filt, code):
    """Circular convolution of a small corner filter with a code map, by shifts."""
    out = np.zeros_like(code)
    for idx in product(*(range(e) for e in filt.shape)):
        w = filt[idx]
        if w != 0.0:
            out += w * np.roll(code, idx, axis=tuple(range(code.ndim)))
    return out


def spatial_reconstruction(B, W, Z):
    """``sum_k (B W)(:, k) * Z(:, k)`` with direct spatial circular sums (no transforms)."""
    Z, W = _check_codes(Z, W)
    D = sample_dictionary(B, W)
    if D.ndim != Z.ndim or any(m > p for m, p in zip(D.shape[1:], Z.shape[1:])):
        raise InvalidInputError(f"filters {D.shape[1:]} do not fit in code maps {Z.shape[1:]}")
    return sum(_direct_circular(D[k], Z[k]) for k in range(Z.shape[0]))


def spatial_objective(x, B, W, Z):
    """``0.5 * ||x - sum_k (B W)_k * Z_k||^2`` evaluated in the spatial domain."""
    x = np.asarray(x, dtype=float)
    Z, W = _check_codes(Z, W, x.shape)
    r = x - spatial_reconstruction(B, W, Z)
    return 0.5 * float(np.vdot(r, r).real)


def _check_bank(Bt, xt_shape, R):
    Bt = np.asarray(Bt)
    if Bt.shape != (R,) + tuple(xt_shape):
        raise InvalidInputError(f"filter spectra {Bt.shape} do not match {(R,) + tuple(xt_shape)}")
    return Bt


def _spectra(B):
    return B.spectral if isinstance(B, FilterBank) else np.asarray(B)


def spectral_residual(xt, B, W, Z):
    xt = np.asarray(xt)
    Z, W = _check_codes(Z, W, xt.shape)
    Bt = _check_bank(_spectra(B), xt.shape, W.shape[0])
    Yt = aggregate_codes(Z, W)
    return xt - np.einsum("r...,r...->...", Bt, Yt)


def spectral_objective(xt, B, W, Z):
    """``(1/2P) * ||xt - sum_r Bt_r . Yt_r||^2``; ``B`` is a FilterBank or raw spectra."""
    res = spectral_residual(xt, B, W, Z)
    return float(np.vdot(res, res).real) / (2 * res.size)


def full_objective(samples, B, Ws, Zs, beta):
    """Mean over samples of the spectral objective plus ``beta * ||Z_i||_1``.

    ``samples`` are spectra; terms are reduced with ``math.fsum`` so the
    result does not depend on evaluation order.
    """
    samples = list(samples)
    if not samples:
        raise InvalidInputError("full_objective needs at least one sample")
    if not beta > 0:
        raise InvalidInputError(f"beta must be positive, got {beta}")
    if not (len(samples) == len(Ws) == len(Zs)):
        raise InvalidInputError("samples, weights and codes differ in length")
    terms = [spectral_objective(xt, B, W, Z) + beta * float(np.abs(Z).sum())
             for xt, W, Z in zip(samples, Ws, Zs)]
    return math.fsum(terms) / len(terms)


def reconstruct(B, W, Z):
    """Reconstruction ``ifft(sum_r Bt_r . fft(Z W^T(:, r)))`` using R spectral products."""
    Z, W = _check_codes(Z, W)
    Bt = _check_bank(_spectra(B), Z.shape[1:], W.shape[0])
    Yt = aggregate_codes(Z, W)
    return inverse_fft(np.einsum("r...,r...->...", Bt, Yt), ndim=Z.ndim - 1)


def psnr_values(reconstructions, references):
    """Per-sample ``20 log10(sqrt(P) / ||xhat - x||)``; exact matches give ``inf``."""
    reconstructions = list(reconstructions)
    references = list(references)
    if len(reconstructions) != len(references) or not references:
        raise InvalidInputError("psnr needs equally long, non-empty lists")
    out = []
    for xh, x in zip(reconstructions, references):
        xh = np.asarray(xh, dtype=float)
        x = np.asarray(x, dtype=float)
        if xh.shape != x.shape:
            raise InvalidInputError(f"reconstruction {xh.shape} and reference {x.shape} differ")
        err = float(np.linalg.norm(xh - x))
        if err == 0.0:
            warnings.warn("exact reconstruction: PSNR is infinite", RuntimeWarning, stacklevel=2)
            out.append(math.inf)
        else:
            out.append(20.0 * math.log10(math.sqrt(x.size) / err))
    return np.array(out)


def psnr(reconstructions, references, cap=PSNR_CAP):
    """Mean PSNR in dB (peak 1).

    Exact reconstructions enter the mean at ``cap`` dB; if every sample is
    exact the result is ``inf``.
    """
    return mean_psnr(psnr_values(reconstructions, references), cap)


def mean_psnr(values, cap=PSNR_CAP):
    """Mean of per-sample PSNRs with ``+inf`` entries counted as ``cap``.

    ``nan`` entries (no reference) are ignored; an empty or all-``nan``
    input gives ``nan`` and an all-``inf`` input gives ``inf``.
    """
    vals = np.asarray(values, dtype=float)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return math.nan
    if np.all(np.isposinf(vals)):
        return math.inf
    return math.fsum(np.minimum(vals, cap)) / vals.size


def compression_ratio(K, R):
    """Memory ratio ``(K/R)^2`` of K-filter statistics over R-filter statistics."""
    if R < 1 or K < 1:
        raise InvalidInputError("filter counts must be positive")
    if R > K:
        raise InvalidInputError(f"R={R} exceeds K={K}")
    return (K / R) ** 2
