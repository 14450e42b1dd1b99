"""Proximal maps and Euclidean projections used by the solvers."""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .errors import InvalidInputError
from .fftops import crop, fft, inverse_fft, zero_pad

FILTER_BALL = "filter"
WEIGHT_L1 = "l1"
WEIGHT_L2 = "l2"
_KINDS = (FILTER_BALL, WEIGHT_L1, WEIGHT_L2)


@dataclass(frozen=True)
class ConstraintSet:
    """A per-column ball constraint.

    ``kind`` is ``"filter"`` (unit l2 ball on each filter), ``"l1"``
    (each weight column in the l1 ball) or ``"l2"`` (each weight column in
    the l2 ball of radius ``1/sqrt(R)``).
    """

    kind: str
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidInputError(f"unknown constraint kind {self.kind!r}")
        if not (self.radius > 0 and np.isfinite(self.radius)):
            raise InvalidInputError(f"constraint radius must be positive, got {self.radius}")

    @classmethod
    def for_weights(cls, kind, R):
        """Weight set whose columns keep ``B @ W`` normalized for any unit-norm ``B``."""
        if kind == WEIGHT_L1:
            return cls(WEIGHT_L1, 1.0)
        if kind == WEIGHT_L2:
            return cls(WEIGHT_L2, 1.0 / sqrt(R))
        raise InvalidInputError(f"{kind!r} is not a weight constraint (use 'l1' or 'l2')")

    def contains(self, W, tol=1e-8):
        W = np.asarray(W, dtype=float)
        ord_ = 1 if self.kind == WEIGHT_L1 else 2
        return bool(np.all(np.linalg.norm(W, ord=ord_, axis=0) <= self.radius + tol))


def soft_threshold(z, tau):
    """Elementwise ``sign(z) * max(|z| - tau, 0)``."""
    if tau < 0:
        raise InvalidInputError(f"soft-threshold level must be nonnegative, got {tau}")
    z = np.asarray(z, dtype=float)
    return np.maximum(z - tau, 0.0) + np.minimum(z + tau, 0.0)


def _check_finite(v):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("projection input contains non-finite values")
    return v


def _l2_columns(V, radius):
    norms = np.linalg.norm(V, axis=0)
    # points on or inside the ball are returned untouched
    scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return V * scale


def _l1_columns(V, radius):
    out = V.copy()
    outside = np.abs(V).sum(axis=0) > radius
    if not np.any(outside):
        return out
    A = np.abs(V[:, outside])
    u = -np.sort(-A, axis=0)
    css = np.cumsum(u, axis=0)
    j = np.arange(1, A.shape[0] + 1)[:, None]
    # positive entries of u - (css - r)/j form a prefix; the threshold comes from its last index
    active = u * j > css - radius
    last = active.shape[0] - 1 - np.argmax(active[::-1], axis=0)
    cols = np.arange(A.shape[1])
    theta = (css[last, cols] - radius) / (last + 1)
    out[:, outside] = np.sign(V[:, outside]) * np.maximum(A - theta, 0.0)
    return out


def project_l2_ball(v, radius):
    if not radius > 0:
        raise InvalidInputError(f"radius must be positive, got {radius}")
    v = _check_finite(v)
    return _l2_columns(v.reshape(-1, 1), radius).reshape(v.shape)


def project_l1_ball(v, radius):
    """Euclidean projection onto ``{u : ||u||_1 <= radius}`` by sort-and-scan."""
    if not radius > 0:
        raise InvalidInputError(f"radius must be positive, got {radius}")
    v = _check_finite(v)
    return _l1_columns(v.reshape(-1, 1), radius).reshape(v.shape)


def project_weight_columns(W, constraint):
    """Project every column of an ``R x K`` weight matrix onto its ball."""
    if constraint.kind == WEIGHT_L1:
        return _l1_columns(_check_finite(W), constraint.radius)
    if constraint.kind == WEIGHT_L2:
        return _l2_columns(_check_finite(W), constraint.radius)
    raise InvalidInputError(f"constraint {constraint.kind!r} does not apply to weight columns")


def project_filters(St, support, radius=1.0):
    """Project spectra onto filters supported on ``support`` with l2 norm <= radius.

    ``St`` holds one spectrum (trailing shape ``support.padded``) or a stack
    of them.  Each is cropped in the spatial domain, rescaled into the ball
    and transformed back, so the result is the exact projection onto
    ``{fft(zero_pad(f)) : ||f||_2 <= radius}`` under the Parseval metric.
    """
    St = np.asarray(St)
    v = crop(inverse_fft(St, ndim=support.ndim), support)
    lead = v.shape[: v.ndim - support.ndim]
    flat = v.reshape((-1, support.M)).T
    flat = _l2_columns(flat, radius)
    v = flat.T.reshape(lead + support.extents)
    return fft(zero_pad(v, support), ndim=support.ndim)
