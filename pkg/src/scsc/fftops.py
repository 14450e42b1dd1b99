"""n-D transforms, padding/cropping and circular convolution.

Conventions used throughout the package:

* The forward DFT is unnormalized and the inverse carries the ``1/P``
  factor, so ``sum(abs(fft(a))**2) / P == sum(a**2)``.
* Arrays holding several filters/codes stack them on the *leading* axis;
  transforms always act on the trailing ``ndim`` (spatial) axes.
* Filters occupy the leading corner of the padded grid; convolution is
  circular.
* The per-frequency index ``p`` is the row-major (C order) flattening of
  the padded grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np
import scipy.fft

from .errors import InvalidInputError, NumericalError

IMAG_RESIDUE_TOL = 1e-8


@dataclass(frozen=True)
class FilterSupport:
    """Filter extents ``M`` and padded signal extents ``P`` per axis."""

    extents: tuple
    padded: tuple

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        pad = tuple(int(p) for p in self.padded)
        if len(ext) != len(pad) or not ext:
            raise InvalidInputError(
                f"filter extents {ext} and padded extents {pad} differ in rank")
        if any(e < 1 for e in ext) or any(e > p for e, p in zip(ext, pad)):
            raise InvalidInputError(
                f"filter extents {ext} must be positive and fit inside {pad}")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "padded", pad)

    @property
    def ndim(self):
        return len(self.padded)

    @property
    def M(self):
        return prod(self.extents)

    @property
    def P(self):
        return prod(self.padded)


def _axes(a, ndim):
    if ndim is None:
        ndim = a.ndim
    if ndim > a.ndim or ndim < 1:
        raise InvalidInputError(f"cannot transform {ndim} axes of a {a.ndim}-D array")
    return tuple(range(a.ndim - ndim, a.ndim))


def fft(a, ndim=None):
    """Unnormalized forward DFT over the trailing ``ndim`` axes (all by default)."""
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("fft input contains non-finite values")
    return scipy.fft.fftn(a, axes=_axes(a, ndim))


def inverse_fft(s, ndim=None, real=True):
    """Inverse of :func:`fft`.

    With ``real=True`` the result is expected to be real; an imaginary part
    larger than ``1e-8 * ||s||`` means the spectrum did not come from real
    data and raises :class:`NumericalError`.
    """
    s = np.asarray(s)
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("inverse_fft input contains non-finite values")
    out = scipy.fft.ifftn(s, axes=_axes(s, ndim))
    if not real:
        return out
    if np.iscomplexobj(out):
        residue = np.linalg.norm(out.imag)
        if residue > IMAG_RESIDUE_TOL * max(np.linalg.norm(s), np.finfo(float).tiny):
            raise NumericalError(
                f"imaginary residue {residue:.3e} after inverse transform of real data")
        out = out.real
    return np.ascontiguousarray(out)


def _check_trailing(a, shape, what):
    if a.ndim < len(shape) or tuple(a.shape[a.ndim - len(shape):]) != tuple(shape):
        raise InvalidInputError(f"{what}: trailing shape {a.shape} does not match {shape}")


def zero_pad(a, support):
    """Place filters (trailing shape ``support.extents``) in the corner of a zero grid."""
    a = np.asarray(a)
    _check_trailing(a, support.extents, "zero_pad")
    lead = a.shape[: a.ndim - support.ndim]
    out = np.zeros(lead + support.padded, dtype=a.dtype)
    out[(Ellipsis,) + tuple(slice(0, e) for e in support.extents)] = a
    return out


def crop(a, support):
    """Leading-corner sub-array of trailing shape ``support.extents``."""
    a = np.asarray(a)
    _check_trailing(a, support.padded, "crop")
    return a[(Ellipsis,) + tuple(slice(0, e) for e in support.extents)].copy()


def circular_convolve(a, b):
    """Circular convolution of equally shaped real arrays via the DFT."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"circular_convolve: shapes {a.shape} and {b.shape} differ")
    return inverse_fft(fft(a) * fft(b))


def hadamard(s1, s2):
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    if s1.shape != s2.shape:
        raise InvalidInputError(f"hadamard: shapes {s1.shape} and {s2.shape} differ")
    return s1 * s2
