"""Corruption models and restoration tasks (reconstruct, denoise, inpaint)."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..core import psnr_values
from ..errors import InvalidInputError
from ..fftops import fft
from ..ocsc import OcscModel, ocsc_infer
from ..online import _codes_only, infer
from ..prox import ConstraintSet
from ..solvers import CodingProblem, niapg_solve

KINDS = ("reconstruct", "denoise", "inpaint")


@dataclass(frozen=True)
class TaskSpec:
    """``noise_variance`` applies to denoise, ``mask_fraction`` (share of
    pixels removed) to inpaint; ``seed`` drives the corruption."""

    kind: str
    noise_variance: float | None = None
    mask_fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown task kind {self.kind!r}")
        if (self.kind == "denoise") != (self.noise_variance is not None):
            raise InvalidInputError("noise_variance is required for, and only for, denoise")
        if (self.kind == "inpaint") != (self.mask_fraction is not None):
            raise InvalidInputError("mask_fraction is required for, and only for, inpaint")
        if self.noise_variance is not None and not self.noise_variance >= 0:
            raise InvalidInputError(f"noise variance must be nonnegative, got {self.noise_variance}")
        if self.mask_fraction is not None and not 0 <= self.mask_fraction <= 1:
            raise InvalidInputError(f"mask fraction must lie in [0, 1], got {self.mask_fraction}")


@dataclass
class Corruption:
    signal: np.ndarray
    mask: np.ndarray
    input_psnr: float


def _psnr(a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(psnr_values([a], [b])[0])


def corrupt(x, task, sample_index=0):
    """Seeded corruption of ``x``.

    Denoise adds ``N(0, variance)`` noise with an all-ones mask; inpaint
    zeroes exactly ``round(fraction * P)`` pixels chosen by a seeded
    permutation and returns the indicator of the kept pixels.
    ``sample_index`` decorrelates corruptions across a dataset.
    """
    if task.kind == "reconstruct":
        raise InvalidInputError("reconstruct tasks do not corrupt their input")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng([task.seed, sample_index])
    if task.kind == "denoise":
        y = x + np.sqrt(task.noise_variance) * rng.standard_normal(x.shape)
        mask = np.ones_like(x)
    else:
        n_drop = int(round(task.mask_fraction * x.size))
        mask = np.ones(x.size)
        mask[rng.permutation(x.size)[:n_drop]] = 0.0
        mask = mask.reshape(x.shape)
        y = x * mask
    return Corruption(y, mask, _psnr(y, x))


def masked_infer(model, y, mask, config=None):
    """Reconstruction of ``y`` from its pixels where ``mask`` is nonzero.

    The data term is ``0.5 ||mask . (y - reconstruction)||^2``; an all-ones
    mask gives exactly the unmasked inference.  For the shared-dictionary
    baseline the codes are solved by the same proximal-gradient engine with
    the K filters used directly.
    """
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if mask.shape != y.shape:
        raise InvalidInputError(f"mask {mask.shape} does not match signal {y.shape}")
    if not isinstance(model, OcscModel):
        return infer(model, y, mask=mask, config=config).reconstruction
    if np.all(mask == 1.0):
        return ocsc_infer(model, y)[1]
    K = model.config.K
    problem = CodingProblem(fft(y), model.dictionary, model.config.beta,
                            ConstraintSet("l2", 1.0), mask=mask)
    W = np.eye(K)
    res = niapg_solve(*_codes_only(problem, W), (np.zeros((K,) + y.shape),), config)
    return problem.reconstruction(W, res.x[0])


def run_task(model, signals, task, workers=1, config=None):
    """Apply ``task`` to every signal; returns per-signal rows.

    Inference on different signals is independent, so ``workers > 1`` runs
    it on a thread pool against a read-only snapshot of the model.
    """
    snapshot = model.snapshot()

    def one(item):
        i, x = item
        if task.kind == "reconstruct":
            y, mask, in_psnr = x, np.ones_like(x), float("nan")
        else:
            c = corrupt(x, task, i)
            y, mask, in_psnr = c.signal, c.mask, c.input_psnr
        recon = masked_infer(snapshot, y, mask, config)
        return {"index": i, "inputPsnr": in_psnr, "outputPsnr": _psnr(recon, x),
                "reconstruction": recon}

    items = list(enumerate(signals))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]
