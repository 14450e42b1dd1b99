"""Shared-dictionary online baseline: K filters with K x K history statistics.

The code and filter updates reuse the generic engines in :mod:`scsc.solvers`
instantiated at size K, so memory/time comparisons against the
sample-dependent model measure the same code paths.
"""

from __future__ import annotations

import copy
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import FilterBank, psnr_values
from .errors import InvalidInputError, ScscError
from .fftops import FilterSupport, fft, inverse_fft
from .online import HistoryStats, MemoryFootprint, _annotate, update_stats
from .solvers import (AdmmConfig, AdmmState, admm_code_solve, admm_quadratic_ball_solve,
                      code_objective)


def default_code_config():
    # training tolerates an inexact code solve; admm_code_solve's own default is strict
    return AdmmConfig(max_iterations=300, primal_tolerance=1e-4, dual_tolerance=1e-4,
                      adaptive_rho=True, strict=False)


@dataclass
class OcscConfig:
    K: int
    beta: float = 1.0
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    code: AdmmConfig = field(default_factory=default_code_config)

    def __post_init__(self):
        if self.K < 1:
            raise InvalidInputError("K must be positive")
        if not self.beta > 0:
            raise InvalidInputError(f"beta must be positive, got {self.beta}")


@dataclass
class OcscModel:
    dictionary: FilterBank
    stats: HistoryStats
    admm_state: AdmmState
    config: OcscConfig
    seed: int = 0

    @property
    def support(self):
        return self.dictionary.support

    @property
    def t(self):
        return self.stats.t

    def snapshot(self):
        return copy.deepcopy(self)


@dataclass
class OcscReport:
    t: int
    epoch: int
    sample_id: object
    sub_objective: float
    dict_objective: float
    primal_res: float
    dual_res: float
    millis: float
    psnr: float

    def trace_row(self):
        return {"t": self.t, "epoch": self.epoch, "sampleId": self.sample_id,
                "subObj": self.sub_objective, "dictObj": self.dict_objective,
                "primalRes": self.primal_res, "dualRes": self.dual_res, "millis": self.millis}


def init_ocsc(support, K, seed=0, beta=1.0, **options):
    if not isinstance(support, FilterSupport):
        raise InvalidInputError("support must be a FilterSupport")
    config = OcscConfig(K=K, beta=beta, **options)
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((K,) + support.extents)
    D /= np.linalg.norm(D.reshape(K, -1), axis=1).reshape((K,) + (1,) * support.ndim)
    bank = FilterBank.from_spatial(D, support)
    state = AdmmState.from_filters(bank.spectral, config.admm.rho)
    return OcscModel(bank, HistoryStats.zeros(support.P, K), state, config, seed)


def ocsc_train_step(model, x, sample_id=None, epoch=0):
    """Code update, statistics update and dictionary update for one sample.

    Returns ``(model, Z, report)``; ``model`` is updated in place.
    """
    start = time.perf_counter()
    x = np.asarray(x, dtype=float)
    if x.shape != model.support.padded:
        raise InvalidInputError(f"signal shape {x.shape} does not match model {model.support.padded}")
    cfg = model.config
    try:
        xt = fft(x)
        Dt = model.dictionary.spectral
        Z, _ = admm_code_solve(xt, Dt, cfg.beta, cfg.code)
        Zt = fft(Z, ndim=x.ndim)
        sub_obj = code_objective(xt, Dt, Z, cfg.beta)
        recon = inverse_fft(np.einsum("k...,k...->...", Dt, Zt), ndim=x.ndim)
        model.stats = update_stats(model.stats, Zt, xt)
        model.dictionary, model.admm_state, trace = admm_quadratic_ball_solve(
            model.stats.H, model.stats.G, model.support, model.admm_state, cfg.admm)
    except ScscError as err:
        raise _annotate(err, sample_id) from err
    last = trace.rows[-1] if trace.rows else {"objective": float("nan"),
                                              "primal_res": 0.0, "dual_res": 0.0}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        quality = float(psnr_values([recon], [x])[0])
    report = OcscReport(model.t, epoch, sample_id, sub_obj, last["objective"],
                        last["primal_res"], last["dual_res"],
                        (time.perf_counter() - start) * 1e3, quality)
    return model, Z, report


def ocsc_train(model, dataset, epochs=1, shuffle_seed=0, callback=None):
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("training needs a non-empty dataset")
    rng = np.random.default_rng(shuffle_seed)
    reports = []
    for epoch in range(epochs):
        epoch_reports = [ocsc_train_step(model, dataset[i], int(i), epoch)[2]
                         for i in rng.permutation(len(dataset))]
        reports.extend(epoch_reports)
        if callback is not None:
            callback(epoch, model, epoch_reports)
    return model, reports


def ocsc_infer(model, x, config=None):
    """Codes for ``x`` under the fixed dictionary and the reconstruction ``sum_k D_k * Z_k``."""
    x = np.asarray(x, dtype=float)
    if x.shape != model.support.padded:
        raise InvalidInputError(f"signal shape {x.shape} does not match model {model.support.padded}")
    Dt = model.dictionary.spectral
    Z, _ = admm_code_solve(fft(x), Dt, model.config.beta, config or model.config.code)
    recon = inverse_fft(np.einsum("k...,k...->...", Dt, fft(Z, ndim=x.ndim)), ndim=x.ndim)
    return Z, recon


def ocsc_memory_footprint(model):
    return MemoryFootprint(model.stats.H.nbytes, model.stats.G.nbytes,
                           model.dictionary.spectral.nbytes)
