"""Online learning of base filters with sample-dependent combination weights."""

from __future__ import annotations

import copy
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import FilterBank, aggregate_codes, psnr_values
from .errors import ConvergenceError, InvalidInputError, ScscError
from .fftops import FilterSupport, fft
from .prox import ConstraintSet, project_weight_columns
from .solvers import (AdmmConfig, AdmmState, CodingProblem, NiApgConfig,
                      admm_quadratic_ball_solve, niapg_solve)

TRACE_COLUMNS = ("t", "epoch", "sampleId", "subObj", "dictObj", "primalRes", "dualRes", "millis")


@dataclass
class HistoryStats:
    """Running per-frequency moments of the aggregated code spectra.

    ``H[p] = mean_i y_ip y_ip^H`` (``C x C``) and ``G[p] = mean_i conj(x_ip) y_ip``
    where ``y_ip`` is the length-C vector of code spectra at frequency p.
    """

    H: np.ndarray
    G: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, P, C):
        return cls(np.zeros((P, C, C), dtype=complex), np.zeros((P, C), dtype=complex), 0)

    @property
    def P(self):
        return self.H.shape[0]

    @property
    def size(self):
        return self.H.shape[1]

    @property
    def nbytes(self):
        return self.H.nbytes + self.G.nbytes

    def copy(self):
        return HistoryStats(self.H.copy(), self.G.copy(), self.t)


def update_stats(stats, Yt, xt):
    """One incremental step ``H_t = (t-1)/t H_{t-1} + (1/t) y y^H`` (same for ``G``)."""
    Yt = np.asarray(Yt)
    xt = np.asarray(xt)
    if Yt.shape[0] != stats.size or Yt[0].size != stats.P or xt.size != stats.P:
        raise InvalidInputError(
            f"spectra {Yt.shape} / {xt.shape} do not match statistics "
            f"(C={stats.size}, P={stats.P})")
    y = Yt.reshape(stats.size, -1).T
    t = stats.t + 1
    keep = (t - 1) / t
    H = keep * stats.H + (y[:, :, None] * np.conj(y)[:, None, :]) / t
    G = keep * stats.G + (np.conj(xt.reshape(-1))[:, None] * y) / t
    return HistoryStats(H, G, t)


@dataclass
class ScscConfig:
    R: int
    K: int
    beta: float = 1.0
    constraint: str = "l2"
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    niapg: NiApgConfig = field(default_factory=NiApgConfig)
    cache_warm_starts: bool = True
    shared_weights: bool = False

    def __post_init__(self):
        if self.R < 1 or self.K < 1:
            raise InvalidInputError("R and K must be positive")
        if not self.beta > 0:
            raise InvalidInputError(f"beta must be positive, got {self.beta}")
        if self.constraint not in ("l1", "l2"):
            raise InvalidInputError(f"weight constraint must be 'l1' or 'l2', got {self.constraint!r}")

    @property
    def weight_set(self):
        return ConstraintSet.for_weights(self.constraint, self.R)


@dataclass
class StepReport:
    t: int
    epoch: int
    sample_id: object
    sub_objective: float
    dict_objective: float
    primal_res: float
    dual_res: float
    millis: float
    niapg_iterations: int
    psnr: float

    def trace_row(self):
        return {"t": self.t, "epoch": self.epoch, "sampleId": self.sample_id,
                "subObj": self.sub_objective, "dictObj": self.dict_objective,
                "primalRes": self.primal_res, "dualRes": self.dual_res, "millis": self.millis}


class Inference(NamedTuple):
    weights: np.ndarray
    codes: np.ndarray
    reconstruction: np.ndarray
    objective: float
    iterations: int


@dataclass
class MemoryFootprint:
    """Bytes held by a model: second moments, cross terms and filter spectra."""

    second_moment: int
    cross_term: int
    filters: int

    @property
    def stats(self):
        return self.second_moment + self.cross_term

    @property
    def total(self):
        return self.stats + self.filters


@dataclass
class ScscModel:
    bank: FilterBank
    stats: HistoryStats
    admm_state: AdmmState
    config: ScscConfig
    seed: int = 0
    warm_starts: dict = field(default_factory=dict, repr=False)
    shared_W: np.ndarray | None = None

    @property
    def support(self):
        return self.bank.support

    @property
    def t(self):
        return self.stats.t

    def snapshot(self):
        """Independent copy, safe to use for inference while training continues."""
        return copy.deepcopy(self)

    def initial_weights(self, sample_id=None):
        key = [self.seed, 1] if sample_id is None else [self.seed, 2, _int_key(sample_id)]
        rng = np.random.default_rng(key)
        W = rng.standard_normal((self.config.R, self.config.K))
        return project_weight_columns(W, self.config.weight_set)


def _int_key(sample_id):
    if isinstance(sample_id, (int, np.integer)) and sample_id >= 0:
        return int(sample_id)
    return int.from_bytes(str(sample_id).encode()[:16].ljust(16, b"\0"), "little")


def init_model(support, R, K, constraint="l2", seed=0, beta=1.0, allow_r_gt_k=False, **options):
    """Random unit-norm base filters and zero statistics.

    ``options`` are forwarded to :class:`ScscConfig` (``admm``, ``niapg``,
    ``cache_warm_starts``, ``shared_weights``).
    """
    if not isinstance(support, FilterSupport):
        raise InvalidInputError("support must be a FilterSupport")
    if R > K:
        if not allow_r_gt_k:
            raise InvalidInputError(f"R={R} exceeds K={K}; pass allow_r_gt_k=True to override")
        warnings.warn(f"R={R} exceeds K={K}", RuntimeWarning, stacklevel=2)
    config = ScscConfig(R=R, K=K, beta=beta, constraint=constraint, **options)
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((R,) + support.extents)
    B /= np.linalg.norm(B.reshape(R, -1), axis=1).reshape((R,) + (1,) * support.ndim)
    bank = FilterBank.from_spatial(B, support)
    state = AdmmState.from_filters(bank.spectral, config.admm.rho)
    model = ScscModel(bank, HistoryStats.zeros(support.P, R), state, config, seed)
    if config.shared_weights:
        model.shared_W = model.initial_weights()
    return model


def _annotate(err, sample_id):
    msg = f"sample {sample_id!r}: {err}"
    if isinstance(err, ConvergenceError):
        return ConvergenceError(msg, err.residuals, err.result)
    return type(err)(msg)


def _check_signal(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != model.support.padded:
        raise InvalidInputError(f"signal shape {x.shape} does not match model {model.support.padded}")
    return x


def _codes_only(problem, W):
    """Single-block (Z) view of a coding problem with the weights frozen."""
    def smooth(z):
        f, (_, gZ) = problem.smooth((W, z[0]))
        return f, (gZ,)
    return (smooth,
            lambda z, step: (problem.prox((W, z[0]), step)[1],),
            lambda z: problem.nonsmooth((W, z[0])))


def _weights_only(problem, Z):
    def smooth(w):
        f, (gW, _) = problem.smooth((w[0], Z))
        return f, (gW,)
    return (smooth,
            lambda w, step: (problem.prox((w[0], Z), step)[0],),
            lambda w: problem.nonsmooth((w[0], Z)))


def _solve_shared(model, problem, Z0):
    """Shared-weights ablation: codes for this sample, then a short
    proximal-gradient pass on the shared weights."""
    codes = niapg_solve(*_codes_only(problem, model.shared_W), (Z0,), model.config.niapg)
    Z = codes.x[0]
    weights = niapg_solve(*_weights_only(problem, Z), (model.shared_W,),
                          NiApgConfig(max_iterations=5))
    model.shared_W = weights.x[0]
    return model.shared_W, Z, weights.objective, codes.iterations


def train_step(model, x, sample_id=None, epoch=0):
    """One pass of the online loop on sample ``x`` (updates ``model`` in place).

    Returns ``(model, W, Z, report)``.
    """
    start = time.perf_counter()
    x = _check_signal(model, x)
    cfg = model.config
    try:
        xt = fft(x)
        problem = CodingProblem(xt, model.bank, cfg.beta, cfg.weight_set)
        cached = model.warm_starts.get(sample_id) if sample_id is not None else None
        if cached is not None:
            W0, Z0 = cached
        else:
            W0 = model.initial_weights(sample_id)
            Z0 = np.zeros((cfg.K,) + x.shape)
        if cfg.shared_weights:
            W, Z, sub_obj, iters = _solve_shared(model, problem, Z0)
        else:
            res = problem.solve(W0, Z0, cfg.niapg)
            (W, Z), sub_obj, iters = res.x, res.objective, res.iterations
        recon = problem.reconstruction(W, Z)
        Yt = aggregate_codes(Z, W)
        model.stats = update_stats(model.stats, Yt, xt)
        model.bank, model.admm_state, trace = admm_quadratic_ball_solve(
            model.stats.H, model.stats.G, model.support, model.admm_state, cfg.admm)
    except ScscError as err:
        raise _annotate(err, sample_id) from err
    if cfg.cache_warm_starts and sample_id is not None:
        model.warm_starts[sample_id] = (W.copy(), Z.copy())
    last = trace.rows[-1] if trace.rows else {"objective": float("nan"),
                                              "primal_res": 0.0, "dual_res": 0.0}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        quality = float(psnr_values([recon], [x])[0])
    report = StepReport(model.t, epoch, sample_id, sub_obj, last["objective"],
                        last["primal_res"], last["dual_res"],
                        (time.perf_counter() - start) * 1e3, iters, quality)
    return model, W, Z, report


def train(model, dataset, epochs=1, shuffle_seed=0, callback=None):
    """Run the online loop over ``dataset`` for ``epochs`` reshuffled passes.

    Sample ids are dataset positions.  ``callback(epoch, model, reports)``
    runs after every epoch.  Returns ``(model, reports)``.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("training needs a non-empty dataset")
    rng = np.random.default_rng(shuffle_seed)
    reports = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_reports = []
        for idx in order:
            model, _, _, rep = train_step(model, dataset[idx], int(idx), epoch)
            epoch_reports.append(rep)
        reports.extend(epoch_reports)
        if callback is not None:
            callback(epoch, model, epoch_reports)
    return model, reports


def infer(model, x, mask=None, warm_start=None, config=None):
    """Codes and weights for ``x`` with the base filters held fixed.

    ``mask`` (same shape as ``x``) weights the data-fidelity term; zero
    entries mark missing pixels.
    """
    x = _check_signal(model, x)
    cfg = model.config
    problem = CodingProblem(fft(x), model.bank, cfg.beta, cfg.weight_set, mask=mask)
    if warm_start is not None:
        W0, Z0 = warm_start
    else:
        W0 = model.shared_W if model.shared_W is not None else model.initial_weights()
        Z0 = np.zeros((cfg.K,) + x.shape)
    if cfg.shared_weights:
        W = np.array(W0, dtype=float)
        res = niapg_solve(*_codes_only(problem, W), (Z0,), config or cfg.niapg)
        Z = res.x[0]
    else:
        res = problem.solve(W0, Z0, config or cfg.niapg)
        W, Z = res.x
    return Inference(W, Z, problem.reconstruction(W, Z), res.objective, res.iterations)


def memory_footprint(model):
    """Measured bytes of the model's statistics and filter spectra."""
    return MemoryFootprint(model.stats.H.nbytes, model.stats.G.nbytes, model.bank.spectral.nbytes)
