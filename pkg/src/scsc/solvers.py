"""Optimization engines.

* :func:`admm_quadratic_ball_solve` -- per-frequency ADMM for the filter
  update (shared by the sample-dependent model with R filters and the
  shared-dictionary baseline with K filters).
* :func:`admm_code_solve` -- convex code update for a fixed dictionary.
* :func:`niapg_solve` -- nonmonotone accelerated proximal gradient for the
  nonconvex weights/codes subproblem, driven by :class:`CodingProblem`.
* :func:`admm_weights_codes_solve` -- ADMM on the same subproblem; kept
  only as a comparison baseline.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg

from .errors import ConvergenceError, InvalidInputError, NumericalError
from .fftops import fft, inverse_fft
from .prox import project_filters, project_weight_columns, soft_threshold
from .core import FilterBank

_TINY = np.finfo(float).tiny


def _fftn(a, axes):
    # unchecked transforms for inner loops whose inputs are finite by construction
    return scipy.fft.fftn(a, axes=axes)


def _ifftn(a, axes):
    return scipy.fft.ifftn(a, axes=axes)


@dataclass
class AdmmConfig:
    rho: float = 1.0
    max_iterations: int = 10
    primal_tolerance: float = 1e-4
    dual_tolerance: float = 1e-4
    adaptive_rho: bool = False
    residual_ratio: float = 10.0
    rho_factor: float = 2.0
    strict: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInputError(f"rho must be positive, got {self.rho}")
        if not (self.primal_tolerance > 0 and self.dual_tolerance > 0):
            raise InvalidInputError("ADMM tolerances must be positive")
        if self.max_iterations < 0:
            raise InvalidInputError("max_iterations must be nonnegative")


@dataclass
class NiApgConfig:
    step_size: float | None = None  # None: adaptive backtracking
    max_iterations: int = 200
    history_window: int = 5
    objective_tolerance: float = 1e-6
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if self.history_window < 1:
            raise InvalidInputError("history_window must be at least 1")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {self.step_size}")


@dataclass
class AdmmState:
    """Warm-start state of the filter ADMM: primal spectra, auxiliary
    (feasible) spectra and scaled dual variables, all ``(C, *S)``."""

    primal: np.ndarray
    auxiliary: np.ndarray
    dual: np.ndarray
    rho: float = 1.0

    @classmethod
    def from_filters(cls, spectra, rho=1.0):
        spectra = np.asarray(spectra, dtype=complex)
        return cls(spectra.copy(), spectra.copy(), np.zeros_like(spectra), rho)

    def copy(self):
        return AdmmState(self.primal.copy(), self.auxiliary.copy(), self.dual.copy(), self.rho)


@dataclass
class SolverTrace:
    """Per-iteration rows ``(iteration, objective, primal_res, dual_res, ...)``."""

    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def column(self, name):
        return [r[name] for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        if not self.rows:
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            writer.writeheader()
            writer.writerows(self.rows)


# ---------------------------------------------------------------------------
# per-frequency linear algebra


def _check_hermitian(H, tol=1e-8):
    if H.ndim != 3 or H.shape[1] != H.shape[2]:
        raise InvalidInputError(f"expected a stack of square matrices, got {H.shape}")
    scale = max(1.0, float(np.max(np.abs(H))) if H.size else 1.0)
    if np.max(np.abs(H - np.conj(np.swapaxes(H, 1, 2))), initial=0.0) > tol * scale:
        raise InvalidInputError("per-frequency matrices are not Hermitian")


def regularized_inverse(H, rho, pivot_tol=1e-12):
    """Batched ``(H_p + rho I)^{-1}`` through Cholesky, falling back to LDL.

    ``H`` is ``(P, C, C)`` Hermitian PSD.  The inverse is formed once per
    penalty value so each ADMM iteration costs one ``C x C`` mat-vec per
    frequency.
    """
    C = H.shape[1]
    A = H + rho * np.eye(C)
    try:
        L = np.linalg.cholesky(A)
        Linv = np.linalg.inv(L)
        return np.conj(np.swapaxes(Linv, 1, 2)) @ Linv
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(A)
    eye = np.eye(C)
    for p in range(A.shape[0]):
        lu, d, perm = scipy.linalg.ldl(A[p], hermitian=True)
        if np.min(np.abs(np.linalg.eigvalsh(d)), initial=np.inf) < pivot_tol:
            raise NumericalError(f"singular regularized system at frequency {p}")
        out[p] = scipy.linalg.solve(A[p], eye, assume_a="her")
    return out


def _rows(a):
    """``(C, *S)`` -> ``(P, C)`` with frequencies in row-major order."""
    return a.reshape(a.shape[0], -1).T


def _unrows(m, shape):
    return np.ascontiguousarray(m.T).reshape(shape)


def quadratic_objective(spectra, H, G):
    """``(1/2P) sum_p [b_p H_p b_p^H - 2 Re(b_p G_p)]`` with ``b_p = spectra(:, p)^T``."""
    b = _rows(np.asarray(spectra))
    P = b.shape[0]
    quad = np.einsum("pi,pij,pj->", b, H, np.conj(b)).real
    lin = np.einsum("pi,pi->", b, G).real
    return float(quad - 2.0 * lin) / (2 * P)


def admm_quadratic_ball_solve(H, G, support, state=None, config=None, trace=None):
    """Minimize :func:`quadratic_objective` over filters supported on ``support``
    with unit l2 norm bound.

    Parameters
    ----------
    H : (P, C, C) complex, Hermitian PSD per frequency
    G : (P, C) complex
    support : FilterSupport
    state : AdmmState or None
        Warm start; a cold start uses zero spectra.
    config : AdmmConfig

    Returns
    -------
    (FilterBank, AdmmState, SolverTrace)
        The bank holds the feasible (auxiliary) iterate.  Residuals in the
        trace are spatial-domain Frobenius norms.
    """
    config = config or AdmmConfig()
    H = np.asarray(H, dtype=complex)
    G = np.asarray(G, dtype=complex)
    P = support.P
    if H.shape[0] != P or G.shape != H.shape[:2]:
        raise InvalidInputError(f"statistics {H.shape}, {G.shape} do not match P={P}")
    _check_hermitian(H)
    C = H.shape[1]
    shape = (C,) + support.padded
    if state is None:
        zero = np.zeros(shape, dtype=complex)
        state = AdmmState(zero, zero.copy(), zero.copy(), config.rho)
    else:
        state = state.copy()
        if state.primal.shape != shape:
            raise InvalidInputError(f"warm start of shape {state.primal.shape}, expected {shape}")
    trace = trace if trace is not None else SolverTrace()
    rho = state.rho
    Ainv = regularized_inverse(H, rho)
    norm = math.sqrt(P)
    converged = config.max_iterations == 0
    for it in range(1, config.max_iterations + 1):
        target = _rows(state.auxiliary - state.dual)
        rhs = G + rho * np.conj(target)
        c = np.einsum("pij,pj->pi", Ainv, rhs)
        state.primal = _unrows(np.conj(c), shape)
        aux_old = state.auxiliary
        state.auxiliary = project_filters(state.primal + state.dual, support)
        diff = state.primal - state.auxiliary
        state.dual = state.dual + diff
        r = float(np.linalg.norm(diff)) / norm
        s = rho * float(np.linalg.norm(state.auxiliary - aux_old)) / norm
        trace.add(iteration=it, objective=quadratic_objective(state.auxiliary, H, G),
                  primal_res=r, dual_res=s, rho=rho)
        if not (np.isfinite(r) and np.isfinite(s)):
            raise NumericalError("non-finite residual in filter ADMM")
        if r < config.primal_tolerance and s < config.dual_tolerance:
            converged = True
            break
        if config.adaptive_rho:
            if r > config.residual_ratio * s:
                rho *= config.rho_factor
                state.dual = state.dual / config.rho_factor
                Ainv = regularized_inverse(H, rho)
            elif s > config.residual_ratio * r:
                rho /= config.rho_factor
                state.dual = state.dual * config.rho_factor
                Ainv = regularized_inverse(H, rho)
    state.rho = rho
    if config.strict and not converged:
        last = trace.rows[-1]
        raise ConvergenceError("filter ADMM did not converge",
                               {"primal": last["primal_res"], "dual": last["dual_res"]})
    return FilterBank(state.auxiliary.copy(), support), state, trace


def admm_code_solve(xt, Dt, beta, config=None, init=None, trace=None):
    """Convex code update: minimize ``(1/2P)||xt - sum_k Dt_k . Zt_k||^2 + beta ||Z||_1``.

    The quadratic step is a rank-one system per frequency, inverted with
    Sherman-Morrison.  Residuals are relative: ``||Z - U|| / max(||Z||, ||U||)``
    and ``||U - U_prev|| / ||dual||``.

    Returns the sparse spatial codes ``U`` with shape ``(K, *S)`` and the trace.
    Raises :class:`ConvergenceError` when ``config.strict`` and the budget
    runs out.
    """
    config = config or AdmmConfig(max_iterations=1000, primal_tolerance=1e-7,
                                  dual_tolerance=1e-7, adaptive_rho=True, strict=True)
    if not beta > 0:
        raise InvalidInputError(f"beta must be positive, got {beta}")
    xt = np.asarray(xt, dtype=complex)
    Dt = np.asarray(Dt, dtype=complex)
    if Dt.shape[1:] != xt.shape:
        raise InvalidInputError(f"dictionary spectra {Dt.shape} do not match signal {xt.shape}")
    nd = xt.ndim
    K = Dt.shape[0]
    d = _rows(Dt)
    dx = np.conj(d) * xt.reshape(-1)[:, None]
    dd = np.sum(np.abs(d) ** 2, axis=1)
    if init is None:
        U = np.zeros((K,) + xt.shape)
    else:
        U = np.array(init, dtype=float)
    Lam = np.zeros_like(U)
    rho = config.rho
    trace = trace if trace is not None else SolverTrace()
    converged = False
    r = s = 0.0
    for it in range(1, config.max_iterations + 1):
        w = _rows(fft(U - Lam, ndim=nd))
        rhs = dx + rho * w
        proj = np.einsum("pk,pk->p", d, rhs)
        zt = (rhs - np.conj(d) * (proj / (rho + dd))[:, None]) / rho
        Z = inverse_fft(_unrows(zt, U.shape), ndim=nd)
        U_old = U
        U = soft_threshold(Z + Lam, beta / rho)
        Lam = Lam + Z - U
        zn = max(float(np.linalg.norm(Z)), float(np.linalg.norm(U)))
        r = float(np.linalg.norm(Z - U)) / zn if zn > 0 else 0.0
        ln = rho * float(np.linalg.norm(Lam))
        s = rho * float(np.linalg.norm(U - U_old)) / ln if ln > 0 else 0.0
        trace.add(iteration=it, primal_res=r, dual_res=s, rho=rho)
        if not (np.isfinite(r) and np.isfinite(s)):
            raise NumericalError("non-finite residual in code ADMM")
        if r < config.primal_tolerance and s < config.dual_tolerance:
            converged = True
            break
        if config.adaptive_rho:
            if r > config.residual_ratio * s:
                rho *= config.rho_factor
                Lam = Lam / config.rho_factor
            elif s > config.residual_ratio * r:
                rho /= config.rho_factor
                Lam = Lam * config.rho_factor
    if config.strict and not converged:
        raise ConvergenceError("code ADMM did not converge", {"primal": r, "dual": s}, result=U)
    return U, trace


def code_objective(xt, Dt, Z, beta):
    """``(1/2P)||xt - sum_k Dt_k . fft(Z_k)||^2 + beta ||Z||_1``."""
    xt = np.asarray(xt)
    res = xt - np.einsum("k...,k...->...", Dt, fft(Z, ndim=xt.ndim))
    return float(np.vdot(res, res).real) / (2 * res.size) + beta * float(np.abs(Z).sum())


# ---------------------------------------------------------------------------
# niAPG


@dataclass
class NiApgResult:
    x: tuple
    objective: float
    history: list
    iterations: int
    converged: bool
    accepted_extrapolations: int = 0


def _comb(a, b, alpha):
    """Blockwise ``a + alpha * b``."""
    return tuple(ai + alpha * bi for ai, bi in zip(a, b))


def _sqdist(a, b):
    return math.fsum(float(np.vdot(ai - bi, ai - bi).real) for ai, bi in zip(a, b))


def niapg_solve(smooth, prox, nonsmooth, x0, config=None, feasible=None):
    """Nonmonotone inexact accelerated proximal gradient over a tuple of blocks.

    Parameters
    ----------
    smooth : callable
        ``smooth(x) -> (f, grads)``, with ``grads`` a tuple shaped like ``x``.
    prox : callable
        ``prox(x, step)``: the separable proximal map of ``step * g``.
    nonsmooth : callable
        ``nonsmooth(x) -> g(x)``.
    x0 : tuple of arrays
        Feasible starting point.
    feasible : callable, optional
        Maps an extrapolated point back into the domain of ``g`` before it
        is evaluated (used to keep constrained blocks feasible).

    The extrapolated point is kept when its objective does not exceed the
    maximum of the last ``history_window`` accepted objectives; otherwise
    the gradient step starts from the current iterate.  Step sizes come
    from halving backtracking with the sufficient-decrease test
    ``F(x+) <= F(v) - sigma/(2 step) ||x+ - v||^2``.
    """
    config = config or NiApgConfig()
    feasible = feasible or (lambda x: x)
    x = tuple(np.array(b, dtype=float) for b in x0)
    g_x = nonsmooth(x)
    if not np.isfinite(g_x):
        raise InvalidInputError("niAPG initial point is infeasible")
    f_x, grad_x = smooth(x)
    F_x = f_x + g_x
    if not np.isfinite(F_x):
        raise NumericalError("non-finite objective at the initial point")
    x_prev = x
    window = deque([F_x], maxlen=config.history_window)
    history = [F_x]
    best = (F_x, x)
    step = config.step_size or 1.0
    accepted = 0
    clean = 0
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        v, f_v, grad_v, F_v = x, f_x, grad_x, F_x
        mom = (it - 1) / (it + 2)
        if mom > 0:
            y = feasible(_comb(x, tuple(a - b for a, b in zip(x, x_prev)), mom))
            f_y, grad_y = smooth(y)
            F_y = f_y + nonsmooth(y)
            if F_y <= max(window):
                v, f_v, grad_v, F_v = y, f_y, grad_y, F_y
                accepted += 1
        if not all(np.isfinite(np.sum(g)) for g in grad_v):
            raise NumericalError("non-finite gradient in niAPG")
        if config.step_size is None and clean >= 3:
            step *= 2.0
            clean = 0
        for n_back in range(config.max_backtracks):
            x_new = prox(_comb(v, grad_v, -step), step)
            f_new, grad_new = smooth(x_new)
            F_new = f_new + nonsmooth(x_new)
            if F_new <= F_v - config.sufficient_decrease / (2 * step) * _sqdist(x_new, v):
                break
            step *= 0.5
        else:
            # no decrease possible at any tested step: v is numerically stationary
            x_new, f_new, grad_new, F_new = v, f_v, grad_v, F_v
        if not np.isfinite(F_new):
            raise NumericalError("non-finite objective in niAPG")
        clean = clean + 1 if n_back == 0 else 0
        x_prev, x = x, x_new
        f_x, grad_x, F_old, F_x = f_new, grad_new, F_x, F_new
        window.append(F_x)
        history.append(F_x)
        if F_x < best[0]:
            best = (F_x, x)
        if abs(F_old - F_x) <= config.objective_tolerance * max(abs(F_old), _TINY):
            converged = True
            break
    return NiApgResult(best[1], best[0], history, it, converged, accepted)


class CodingProblem:
    """Weights/codes subproblem for fixed base filters.

    ``F(W, Z) = f(W, Z) + I_W(W) + beta ||Z||_1`` with the smooth part
    ``f = (1/2P)||xt - sum_r Bt_r . fft(Z W^T(:, r))||^2``, or with a mask
    ``f = 0.5 ||mask . (x - reconstruction)||^2`` in the spatial domain.
    Gradients: with ``E`` the residual spectrum and
    ``g_r = ifft(conj(Bt_r) . E)``, ``grad_Z[k] = sum_r W[r, k] g_r`` and
    ``grad_W[r, k] = <g_r, Z_k>`` (see docs/gradients.md).
    """

    def __init__(self, xt, Bt, beta, constraint, mask=None):
        self.xt = np.asarray(xt, dtype=complex)
        self.Bt = np.asarray(Bt.spectral if isinstance(Bt, FilterBank) else Bt, dtype=complex)
        if self.Bt.shape[1:] != self.xt.shape:
            raise InvalidInputError(f"filter spectra {self.Bt.shape} do not match {self.xt.shape}")
        if not beta > 0:
            raise InvalidInputError(f"beta must be positive, got {beta}")
        self.beta = beta
        self.constraint = constraint
        self.ndim = self.xt.ndim
        self.P = self.xt.size
        self._axes = tuple(range(1, self.ndim + 1))
        self._signal_axes = tuple(range(self.ndim))
        self._Btc = np.conj(self.Bt)
        self.mask = None
        if mask is not None:
            mask = np.asarray(mask, dtype=float)
            if mask.shape != self.xt.shape:
                raise InvalidInputError(f"mask {mask.shape} does not match signal {self.xt.shape}")
            if not np.all(mask == 1.0):
                self.mask = mask
                self.x = inverse_fft(self.xt, ndim=self.ndim)

    @property
    def R(self):
        return self.Bt.shape[0]

    def _combined(self, W, Z):
        return (W @ Z.reshape(Z.shape[0], -1)).reshape((self.R,) + self.xt.shape)

    def _recon_spectrum(self, W, Z):
        Yt = _fftn(self._combined(W, Z), self._axes)
        return np.einsum("r...,r...->...", self.Bt, Yt)

    def smooth(self, x):
        W, Z = x
        Rt = self._recon_spectrum(W, Z)
        if self.mask is None:
            Et = Rt - self.xt
            f = float(np.vdot(Et, Et).real) / (2 * self.P)
        else:
            e = self.mask * (_ifftn(Rt, self._signal_axes).real - self.x)
            f = 0.5 * float(np.vdot(e, e).real)
            Et = _fftn(self.mask * e, self._signal_axes)
        g = _ifftn(self._Btc * Et, self._axes).real
        gZ = (W.T @ g.reshape(self.R, -1)).reshape(Z.shape)
        gW = g.reshape(self.R, -1) @ Z.reshape(Z.shape[0], -1).T
        return f, (gW, gZ)

    def nonsmooth(self, x):
        W, Z = x
        if not self.constraint.contains(W):
            return math.inf
        return self.beta * float(np.abs(Z).sum())

    def prox(self, x, step):
        W, Z = x
        return project_weight_columns(W, self.constraint), soft_threshold(Z, step * self.beta)

    def feasible(self, x):
        W, Z = x
        return project_weight_columns(W, self.constraint), Z

    def objective(self, W, Z):
        return self.smooth((W, Z))[0] + self.nonsmooth((W, Z))

    def reconstruction(self, W, Z):
        return inverse_fft(self._recon_spectrum(W, Z), ndim=self.ndim)

    def solve(self, W0, Z0, config=None):
        W0 = np.asarray(W0, dtype=float)
        Z0 = np.asarray(Z0, dtype=float)
        if W0.shape[0] != self.R or Z0.shape != (W0.shape[1],) + self.xt.shape:
            raise InvalidInputError(f"initial weights {W0.shape} / codes {Z0.shape} do not fit")
        if not self.constraint.contains(W0):
            raise InvalidInputError("initial weights violate their constraint")
        return niapg_solve(self.smooth, self.prox, self.nonsmooth, (W0, Z0), config,
                           feasible=self.feasible)


# ---------------------------------------------------------------------------
# ADMM on the weights/codes subproblem (comparison baseline)


def admm_weights_codes_solve(problem, W0, Z0, rho=1.0, max_iterations=200):
    """Split ``Yt = fft(Z W^T)`` and run ADMM on the weights/codes subproblem.

    Each (W, Z) step is one proximal-gradient pass per block on the
    bilinear penalty, which is all the nonconvex coupling allows in closed
    form.  Returns ``(W, Z, trace)``; the trace records the objective
    ``F(W, Z)`` and the constraint violation ``||Yt - fft(Z W^T)||_F^2``.
    """
    if problem.mask is not None:
        raise InvalidInputError("the ADMM baseline supports unmasked problems only")
    nd = problem.ndim
    W = np.array(W0, dtype=float)
    Z = np.array(Z0, dtype=float)
    Bt = problem.Bt
    b = _rows(Bt)
    bx = np.conj(b) * problem.xt.reshape(-1)[:, None]
    bb = np.sum(np.abs(b) ** 2, axis=1)
    ZW = np.tensordot(W, Z, axes=(1, 0))
    Lam = np.zeros_like(ZW)
    trace = SolverTrace()
    for it in range(1, max_iterations + 1):
        # Y step: rank-one system per frequency
        a = _rows(fft(ZW - Lam, ndim=nd))
        rhs = bx + rho * a
        proj = np.einsum("pr,pr->p", b, rhs)
        yt = (rhs - np.conj(b) * (proj / (rho + bb))[:, None]) / rho
        Yt = _unrows(yt, ZW.shape)
        T = inverse_fft(Yt, ndim=nd) + Lam
        # Z step on (rho/2)||T - Z W^T||^2 + beta ||Z||_1
        Lz = rho * max(np.linalg.norm(W, 2) ** 2, _TINY)
        gZ = rho * np.tensordot(W.T, np.tensordot(W, Z, axes=(1, 0)) - T, axes=(1, 0))
        Z = soft_threshold(Z - gZ / Lz, problem.beta / Lz)
        # W step on the same penalty
        Zf = Z.reshape(Z.shape[0], -1)
        Lw = rho * max(np.linalg.norm(Zf, 2) ** 2, _TINY)
        gW = rho * ((W @ Zf) - T.reshape(T.shape[0], -1)) @ Zf.T
        W = project_weight_columns(W - gW / Lw, problem.constraint)
        ZW = np.tensordot(W, Z, axes=(1, 0))
        Lam = Lam + inverse_fft(Yt, ndim=nd) - ZW
        diff = Yt - fft(ZW, ndim=nd)
        trace.add(iteration=it, objective=problem.objective(W, Z),
                  violation=float(np.vdot(diff, diff).real))
    return W, Z, trace
