"""Penalised maximum likelihood fitting with automatic smoothness selection.

Three model kinds share one optimisation path:

- ``parametric``: per-state parametric densities, no penalties.
- ``spline_unconstrained``: spline densities with per-state curvature
  penalties, smoothing weights selected by an outer fixed-point loop.
- ``spline_unimodal``: additionally a softplus unimodality penalty per
  state, with coefficient-mode indices found by a pruned grid search seeded
  from the unconstrained fit.

The objective and its derivatives come from :mod:`splinehmm.autodiff`;
everything here is numpy-facing orchestration.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from . import autodiff
from .constraints import unimodality_penalty, unimodality_violation
from .emissions import (
    FAMILY_NPARAMS,
    PARAMETRIC_FAMILIES,
    ParametricEmission,
    SplineEmission,
    _check_finite,
    family_moments,
    init_from_target,
    mode_count,
)
from .hmm import HmmModel, TransitionModel, log_likelihood
from .splines import eval_basis, make_basis, second_diff_penalty

MODEL_KINDS = ("parametric", "spline_unconstrained", "spline_unimodal")

_BSB_FLOOR = 1e-12  # below this the state is effectively unpenalisable


class FitError(RuntimeError):
    """Raised when every optimisation start failed; carries per-start info."""

    def __init__(self, message: str, start_table=None):
        super().__init__(message)
        self.start_table = start_table or []


@dataclass
class FitSpec:
    """Everything needed to reproduce one fit deterministically."""

    n_states: int
    model_kind: str = "spline_unconstrained"
    families: str | tuple[str, ...] = "normal"
    n_basis: int = 40
    basis_range: tuple[float, float] | None = None
    lambda_init: float | tuple[float, ...] = 100.0
    lambda_fixed: bool = False
    lambda_bounds: tuple[float, float] = (1e-4, 1e7)
    kappa: float = 1e4
    rho: float = 20.0
    mode_grid: str | tuple = "auto"  # "auto" | "full" | per-state entries
    mode_half_width: int = 1
    mode_ratio_threshold: float = 0.5
    n_starts: int = 1
    init_targets: tuple[tuple[float, float], ...] | None = None
    init_params: tuple[tuple[float, ...], ...] | None = None
    jitter_mean_scale: float = 0.5
    jitter_sd_scale: float = 0.3
    gamma_init: tuple | None = None
    delta: str | tuple[float, ...] = "stationary"
    max_inner_iter: int = 500
    grad_tol: float = 1e-6
    outer_max_iter: int = 50
    outer_tol: float = 1e-3
    uni_tol: float = 1e-6
    seed: int = 0


@dataclass
class FitResult:
    model: HmmModel
    spec: FitSpec
    theta: np.ndarray
    loglik: float
    penalized_loglik: float
    smoothness_penalty: float
    unimodality_penalty: float  # exact hinge violation (0 when feasible)
    unimodality_penalty_smooth: float  # softplus term entering the objective
    converged: bool
    lam: np.ndarray | None = None
    modes: tuple | None = None
    n_outer_iterations: int = 0
    start_table: list = field(default_factory=list)
    outer_trace: list = field(default_factory=list)
    mode_search_table: list = field(default_factory=list)
    n_candidate_fits: int = 0
    per_state: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)

    @property
    def tpm(self) -> np.ndarray:
        return self.model.transition.tpm

    @property
    def delta(self) -> np.ndarray:
        return self.model.transition.delta


@dataclass
class InnerFit:
    theta: np.ndarray
    value: float
    converged: bool
    n_iter: int
    grad_inf_norm: float


def normalize_spec(spec: FitSpec) -> FitSpec:
    if spec.model_kind not in MODEL_KINDS:
        raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {spec.model_kind!r}")
    if spec.n_states < 1:
        raise ValueError("n_states must be at least 1")
    if spec.n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    fams = spec.families
    if isinstance(fams, str):
        fams = (fams,) * spec.n_states
    fams = tuple(fams)
    if len(fams) != spec.n_states:
        raise ValueError("families must have one entry per state")
    for f in fams:
        if f not in PARAMETRIC_FAMILIES:
            raise ValueError(f"unknown family {f!r}")
    if spec.model_kind != "parametric" and spec.n_basis < 4:
        raise ValueError("spline models need at least 4 basis functions")
    if spec.rho <= 0 or spec.kappa < 0:
        raise ValueError("rho must be positive and kappa nonnegative")
    lo, hi = spec.lambda_bounds
    if not 0 < lo < hi:
        raise ValueError("lambda_bounds must satisfy 0 < lo < hi")
    lam0 = spec.lambda_init
    if np.isscalar(lam0):
        lam0 = (float(lam0),) * spec.n_states
    lam0 = tuple(float(v) for v in lam0)
    if len(lam0) != spec.n_states or min(lam0) <= 0:
        raise ValueError("lambda_init must be positive, one value or one per state")
    delta = spec.delta
    if not isinstance(delta, str):
        delta = tuple(float(v) for v in delta)
        if len(delta) != spec.n_states or min(delta) < 0 or abs(sum(delta) - 1) > 1e-8:
            raise ValueError("fixed delta must be a probability vector of length n_states")
    elif delta != "stationary":
        raise ValueError(f"delta must be 'stationary' or a vector, got {delta!r}")
    if spec.init_targets is not None:
        tg = tuple((float(m), float(s)) for m, s in spec.init_targets)
        if len(tg) != spec.n_states:
            raise ValueError("init_targets must have one (mean, sd) per state")
        spec = replace(spec, init_targets=tg)
    if spec.init_params is not None:
        ip = tuple(tuple(float(v) for v in p) for p in spec.init_params)
        if len(ip) != spec.n_states:
            raise ValueError("init_params must have one tuple per state")
        spec = replace(spec, init_params=ip)
    return replace(spec, families=fams, lambda_init=lam0, delta=delta)


# ---------------------------------------------------------------------------
# parameter transforms


def params_to_unconstrained(family: str, params) -> np.ndarray:
    p = [float(v) for v in params]
    if family == "normal":
        return np.array([p[0], np.log(p[1])])
    if family == "gamma":
        return np.array([np.log(p[0]), np.log(p[1])])
    if family == "skew_normal":
        return np.array([p[0], np.log(p[1]), p[2]])
    if family == "student_t":
        return np.array([p[0], np.log(p[1]), np.log(p[2])])
    raise ValueError(f"unknown family {family!r}")


def params_from_unconstrained(family: str, vec) -> tuple[float, ...]:
    v = [float(u) for u in vec]
    if family == "normal":
        return (v[0], np.exp(v[1]))
    if family == "gamma":
        return (np.exp(v[0]), np.exp(v[1]))
    if family == "skew_normal":
        return (v[0], np.exp(v[1]), v[2])
    if family == "student_t":
        return (v[0], np.exp(v[1]), np.exp(v[2]))
    raise ValueError(f"unknown family {family!r}")


def params_from_moments(family: str, mean: float, sd: float) -> tuple[float, ...]:
    if family in ("normal", "gamma"):
        return (float(mean), float(sd))
    raise ValueError(f"{family} needs explicit init_params, not moment targets")


# ---------------------------------------------------------------------------
# problem context


class FitProblem:
    """Data, basis, layout, penalty state, and jitted objective callables."""

    def __init__(self, spec: FitSpec, x: np.ndarray, basis=None):
        self.spec = spec = normalize_spec(spec)
        self.x = _check_finite(x)
        n = spec.n_states
        self.kind = spec.model_kind
        self.n_eta = n * (n - 1)
        self.delta_is_fixed = not isinstance(spec.delta, str)
        self.delta_arg = (
            np.asarray(spec.delta, dtype=float) if self.delta_is_fixed else np.zeros(n)
        )

        if self.kind == "parametric":
            self.basis = None
            widths = [FAMILY_NPARAMS[f] for f in spec.families]
            self._offsets = np.concatenate([[0], np.cumsum(widths)]) + self.n_eta
            self.dim = self.n_eta + int(sum(widths))
            fns = autodiff.make_objective("parametric", spec.families, n, None, self.delta_is_fixed)
        else:
            if basis is None:
                rng = spec.basis_range or (float(np.min(self.x)), float(np.max(self.x)))
                basis = make_basis(rng, spec.n_basis)
            self.basis = basis
            self.phi = eval_basis(basis, self.x)
            self.penalty = second_diff_penalty(spec.n_basis)
            self.S = self.penalty.S
            self.S_free = self.S[:-1, :-1]
            self.log_nu_ratio = np.log(basis.nu / basis.nu[-1])
            self.dim = self.n_eta + n * (spec.n_basis - 1)
            fns = autodiff.make_objective(self.kind, None, n, spec.n_basis, self.delta_is_fixed)
        self._fns = fns

        self.lam = np.asarray(spec.lambda_init, dtype=float)
        self.modes: tuple = (None,) * n
        if self.kind == "spline_unimodal":
            self.set_modes((None,) * n)

    # -- penalty state ------------------------------------------------------

    def set_lam(self, lam) -> None:
        self.lam = np.broadcast_to(np.asarray(lam, dtype=float), (self.spec.n_states,)).copy()

    def set_modes(self, modes) -> None:
        """Install per-state coefficient-mode indices (None = unconstrained)."""
        from .constraints import constraint_matrix

        n, K = self.spec.n_states, self.spec.n_basis
        modes = tuple(modes)
        if len(modes) != n:
            raise ValueError("one mode entry per state required")
        C = np.zeros((n, K - 1, K))
        kap = np.zeros(n)
        for i, m in enumerate(modes):
            if m is None:
                continue
            C[i] = constraint_matrix(K, int(m))
            kap[i] = self.spec.kappa
        self.modes = modes
        self.C_stack = C
        self.kappa_vec = kap

    def _args(self):
        if self.kind == "parametric":
            return (self.x, self.delta_arg)
        if self.kind == "spline_unconstrained":
            return (self.phi, self.S, self.lam, self.delta_arg)
        return (
            self.phi,
            self.S,
            self.lam,
            self.C_stack,
            self.kappa_vec,
            self.spec.rho,
            self.log_nu_ratio,
            self.delta_arg,
        )

    # -- objective ----------------------------------------------------------

    def objective(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = self._fns["value_and_grad"](np.asarray(theta, dtype=float), *self._args())
        return float(v), np.asarray(g)

    def hessian_penalized(self, theta: np.ndarray) -> np.ndarray:
        """Negative Hessian of the penalised objective at ``theta``."""
        H = self._fns["hessian"](np.asarray(theta, dtype=float), *self._args())
        return -np.asarray(H)

    # -- packing ------------------------------------------------------------

    def beta_slice(self, state: int) -> slice:
        K1 = self.spec.n_basis - 1
        start = self.n_eta + state * K1
        return slice(start, start + K1)

    def unpack(self, theta: np.ndarray) -> dict:
        theta = np.asarray(theta, dtype=float)
        n = self.spec.n_states
        eta = theta[: self.n_eta].reshape(n, max(n - 1, 0))
        if self.kind == "parametric":
            params = tuple(
                params_from_unconstrained(f, theta[self._offsets[i]:self._offsets[i + 1]])
                for i, f in enumerate(self.spec.families)
            )
            return {"eta": eta, "params": params}
        free = theta[self.n_eta:].reshape(n, self.spec.n_basis - 1)
        beta = np.hstack([free, np.zeros((n, 1))])
        return {"eta": eta, "beta": beta}

    def pack(self, eta: np.ndarray, emission_part) -> np.ndarray:
        parts = [np.asarray(eta, dtype=float).ravel()]
        if self.kind == "parametric":
            for f, p in zip(self.spec.families, emission_part):
                parts.append(params_to_unconstrained(f, p))
        else:
            beta = np.asarray(emission_part, dtype=float)
            parts.append(beta[:, :-1].ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def model(self, theta: np.ndarray) -> HmmModel:
        u = self.unpack(theta)
        transition = TransitionModel(eta=u["eta"], delta_mode=self.spec.delta
                                     if isinstance(self.spec.delta, str)
                                     else np.asarray(self.spec.delta))
        if self.kind == "parametric":
            emission = ParametricEmission(families=self.spec.families, params=u["params"])
        else:
            emission = SplineEmission(basis=self.basis, beta=u["beta"])
        return HmmModel(transition=transition, emission=emission)

    # -- reporting ----------------------------------------------------------

    def components(self, theta: np.ndarray) -> dict:
        """Objective decomposition recomputed with the numpy implementations."""
        model = self.model(theta)
        ll = log_likelihood(model, self.x)
        out = {
            "loglik": ll,
            "smoothness_penalty": 0.0,
            "unimodality_penalty_smooth": 0.0,
            "unimodality_penalty": 0.0,
            "per_state_violation": [0.0] * self.spec.n_states,
        }
        if self.kind != "parametric":
            beta = self.unpack(theta)["beta"]
            out["smoothness_penalty"] = float(
                self.lam @ np.einsum("nk,kl,nl->n", beta, self.S, beta)
            )
        if self.kind == "spline_unimodal":
            smooth_total = 0.0
            viol = []
            for i, m in enumerate(self.modes):
                if m is None:
                    viol.append(0.0)
                    continue
                val, _ = unimodality_penalty(beta[i], self.basis, m, self.spec.rho)
                smooth_total += val
                viol.append(unimodality_violation(beta[i], self.basis, m))
            out["unimodality_penalty_smooth"] = smooth_total
            out["unimodality_penalty"] = float(sum(viol))
            out["per_state_violation"] = viol
        out["penalized_loglik"] = (
            ll
            - out["smoothness_penalty"]
            - self.spec.kappa * out["unimodality_penalty_smooth"]
        )
        return out


def penalized_objective(theta: np.ndarray, problem: FitProblem) -> tuple[float, np.ndarray]:
    """Doubly penalised log-likelihood and gradient at ``theta``."""
    return problem.objective(theta)


# ---------------------------------------------------------------------------
# initial values


def default_targets_from_data(x: np.ndarray, n_states: int) -> tuple[tuple[float, float], ...]:
    """Quantile-bin means and sds; a serviceable default when no targets given."""
    x = np.sort(np.asarray(x, dtype=float))
    bins = np.array_split(x, n_states)
    spread = max(float(x[-1] - x[0]), 1.0)
    out = []
    for b in bins:
        sd = float(np.std(b)) if b.size > 1 else 0.0
        out.append((float(np.mean(b)), max(sd, 1e-3 * spread)))
    return tuple(out)


def _default_gamma_init(n: int) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    off = 0.1 / (n - 1)
    return np.full((n, n), off) + (0.9 - off) * np.eye(n)


def _jitter_targets(targets, rng, mean_scale, sd_scale):
    return tuple(
        (m + rng.normal(0.0, mean_scale * s), s * np.exp(rng.normal(0.0, sd_scale)))
        for m, s in targets
    )


def _jitter_params(family, params, rng, mean_scale, sd_scale):
    if family in ("normal", "gamma"):
        m, s = _jitter_targets([params[:2]], rng, mean_scale, sd_scale)[0]
        if family == "gamma":
            m = abs(m) or s
        return (m, s)
    loc = params[0] + rng.normal(0.0, mean_scale * params[1])
    scale = params[1] * np.exp(rng.normal(0.0, sd_scale))
    return (loc, scale) + tuple(params[2:])


def initial_theta(problem: FitProblem, targets=None, params=None) -> np.ndarray:
    spec = problem.spec
    gamma0 = np.asarray(spec.gamma_init, dtype=float) if spec.gamma_init is not None \
        else _default_gamma_init(spec.n_states)
    eta0 = TransitionModel.from_tpm(gamma0).eta
    if problem.kind == "parametric":
        if params is None:
            params = tuple(
                params_from_moments(f, m, s)
                for f, (m, s) in zip(spec.families, targets)
            )
        return problem.pack(eta0, params)
    beta0 = np.stack([
        init_from_target(problem.basis, fam, m, s)
        for fam, (m, s) in zip(spec.families, targets)
    ])
    return problem.pack(eta0, beta0)


# ---------------------------------------------------------------------------
# inner fit and smoothing selection


def fit_inner(problem: FitProblem, theta0: np.ndarray,
              compute_hessian: bool = True) -> tuple[InnerFit, np.ndarray | None]:
    """Quasi-Newton maximisation of the penalised objective from ``theta0``.

    Stops at a projected-gradient norm of ``grad_tol`` relative to the
    parameter scale (max(1, |theta0|_inf)) or after ``max_inner_iter``
    iterations.  Returns the fit and the negative Hessian of the penalised
    objective at the optimum.  Non-convergence is flagged, never raised.
    """
    spec = problem.spec

    def negfun(theta):
        v, g = problem.objective(theta)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(theta)
        return -v, -g

    theta0 = np.asarray(theta0, dtype=float)
    scale = max(1.0, float(np.max(np.abs(theta0))) if theta0.size else 1.0)
    gtol = spec.grad_tol * scale

    # quasi-Newton burn-in: cheap and robust to rejected (non-finite) steps
    burn_in = min(200, spec.max_inner_iter)
    res = minimize(
        negfun, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": burn_in, "ftol": 1e-12, "gtol": gtol, "maxcor": 20},
    )
    theta = np.asarray(res.x, dtype=float)
    value = float(-res.fun)
    grad_inf = float(np.max(np.abs(res.jac))) if np.size(res.jac) else 0.0
    n_iter = int(res.nit)
    if grad_inf > gtol and n_iter < spec.max_inner_iter:
        # Newton polish with the exact autodiff Hessian; the stiff curvature
        # of the penalties makes first-order steps crawl near the optimum
        theta, value, grad_inf, polish_iters = _newton_polish(
            problem, theta, gtol, spec.max_inner_iter - n_iter
        )
        n_iter += polish_iters
    inner = InnerFit(
        theta=theta,
        value=value,
        converged=grad_inf <= gtol,
        n_iter=n_iter,
        grad_inf_norm=grad_inf,
    )
    H_pen = problem.hessian_penalized(inner.theta) if compute_hessian else None
    return inner, H_pen


def _newton_polish(problem: FitProblem, theta: np.ndarray, gtol: float,
                   max_iter: int) -> tuple[np.ndarray, float, float, int]:
    """Levenberg-damped ascent Newton with the exact autodiff Hessian.

    Solves (H + mu I) d = grad with mu shrinking on accepted steps and
    growing on rejections, so near-singular Hessians (smoothing weights at
    their upper bound) cannot stall the subproblem.  Returns
    (theta, value, gradient-inf-norm, iterations used).
    """
    value, grad = problem.objective(theta)
    grad_inf = float(np.max(np.abs(grad))) if grad.size else 0.0
    dim = theta.size
    mu = None
    it = 0
    while it < max_iter and grad_inf > gtol:
        it += 1
        H = problem.hessian_penalized(theta)
        scale = max(float(np.trace(H)) / dim, 1e-8)
        if mu is None:
            mu = 1e-6 * scale
        eye = np.eye(dim)
        accepted = False
        for _ in range(40):
            try:
                c, low = cho_factor(H + mu * eye, lower=True)
                d = cho_solve((c, low), grad)
            except np.linalg.LinAlgError:
                mu = max(mu * 10.0, 1e-10 * scale)
                continue
            cand = theta + d
            cand_value, cand_grad = problem.objective(cand)
            cand_grad_inf = float(np.max(np.abs(cand_grad)))
            better_value = np.isfinite(cand_value) and cand_value > value
            #近 the float64 resolution of the objective, accept steps that at
            # least keep the value while shrinking the gradient
            flat_better = (
                np.isfinite(cand_value)
                and cand_value >= value - 1e-13 * max(1.0, abs(value))
                and cand_grad_inf < 0.5 * grad_inf
            )
            if better_value or flat_better:
                theta, value, grad = cand, cand_value, cand_grad
                grad_inf = cand_grad_inf
                mu = max(mu / 3.0, 1e-12 * scale)
                accepted = True
                break
            mu = max(mu * 10.0, 1e-10 * scale)
        if not accepted:
            break
    return theta, value, grad_inf, it


def _lambda_update(problem: FitProblem, theta: np.ndarray, H_pen: np.ndarray,
                   lam: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Generalized Fellner-Schall step for the per-state smoothing weights.

    lam_i <- clip((rank(S) - lam_i tr(V_b S)) / (b' S b), bounds), with V_b
    the coefficient block of the inverse penalised Hessian.  The fixed point
    equates the penalty's REML stationarity condition.
    """
    spec = problem.spec
    lam_min, lam_max = spec.lambda_bounds
    beta = problem.unpack(theta)["beta"]
    try:
        V = np.linalg.inv(H_pen)
    except np.linalg.LinAlgError:
        V = np.linalg.pinv(H_pen)
    new = lam.copy()
    messages = []
    for i in range(spec.n_states):
        bSb = float(beta[i] @ problem.S @ beta[i])
        if bSb < _BSB_FLOOR:
            new[i] = lam_max
            messages.append(
                f"state {i}: coefficient curvature below {_BSB_FLOOR:g}; "
                f"smoothing weight pinned to {lam_max:g}"
            )
            continue
        sl = problem.beta_slice(i)
        tr = float(np.trace(V[sl, sl] @ problem.S_free))
        num = max(problem.penalty.rank - lam[i] * tr, 0.0)
        new[i] = float(np.clip(num / bSb, lam_min, lam_max))
    return new, messages


@dataclass
class SmoothingFit:
    inner: InnerFit
    lam: np.ndarray
    trace: list
    outer_converged: bool
    n_outer: int
    messages: list


def select_smoothing(problem: FitProblem, theta0: np.ndarray,
                     lam0=None) -> SmoothingFit:
    """Alternate penalised fits with smoothing-weight updates to convergence.

    Stops when the largest log-scale change of any weight falls below
    ``outer_tol`` or after ``outer_max_iter`` rounds.  With
    ``spec.lambda_fixed`` the loop reduces to a single inner fit.
    """
    spec = problem.spec
    lam = np.array(lam0 if lam0 is not None else spec.lambda_init, dtype=float)
    lam = np.broadcast_to(lam, (spec.n_states,)).copy()
    theta = np.asarray(theta0, dtype=float)
    trace: list = []
    messages: list = []
    outer_converged = False
    n_outer = 0
    inner = None
    for it in range(1, spec.outer_max_iter + 1):
        n_outer = it
        problem.set_lam(lam)
        inner, H_pen = fit_inner(problem, theta)
        theta = inner.theta
        comp = problem.components(theta)
        sign, logdet = np.linalg.slogdet(H_pen)
        criterion = (
            comp["penalized_loglik"]
            + 0.5 * problem.penalty.rank * float(np.sum(np.log(lam)))
            - 0.5 * logdet
        )
        trace.append(
            {
                "iteration": it,
                "lam": lam.copy(),
                "loglik": comp["loglik"],
                "penalized_loglik": comp["penalized_loglik"],
                "criterion": float(criterion),
                "logdet_sign": float(sign),
                "theta": theta.copy(),
            }
        )
        if spec.lambda_fixed:
            outer_converged = True
            break
        lam_new, msgs = _lambda_update(problem, theta, H_pen, lam)
        messages.extend(msgs)
        if np.max(np.abs(np.log(lam_new / lam))) < spec.outer_tol:
            outer_converged = True
            break
        lam = lam_new
    problem.set_lam(lam)
    return SmoothingFit(
        inner=inner, lam=lam, trace=trace, outer_converged=outer_converged,
        n_outer=n_outer, messages=messages,
    )


# ---------------------------------------------------------------------------
# mode candidates


def coefficient_mode_candidates(seq, half_width: int = 1, ratio: float = 0.5) -> list[int]:
    """Candidate coefficient-mode indices (1-based) from a fitted sequence.

    A single dominant peak yields a window of ``half_width`` around it,
    clipped to the valid range; a boundary peak (monotone sequence) is fixed
    to that boundary; several peaks within ``ratio`` of the largest yield
    every index between the outermost competing peaks.
    """
    seq = np.asarray(seq, dtype=float)
    K = seq.size
    keep = np.r_[True, seq[1:] != seq[:-1]]
    u = seq[keep]
    pos = np.flatnonzero(keep)
    left = np.r_[-np.inf, u[:-1]]
    right = np.r_[u[1:], -np.inf]
    peaks = pos[(u > left) & (u > right)]
    primary = peaks[np.argmax(seq[peaks])]
    competing = peaks[seq[peaks] >= ratio * seq[primary]]
    if competing.size == 1:
        m = int(primary) + 1
        if m in (1, K):
            return [m]
        return list(range(max(1, m - half_width), min(K, m + half_width) + 1))
    lo = int(competing.min()) + 1
    hi = int(competing.max()) + 1
    return list(range(lo, hi + 1))


def _project_unimodal_beta(beta_row: np.ndarray, basis, mode: int) -> np.ndarray:
    """Feasible warm start: isotonic projection of one coefficient row.

    Rescaled coefficients are made nondecreasing up to ``mode`` and
    nonincreasing after via pool-adjacent-violators on each flank, then
    shifted so the last coefficient is zero again.  Starting candidate fits
    inside the cone keeps the sharp penalty inactive at the first iterate.
    """
    from scipy.optimize import isotonic_regression

    offset = np.log(basis.nu / basis.nu[-1])
    bt = beta_row + offset
    left = isotonic_regression(bt[:mode], increasing=True).x
    right = isotonic_regression(bt[mode - 1:], increasing=False).x
    peak = max(left[-1], right[0])
    bt_proj = np.concatenate([left[:-1], [peak], right[1:]])
    beta = bt_proj - offset
    return beta - beta[-1]


def _candidate_combos(spec: FitSpec, alpha_tilde: np.ndarray) -> list[tuple]:
    K = spec.n_basis
    if isinstance(spec.mode_grid, str) and spec.mode_grid == "full":
        return list(itertools.combinations_with_replacement(range(1, K + 1), spec.n_states))
    grid = spec.mode_grid
    if isinstance(grid, str):
        if grid != "auto":
            raise ValueError(f"mode_grid must be 'auto', 'full' or per-state entries, got {grid!r}")
        grid = ("auto",) * spec.n_states
    if len(grid) != spec.n_states:
        raise ValueError("mode_grid needs one entry per state")
    sets = []
    for i, entry in enumerate(grid):
        if entry is None or (isinstance(entry, str) and entry.lower() == "none"):
            sets.append([None])
        elif isinstance(entry, str) and entry == "auto":
            sets.append(
                coefficient_mode_candidates(
                    alpha_tilde[i], spec.mode_half_width, spec.mode_ratio_threshold
                )
            )
        else:
            cand = sorted(int(m) for m in entry)
            if any(not 1 <= m <= K for m in cand):
                raise ValueError(f"mode candidates for state {i} outside [1, {K}]")
            sets.append(cand)
    combos = []
    for combo in itertools.product(*sets):
        ms = [m for m in combo if m is not None]
        if all(a <= b for a, b in zip(ms, ms[1:])):
            combos.append(combo)
    if not combos:
        # states are ordered by mean, but the per-state candidate windows can
        # still cross; fall back to the unfiltered product rather than fail
        combos = list(itertools.product(*sets))
    return combos


# ---------------------------------------------------------------------------
# drivers


def _assemble_result(problem, sm: SmoothingFit, spec, start_table, extra_messages=()) -> FitResult:
    comp = problem.components(sm.inner.theta)
    model = problem.model(sm.inner.theta)
    messages = list(sm.messages) + list(extra_messages)
    per_state: dict = {"unimodality_violation": comp["per_state_violation"]}
    converged = sm.inner.converged and sm.outer_converged
    if problem.kind != "parametric":
        counts = [mode_count(model.emission, i) for i in range(spec.n_states)]
        per_state["mode_count"] = counts
    if problem.kind == "spline_unimodal":
        bad_viol = comp["unimodality_penalty"] >= spec.uni_tol
        bad_modes = any(
            m is not None and c != 1
            for m, c in zip(problem.modes, per_state["mode_count"])
        )
        if bad_viol or bad_modes:
            messages.append(
                "unimodality not attained at the optimum "
                f"(violation={comp['unimodality_penalty']:.3g}, mode counts={per_state['mode_count']}); "
                "consider increasing kappa"
            )
            warnings.warn(messages[-1])
            converged = False
    return FitResult(
        model=model,
        spec=spec,
        theta=sm.inner.theta,
        loglik=comp["loglik"],
        penalized_loglik=comp["penalized_loglik"],
        smoothness_penalty=comp["smoothness_penalty"],
        unimodality_penalty=comp["unimodality_penalty"],
        unimodality_penalty_smooth=comp["unimodality_penalty_smooth"],
        converged=converged,
        lam=None if problem.kind == "parametric" else sm.lam.copy(),
        modes=None if problem.kind != "spline_unimodal" else tuple(problem.modes),
        n_outer_iterations=sm.n_outer,
        start_table=start_table,
        outer_trace=sm.trace,
        per_state=per_state,
        messages=messages,
    )


def _canonicalize_states(problem: FitProblem, sm: SmoothingFit) -> str | None:
    """Reorder a fitted spline model's states by ascending emission mean.

    The ordered mode grid and the per-state reporting rely on states sorted
    by location; label switches during optimisation are undone here.  Skipped
    for a fixed non-exchangeable initial distribution, where relabelling
    would change the likelihood.
    """
    from .emissions import emission_means
    from .hmm import permute_states

    if problem.kind == "parametric":
        return None
    if problem.delta_is_fixed and not np.allclose(problem.delta_arg, problem.delta_arg[0]):
        return None
    model = problem.model(sm.inner.theta)
    perm = np.argsort(emission_means(model.emission), kind="stable")
    if np.array_equal(perm, np.arange(perm.size)):
        return None
    permuted = permute_states(model, perm)
    sm.inner.theta = problem.pack(permuted.transition.eta, permuted.emission.beta)
    sm.lam = sm.lam[perm]
    problem.set_lam(sm.lam)
    return f"states relabelled by ascending emission mean (permutation {perm.tolist()})"


def multi_start(spec: FitSpec, x: np.ndarray) -> FitResult:
    """Best-of-``n_starts`` fit with jittered initial targets.

    Start 0 uses the unjittered targets; later starts jitter means normally
    and sds log-normally with per-start seeds spawned from ``spec.seed``.
    For the unimodal kind this delegates to :func:`search_modes` (the starts
    apply to its unconstrained stage).  Fitted spline states are relabelled
    to ascend by emission mean.
    """
    spec = normalize_spec(spec)
    if spec.model_kind == "spline_unimodal":
        return search_modes(spec, x)
    problem = FitProblem(spec, x)
    targets = spec.init_targets
    if targets is None and spec.init_params is None:
        targets = default_targets_from_data(problem.x, spec.n_states)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_starts)
    table: list[dict] = []
    best = None
    for s in range(spec.n_starts):
        rng = np.random.default_rng(seeds[s])
        row: dict = {"start": s}
        try:
            if spec.init_params is not None and spec.model_kind == "parametric":
                params = spec.init_params if s == 0 else tuple(
                    _jitter_params(f, p, rng, spec.jitter_mean_scale, spec.jitter_sd_scale)
                    for f, p in zip(spec.families, spec.init_params)
                )
                row["init"] = params
                theta0 = initial_theta(problem, params=params)
            else:
                tg = targets if s == 0 else _jitter_targets(
                    targets, rng, spec.jitter_mean_scale, spec.jitter_sd_scale
                )
                row["init"] = tg
                theta0 = initial_theta(problem, targets=tg)
            if spec.model_kind == "parametric":
                inner, _ = fit_inner(problem, theta0, compute_hessian=False)
                sm = SmoothingFit(inner=inner, lam=np.zeros(0), trace=[],
                                  outer_converged=True, n_outer=0, messages=[])
            else:
                sm = select_smoothing(problem, theta0)
            comp = problem.components(sm.inner.theta)
            row.update(
                penalized_loglik=comp["penalized_loglik"], loglik=comp["loglik"],
                converged=sm.inner.converged and sm.outer_converged,
                n_outer=sm.n_outer, error=None,
            )
            if np.isfinite(comp["penalized_loglik"]) and (
                best is None or comp["penalized_loglik"] > best[0]
            ):
                best = (comp["penalized_loglik"], sm)
        except Exception as exc:  # noqa: BLE001 - per-start failures are data
            row.update(penalized_loglik=np.nan, loglik=np.nan, converged=False,
                       n_outer=0, error=str(exc))
        table.append(row)
    if best is None:
        raise FitError("every optimisation start failed", table)
    _, sm = best
    extra = []
    if problem.kind != "parametric":
        problem.set_lam(sm.lam)
        note = _canonicalize_states(problem, sm)
        if note:
            extra.append(note)
    return _assemble_result(problem, sm, spec, table, extra_messages=extra)


def search_modes(spec: FitSpec, x: np.ndarray) -> FitResult:
    """Pruned ordered-grid search over coefficient-mode indices.

    Fits the unconstrained spline model first (multi-start), derives
    candidate mode indices per state from its coefficient sequence, then runs
    one constrained fit per ordered candidate combination, warm-started at
    the unconstrained optimum.  Returns the best by penalised log-likelihood,
    ties broken toward the smaller index sum.
    """
    spec = normalize_spec(spec)
    if spec.model_kind != "spline_unimodal":
        raise ValueError("search_modes applies to the spline_unimodal kind")
    unconstrained = multi_start(replace(spec, model_kind="spline_unconstrained"), x)
    beta_hat = unconstrained.model.emission.beta
    basis = unconstrained.model.emission.basis
    alpha_tilde = unconstrained.model.emission.weights * basis.nu[None, :]
    combos = _candidate_combos(spec, alpha_tilde)

    problem = FitProblem(spec, x, basis=basis)
    eta_hat = unconstrained.model.transition.eta
    search_table = []
    best = None
    for combo in combos:
        problem.set_modes(combo)
        beta0 = beta_hat.copy()
        for i, m in enumerate(combo):
            if m is not None:
                beta0[i] = _project_unimodal_beta(beta_hat[i], basis, int(m))
        theta0 = problem.pack(eta_hat, beta0)
        sm = select_smoothing(problem, theta0, lam0=unconstrained.lam)
        comp = problem.components(sm.inner.theta)
        search_table.append(
            {
                "modes": combo,
                "penalized_loglik": comp["penalized_loglik"],
                "loglik": comp["loglik"],
                "converged": sm.inner.converged and sm.outer_converged,
            }
        )
        mode_sum = sum(m for m in combo if m is not None)
        key = (comp["penalized_loglik"], -mode_sum)
        if np.isfinite(key[0]) and (best is None or key > best[0]):
            best = (key, combo, sm)
    if best is None:
        raise FitError("every candidate-mode fit failed", search_table)
    _, combo, sm = best
    problem.set_modes(combo)
    problem.set_lam(sm.lam)
    result = _assemble_result(
        problem, sm, spec, unconstrained.start_table,
        extra_messages=unconstrained.messages,
    )
    result.mode_search_table = search_table
    result.n_candidate_fits = len(combos)
    return result


def fit(spec: FitSpec, x: np.ndarray) -> FitResult:
    """Fit the requested model kind to one observation series."""
    return multi_start(spec, x)


def loglik_with_grad(model: HmmModel, x: np.ndarray):
    """Log-likelihood value and gradient for an existing model.

    The gradient is reported for the unconstrained parameterisation: the
    transition logits and, depending on the emission type, the free spline
    coefficients (last one pinned) or the transformed family parameters.
    """
    em = model.emission
    delta = model.transition.delta_mode
    delta_spec = "stationary" if isinstance(delta, str) else tuple(np.asarray(delta))
    if isinstance(em, SplineEmission):
        spec = FitSpec(
            n_states=model.n_states, model_kind="spline_unconstrained",
            n_basis=em.basis.n_basis, lambda_init=1.0, delta=delta_spec,
        )
        problem = FitProblem(spec, x, basis=em.basis)
        problem.set_lam(np.zeros(model.n_states))
        theta = problem.pack(model.transition.eta, em.beta)
        value, grad = problem.objective(theta)
        n = model.n_states
        return value, {
            "eta": grad[: problem.n_eta].reshape(n, max(n - 1, 0)),
            "beta_free": grad[problem.n_eta:].reshape(n, em.basis.n_basis - 1),
        }
    spec = FitSpec(
        n_states=model.n_states, model_kind="parametric",
        families=em.families, delta=delta_spec,
    )
    problem = FitProblem(spec, x)
    theta = problem.pack(model.transition.eta, em.params)
    value, grad = problem.objective(theta)
    n = model.n_states
    return value, {
        "eta": grad[: problem.n_eta].reshape(n, max(n - 1, 0)),
        "params": tuple(
            grad[problem._offsets[i]:problem._offsets[i + 1]].copy()
            for i in range(n)
        ),
    }
