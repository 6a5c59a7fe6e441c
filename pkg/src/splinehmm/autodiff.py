"""JAX implementation of the penalised HMM objective.

Single home for all algorithmic differentiation: the scaled-forward
log-likelihood, the penalty terms, and factory-built jitted callables
returning value, gradient, and Hessian of the objective for each model kind.
Everything runs in float64; the numpy implementations in ``hmm`` and
``constraints`` mirror these computations and are cross-checked in tests.
"""

from __future__ import annotations

from functools import lru_cache

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
import numpy as np
from jax import hessian as jax_hessian
from jax import lax, value_and_grad
from jax.scipy import stats as jstats
from jax.scipy.special import log_ndtr

# unconstrained parameter widths per family (see fit.pack_params)
FAMILY_WIDTH = {"normal": 2, "gamma": 2, "skew_normal": 3, "student_t": 3}


def _tpm_from_eta(eta, n):
    if n == 1:
        return jnp.ones((1, 1))
    idx = np.where(~np.eye(n, dtype=bool))
    logits = jnp.zeros((n, n)).at[idx].set(eta.ravel())
    logits = logits - logits.max(axis=1, keepdims=True)
    z = jnp.exp(logits)
    return z / z.sum(axis=1, keepdims=True)


def _stationary(tpm, n):
    M = (tpm.T - jnp.eye(n)).at[-1].set(jnp.ones(n))
    rhs = jnp.zeros(n).at[-1].set(1.0)
    return jnp.linalg.solve(M, rhs)


def _forward_loglik(delta, tpm, dens):
    a0 = delta * dens[0]
    c0 = a0.sum()

    def step(a, p):
        f = (a @ tpm) * p
        c = f.sum()
        return f / c, jnp.log(c)

    _, logs = lax.scan(step, a0 / c0, dens[1:])
    return jnp.log(c0) + logs.sum()


def _param_log_density(family, p, x):
    if family == "normal":
        return jstats.norm.logpdf(x, p[0], jnp.exp(p[1]))
    if family == "gamma":
        mean, sd = jnp.exp(p[0]), jnp.exp(p[1])
        shape = (mean / sd) ** 2
        scale = sd * sd / mean
        return jstats.gamma.logpdf(x, shape, scale=scale)
    if family == "skew_normal":
        xi, alpha = p[0], p[2]
        omega = jnp.exp(p[1])
        z = (x - xi) / omega
        return jnp.log(2.0) - jnp.log(omega) + jstats.norm.logpdf(z) + log_ndtr(alpha * z)
    if family == "student_t":
        return jstats.t.logpdf(x, jnp.exp(p[2]), loc=p[0], scale=jnp.exp(p[1]))
    raise ValueError(f"unknown family {family!r}")


@lru_cache(maxsize=None)
def make_objective(kind: str, families: tuple | None, n_states: int, n_basis: int | None,
                   delta_is_fixed: bool):
    """Jitted (value, grad) and Hessian callables for one model signature.

    The returned functions take the flat parameter vector first, followed by
    the dynamic arrays for the given kind:

    - parametric:            (theta, x, delta_arg)
    - spline_unconstrained:  (theta, phi, S, lam, delta_arg)
    - spline_unimodal:       (theta, phi, S, lam, C_stack, kappa_vec, rho,
                              log_nu_ratio, delta_arg)

    ``delta_arg`` is the fixed initial distribution, or an ignored
    placeholder when the stationary distribution is used.  Caching the
    factory keeps one compiled object per model signature, so repeated fits
    with equal shapes reuse the XLA executable.
    """
    n_eta = n_states * (n_states - 1)

    def unpack_eta(theta):
        return theta[:n_eta].reshape(n_states, max(n_states - 1, 0))

    def chain(theta, delta_arg):
        tpm = _tpm_from_eta(unpack_eta(theta), n_states)
        if delta_is_fixed:
            delta = delta_arg
        else:
            delta = _stationary(tpm, n_states)
        return tpm, delta

    if kind == "parametric":
        widths = [FAMILY_WIDTH[f] for f in families]
        offsets = np.concatenate([[0], np.cumsum(widths)]) + n_eta

        def objective(theta, x, delta_arg):
            tpm, delta = chain(theta, delta_arg)
            cols = []
            for i, fam in enumerate(families):
                p = theta[offsets[i]:offsets[i + 1]]
                cols.append(jnp.exp(_param_log_density(fam, p, x)))
            dens = jnp.stack(cols, axis=1)
            return _forward_loglik(delta, tpm, dens)

    elif kind in ("spline_unconstrained", "spline_unimodal"):

        def unpack_beta(theta):
            free = theta[n_eta:].reshape(n_states, n_basis - 1)
            return jnp.concatenate([free, jnp.zeros((n_states, 1))], axis=1)

        def spline_loglik(theta, phi, delta_arg):
            tpm, delta = chain(theta, delta_arg)
            beta = unpack_beta(theta)
            weights = jax.nn.softmax(beta, axis=1)
            dens = phi @ weights.T
            return _forward_loglik(delta, tpm, dens), beta

        if kind == "spline_unconstrained":

            def objective(theta, phi, S, lam, delta_arg):
                ll, beta = spline_loglik(theta, phi, delta_arg)
                smooth = lam @ jnp.einsum("nk,kl,nl->n", beta, S, beta)
                return ll - smooth

        else:

            def objective(theta, phi, S, lam, C_stack, kappa_vec, rho, log_nu_ratio, delta_arg):
                ll, beta = spline_loglik(theta, phi, delta_arg)
                smooth = lam @ jnp.einsum("nk,kl,nl->n", beta, S, beta)
                beta_tilde = beta + log_nu_ratio[None, :]
                z = jnp.einsum("nrk,nk->nr", C_stack, beta_tilde)
                per_state = jax.nn.softplus(-rho * z).sum(axis=1) / rho
                return ll - smooth - kappa_vec @ per_state

    else:
        raise ValueError(f"unknown model kind {kind!r}")

    return {
        "value_and_grad": jax.jit(value_and_grad(objective)),
        "hessian": jax.jit(jax_hessian(objective)),
    }
