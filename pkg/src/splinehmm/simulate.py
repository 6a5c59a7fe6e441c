"""Seeded generators: HMM sequences, semi-Markov sequences, and samplers.

Dwell times live on {1, 2, ...}: Poisson-based dwell distributions are
shifted by +1 so a sojourn always lasts at least one step (a raw Poisson
with a small rate would mostly produce zero-length visits).  All generators
take either an integer seed or a ``numpy.random.Generator``; replicate
streams are spawned from a root ``SeedSequence`` so they are independent and
reproducible.  The RNG algorithm (PCG64) is recorded in output metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .emissions import ParametricEmission, SplineEmission, gamma_shape_scale
from .hmm import HmmModel
from .splines import eval_basis


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# distribution samplers (algorithms fixed for reproducibility)


def sample_normal(rng, mean, sd, size):
    if sd <= 0:
        raise ValueError("sd must be positive")
    return rng.normal(mean, sd, size)


def sample_gamma(rng, mean, sd, size):
    if mean <= 0 or sd <= 0:
        raise ValueError("gamma mean and sd must be positive")
    shape, scale = gamma_shape_scale(mean, sd)
    return rng.gamma(shape, scale, size)


def sample_skew_normal(rng, xi, omega, alpha, size):
    """Two-normal representation: Z = d|U0| + sqrt(1-d^2) U1, d = a/sqrt(1+a^2)."""
    if omega <= 0:
        raise ValueError("skew-normal scale must be positive")
    d = alpha / np.sqrt(1.0 + alpha * alpha)
    u0 = rng.standard_normal(size)
    u1 = rng.standard_normal(size)
    z = d * np.abs(u0) + np.sqrt(1.0 - d * d) * u1
    return xi + omega * z


def sample_student_t(rng, mu, sigma, nu, size):
    """Location-scale t via the normal over chi-square ratio."""
    if sigma <= 0 or nu <= 0:
        raise ValueError("student-t scale and dof must be positive")
    z = rng.standard_normal(size)
    v = rng.chisquare(nu, size)
    return mu + sigma * z / np.sqrt(v / nu)


def sample_poisson(rng, rate, size):
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    return rng.poisson(rate, size)


def sample_geometric(rng, p, size):
    """Support {1, 2, ...} with mean 1/p."""
    if not 0 < p <= 1:
        raise ValueError("success probability must be in (0, 1]")
    return rng.geometric(p, size)


_PARAM_SAMPLERS = {
    "normal": sample_normal,
    "gamma": sample_gamma,
    "skew_normal": sample_skew_normal,
    "student_t": sample_student_t,
}


def _sample_spline_state(rng, emission: SplineEmission, state: int, size: int) -> np.ndarray:
    """Mixture draw: pick a basis component, then rejection-sample its bump."""
    basis = emission.basis
    weights = emission.weights[state]
    ks = rng.choice(basis.n_basis, size=size, p=weights)
    out = np.empty(size)
    degree = basis.degree
    for k in np.unique(ks):
        need = np.flatnonzero(ks == k)
        lo, hi = basis.knots[k], basis.knots[k + degree + 1]
        # cubic bump peaks at 2/3 of the inverse spacing
        ceiling = basis.nu[k] * (2.0 / 3.0) * 1.01
        got = 0
        while got < need.size:
            m = max(2 * (need.size - got), 16)
            xs = rng.uniform(lo, hi, m)
            u = rng.uniform(0.0, ceiling, m)
            dens = eval_basis(basis, xs)[:, k]
            acc = xs[u < dens]
            take = min(acc.size, need.size - got)
            out[need[got:got + take]] = acc[:take]
            got += take
    return out


def sample_emission(emission, states: np.ndarray, rng) -> np.ndarray:
    """Observations conditional on a 0-based state path."""
    states = np.asarray(states, dtype=int)
    x = np.empty(states.size)
    for i in range(emission.n_states):
        idx = np.flatnonzero(states == i)
        if not idx.size:
            continue
        if isinstance(emission, SplineEmission):
            x[idx] = _sample_spline_state(rng, emission, i, idx.size)
        else:
            fam = emission.families[i]
            x[idx] = _PARAM_SAMPLERS[fam](rng, *emission.params[i], idx.size)
    return x


# ---------------------------------------------------------------------------
# dwell-time distributions


@dataclass(frozen=True)
class DwellDistribution:
    """Sojourn-length distribution on {1, 2, ...}.

    kinds: ``geometric(p)``, ``shifted_poisson(rate)`` (Poisson + 1), and
    ``poisson_mixture(weights, rates)`` (mixture of Poissons, + 1).
    """

    kind: str
    p: float | None = None
    rate: float | None = None
    weights: tuple[float, ...] | None = None
    rates: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "geometric":
            if self.p is None or not 0 < self.p <= 1:
                raise ValueError("geometric dwell needs p in (0, 1]")
        elif self.kind == "shifted_poisson":
            if self.rate is None or self.rate < 0:
                raise ValueError("shifted_poisson dwell needs rate >= 0")
        elif self.kind == "poisson_mixture":
            if not self.weights or not self.rates or len(self.weights) != len(self.rates):
                raise ValueError("poisson_mixture needs matching weights and rates")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-8:
                raise ValueError("mixture weights must be positive and sum to 1")
            if np.any(np.asarray(self.rates, dtype=float) < 0):
                raise ValueError("mixture rates must be nonnegative")
        else:
            raise ValueError(f"unknown dwell kind {self.kind!r}")

    def pmf(self, d) -> np.ndarray:
        """Probability of each dwell length d >= 1."""
        d = np.asarray(d, dtype=int)
        if self.kind == "geometric":
            out = stats.geom.pmf(d, self.p)
        elif self.kind == "shifted_poisson":
            out = stats.poisson.pmf(d - 1, self.rate)
        else:
            out = np.zeros(d.shape, dtype=float)
            for w, r in zip(self.weights, self.rates):
                out = out + w * stats.poisson.pmf(d - 1, r)
        return np.where(d >= 1, out, 0.0)

    def sample(self, rng, size: int) -> np.ndarray:
        if self.kind == "geometric":
            return sample_geometric(rng, self.p, size)
        if self.kind == "shifted_poisson":
            return sample_poisson(rng, self.rate, size) + 1
        comp = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        rates = np.asarray(self.rates)[comp]
        return rng.poisson(rates) + 1

    def mean(self) -> float:
        if self.kind == "geometric":
            return 1.0 / self.p
        if self.kind == "shifted_poisson":
            return self.rate + 1.0
        return float(np.dot(self.weights, self.rates)) + 1.0


# ---------------------------------------------------------------------------
# series containers


@dataclass
class LabeledSeries:
    """Observations with optional true state labels (0-based internally)."""

    x: np.ndarray
    states: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=int)
            if self.states.shape != self.x.shape:
                raise ValueError("states and x must have equal length")

    def __len__(self) -> int:
        return self.x.size

    def to_frame(self) -> pd.DataFrame:
        """CSV schema: t (1-based), x, state (1-based true label)."""
        data = {"t": np.arange(1, self.x.size + 1), "x": self.x}
        if self.states is not None:
            data["state"] = self.states + 1
        return pd.DataFrame(data)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "LabeledSeries":
        if "x" not in frame.columns:
            raise ValueError("series CSV must contain an 'x' column")
        states = None
        if "state" in frame.columns:
            states = frame["state"].to_numpy(dtype=int) - 1
        return cls(x=frame["x"].to_numpy(dtype=float), states=states)

    @classmethod
    def from_csv(cls, path) -> "LabeledSeries":
        return cls.from_frame(pd.read_csv(path))


@dataclass
class SimConfig:
    """One simulation run: a generator plus length, replicate count, seed."""

    kind: str  # "hmm" | "hsmm"
    T: int
    n_replicates: int = 1
    seed: int = 0
    model: HmmModel | None = None  # hmm kind
    dwells: tuple[DwellDistribution, ...] | None = None  # hsmm kind
    emission: ParametricEmission | SplineEmission | None = None
    prefix: str = "sim"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1 or self.n_replicates < 1:
            raise ValueError("T and n_replicates must be at least 1")
        if self.kind == "hmm":
            if self.model is None:
                raise ValueError("hmm simulation needs a model")
        elif self.kind == "hsmm":
            if self.dwells is None or self.emission is None:
                raise ValueError("hsmm simulation needs dwells and an emission")
            if len(self.dwells) != 2 or self.emission.n_states != 2:
                raise ValueError("the semi-Markov generator is the two-state alternating design")
        else:
            raise ValueError(f"unknown simulation kind {self.kind!r}")


# ---------------------------------------------------------------------------
# generators


def simulate_hmm(model: HmmModel, T: int, delta=None, seed=0) -> LabeledSeries:
    """Draw a state path from the chain and observations from the emissions."""
    rng = _as_rng(seed)
    tpm = model.transition.tpm
    delta = model.transition.delta if delta is None else np.asarray(delta, dtype=float)
    n = model.n_states
    states = np.empty(T, dtype=int)
    states[0] = rng.choice(n, p=delta)
    for t in range(1, T):
        states[t] = rng.choice(n, p=tpm[states[t - 1]])
    x = sample_emission(model.emission, states, rng)
    return LabeledSeries(x=x, states=states)


def simulate_hsmm(dwells, emission, T: int, seed=0) -> LabeledSeries:
    """Two alternating states with explicit sojourn distributions.

    The initial state is drawn uniformly; sojourn lengths come from each
    state's dwell distribution and the series is truncated at T.
    """
    rng = _as_rng(seed)
    dwells = tuple(dwells)
    states = np.empty(T, dtype=int)
    state = int(rng.integers(0, 2))
    t = 0
    while t < T:
        d = int(dwells[state].sample(rng, 1)[0])
        states[t:t + d] = state
        t += d
        state = 1 - state
    x = sample_emission(emission, states, rng)
    return LabeledSeries(x=x, states=states)


def run_simulation(config: SimConfig) -> list[LabeledSeries]:
    """All replicates of a configured simulation with spawned substreams."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_replicates)
    out = []
    for r in range(config.n_replicates):
        rng = np.random.default_rng(seeds[r])
        if config.kind == "hmm":
            out.append(simulate_hmm(config.model, config.T, seed=rng))
        else:
            out.append(simulate_hsmm(config.dwells, config.emission, config.T, seed=rng))
    return out
