"""Scoring of fitted models: ROC/AUC, switch counts, dwell times, densities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .emissions import density_matrix
from .hmm import HmmModel, stationary_distribution


@dataclass(frozen=True)
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def auc(scores: np.ndarray, truth: np.ndarray) -> RocResult:
    """ROC sweep over every distinct score; area by the trapezoidal rule.

    ``scores`` are probabilities of the positive class, ``truth`` binary
    labels.  A time point is decoded positive when its score exceeds the
    threshold, so with ties sharing one threshold the area equals the
    Mann-Whitney statistic with the midrank convention.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must align")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: truth contains a single class")
    # sweep from above the largest score (nothing positive) downwards
    order = np.argsort(-scores, kind="stable")
    sorted_truth = truth[order]
    distinct = np.r_[True, np.diff(scores[order]) != 0]
    tp = np.cumsum(sorted_truth)
    fp = np.cumsum(~sorted_truth)
    cut = np.flatnonzero(np.r_[distinct[1:], True])
    thresholds = np.r_[np.inf, scores[order][cut]]
    tpr = np.r_[0.0, tp[cut] / n_pos]
    fpr = np.r_[0.0, fp[cut] / n_neg]
    area = float(np.trapezoid(tpr, fpr))
    return RocResult(thresholds=thresholds, tpr=tpr, fpr=fpr, auc=area)


def switch_count(states: np.ndarray) -> int:
    """Number of time points whose state differs from the previous one."""
    states = np.asarray(states)
    if states.size <= 1:
        return 0
    return int(np.count_nonzero(states[1:] != states[:-1]))


def implied_dwell(tpm: np.ndarray, state: int) -> float:
    """Mean sojourn 1 / (1 - gamma_ii) implied by a Markov chain."""
    g = float(np.asarray(tpm)[state, state])
    if not 0 < g < 1:
        raise ValueError(f"self-transition probability must be in (0, 1), got {g}")
    return 1.0 / (1.0 - g)


def density_grid(model: HmmModel, grid_size: int = 512,
                 x_range: tuple[float, float] | None = None) -> pd.DataFrame:
    """Plot-ready table (x, state, density, weighted_density).

    Weights are the stationary distribution of the fitted transition matrix.
    Spline models default to their basis support; parametric models need an
    explicit ``x_range``.
    """
    em = model.emission
    if x_range is None:
        basis = getattr(em, "basis", None)
        if basis is None:
            raise ValueError("x_range is required for parametric emissions")
        x_range = basis.support
    grid = np.linspace(x_range[0], x_range[1], grid_size)
    dens = density_matrix(em, grid)
    weights = stationary_distribution(model.transition.tpm)
    frames = []
    for i in range(model.n_states):
        frames.append(pd.DataFrame({
            "x": grid,
            "state": i + 1,
            "density": dens[:, i],
            "weighted_density": weights[i] * dens[:, i],
        }))
    return pd.concat(frames, ignore_index=True)
