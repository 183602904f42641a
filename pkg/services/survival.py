"""Trapping-time survival curves and exponential lifetime fits."""

from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np
from lifelines import ExponentialFitter, KaplanMeierFitter

from exceptions import FitError
from schemas import SurvivalFit

MIN_EVENTS = 10


def _least_squares_tau(times: np.ndarray, survival: np.ndarray):
    """τ from log P(t) = −t/τ through the origin, or None when degenerate."""
    usable = (times > 0) & (survival > 0) & (survival < 1)
    if not np.any(usable):
        return None
    t = times[usable]
    log_p = np.log(survival[usable])
    slope, *_ = np.linalg.lstsq(t[:, None], log_p, rcond=None)
    if slope[0] >= 0:
        return None
    return float(-1.0 / slope[0])


def _bootstrap_sigma(times: np.ndarray, events: np.ndarray, resamples: int, seed: int) -> float:
    """Std of the censored exponential MLE Σt/Σevents over paired resamples."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, times.size, size=(resamples, times.size))
    n_events = events[idx].sum(axis=1)
    totals = times[idx].sum(axis=1)
    taus = np.divide(totals, n_events, out=np.full(resamples, np.nan), where=n_events > 0)
    taus = taus[np.isfinite(taus)]
    if taus.size < 2:
        return 0.0
    return float(np.std(taus, ddof=1))


def _closed_form_tau(times: np.ndarray, events: np.ndarray) -> float:
    """Censored exponential MLE Σt / max(events, 1)."""
    return float(times.sum() / max(int(events.sum()), 1))


def _single_time_curve(times: np.ndarray, events: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Product-limit curve when every record shares one time."""
    at_risk = times.size
    return np.array([0.0, float(times[0])]), np.array([1.0, 1.0 - events.sum() / at_risk])


def survival_and_fit(
    times: Sequence[float],
    censored: Sequence[bool],
    bootstrap_resamples: int = 1000,
    seed: int = 0,
) -> SurvivalFit:
    """Kaplan-Meier survival and exponential lifetime estimates.

    With a single distinct time, or when the likelihood fitter rejects the
    sample, τ_mle falls back to the closed form Σt / events and the
    least-squares estimate is reported degenerate.

    Args:
        times: Trapping times (any unit; results share it).
        censored: True where the time is a lower bound (run hit its cap).
        bootstrap_resamples: Resamples for σ_τ.
        seed: Bootstrap seed.

    Returns:
        SurvivalFit with the empirical curve, τ by maximum likelihood and by
        least squares on log P, and the bootstrap σ_τ.

    Raises:
        FitError: If there are no times, every time is censored, or the
            Kaplan-Meier fit fails.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float)).ravel()
    events = ~np.atleast_1d(np.asarray(censored, dtype=bool)).ravel()
    if times.size == 0:
        raise FitError("No trapping times to fit")
    if times.size != events.size:
        raise FitError("Times and censoring flags differ in length", details={"n": int(times.size)})
    if not np.any(events):
        raise FitError("All trapping times are censored", details={"n": int(times.size)})

    notices = []
    if np.unique(times).size < 2:
        grid, survival = _single_time_curve(times, events)
        tau_mle = _closed_form_tau(times, events)
        tau_lsq = None
        notices.append("single distinct time; closed-form lifetime")
    else:
        try:
            kmf = KaplanMeierFitter().fit(times, event_observed=events)
        except Exception as e:
            raise FitError(
                "Survival fit failed",
                details={"n": int(times.size), "error": str(e)},
            ) from e
        grid = kmf.survival_function_.index.to_numpy(dtype=float)
        survival = kmf.survival_function_.iloc[:, 0].to_numpy(dtype=float)
        try:
            tau_mle = float(ExponentialFitter().fit(times, event_observed=events).lambda_)
        except Exception as e:
            tau_mle = _closed_form_tau(times, events)
            notices.append(f"likelihood fit failed ({e}); closed-form lifetime")
        tau_lsq = _least_squares_tau(grid, survival)

    n_events = int(events.sum())
    if n_events < MIN_EVENTS:
        notices.append(f"only {n_events} uncensored times; estimates are low-count")
    if tau_lsq is None:
        notices.append("least-squares fit degenerate")

    return SurvivalFit(
        times=grid.tolist(),
        survival=survival.tolist(),
        tau_mle=tau_mle,
        tau_lsq=tau_lsq,
        sigma_tau=_bootstrap_sigma(times, events, bootstrap_resamples, seed),
        lsq_degenerate=tau_lsq is None,
        n=int(times.size),
        n_events=n_events,
        n_censored=int(times.size - n_events),
        notices=notices,
    )


def dkw_agreement(fit: SurvivalFit, alpha: float = 0.05) -> Tuple[bool, float, float]:
    """Whether exp(−t/τ_mle) stays inside the DKW band of the empirical curve.

    Returns:
        ``(agrees, max_deviation, band_half_width)``.
    """
    epsilon = math.sqrt(math.log(2.0 / alpha) / (2.0 * fit.n))
    grid = np.asarray(fit.times)
    after = np.asarray(fit.survival)
    # the empirical curve jumps at each grid time; check both one-sided limits
    before = np.concatenate([[1.0], after[:-1]])
    model = np.exp(-grid / fit.tau_mle)
    deviation = float(max(np.max(np.abs(model - after)), np.max(np.abs(model - before))))
    return deviation <= epsilon, deviation, epsilon
