"""Simultaneous perturbation stochastic approximation (SPSA).

Derivative-free maximizer for noisy objectives following the practical
guidelines of Spall (1998): gain sequences ``a_k = a / (A + k + 1)^0.602``
and ``c_k = c / (k + 1)^0.101``, a Rademacher simultaneous perturbation, and
two objective evaluations per iteration.  The step-size numerator ``a`` is
calibrated from an initial gradient-magnitude probe so the first update has
a requested typical size, which removes the one tuning constant Spall leaves
open.

Every objective evaluation is recorded; the incumbent (best evaluated point)
is tracked separately from the SPSA iterate, so the reported optimum never
degrades even though individual iterates may.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SpsaResult", "maximize"]


@dataclass
class SpsaResult:
    """Outcome of an SPSA run.

    ``best_x``/``best_y`` track the incumbent over all evaluations;
    ``trace`` holds the per-iteration incumbent envelope (non-decreasing by
    construction).
    """

    best_x: np.ndarray
    best_y: float
    final_x: np.ndarray
    n_evaluations: int
    trace: list = field(default_factory=list)


def maximize(objective, x0, n_iter=500, seed=0, c=0.1, alpha=0.602,
             gamma=0.101, big_a=None, init_step=0.1, max_step=1.0,
             n_probe=4):
    """Maximize ``objective`` starting from ``x0``.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector to a float; may be noisy.  Non-finite
        values are treated as minus infinity.
    x0 : array_like
        Starting point.
    n_iter : int
        Number of SPSA iterations (two evaluations each).
    c : float
        Perturbation half-width at iteration 1; should be at least the
        objective noise standard deviation scale.
    alpha, gamma : float
        Gain decay exponents (Spall's standard 0.602 / 0.101).
    big_a : float, optional
        Stability constant A; defaults to ``0.1 * n_iter``.
    init_step : float
        Requested typical magnitude of the first parameter update, used to
        calibrate the step numerator from probed gradient magnitudes.
    max_step : float
        Per-iteration cap on the update infinity-norm.
    n_probe : int
        Number of gradient probes used for the calibration.
    """
    x = np.array(x0, dtype=float)
    dim = x.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if big_a is None:
        big_a = 0.1 * n_iter

    def safe_eval(v):
        y = objective(v)
        return float(y) if np.isfinite(y) else -np.inf

    n_evals = 0
    best_x = x.copy()
    best_y = safe_eval(x)
    n_evals += 1

    def consider(v, y):
        nonlocal best_x, best_y
        if y > best_y:
            best_x, best_y = v.copy(), y

    # calibrate the step numerator from probed gradient magnitudes
    grad_mags = []
    for _ in range(n_probe):
        delta = rng.choice([-1.0, 1.0], size=dim)
        yp = safe_eval(x + c * delta)
        ym = safe_eval(x - c * delta)
        n_evals += 2
        consider(x + c * delta, yp)
        consider(x - c * delta, ym)
        if np.isfinite(yp) and np.isfinite(ym):
            grad_mags.append(abs(yp - ym) / (2.0 * c))
    g0 = float(np.mean(grad_mags)) if grad_mags else 0.0
    a = init_step * (big_a + 1.0) ** alpha / g0 if g0 > 0 else init_step

    trace = []
    for k in range(n_iter):
        ak = a / (big_a + k + 1.0) ** alpha
        ck = c / (k + 1.0) ** gamma
        delta = rng.choice([-1.0, 1.0], size=dim)
        xp = x + ck * delta
        xm = x - ck * delta
        yp = safe_eval(xp)
        ym = safe_eval(xm)
        n_evals += 2
        consider(xp, yp)
        consider(xm, ym)
        if np.isfinite(yp) and np.isfinite(ym):
            ghat = (yp - ym) / (2.0 * ck) * delta
            step = np.clip(ak * ghat, -max_step, max_step)
            x = x + step
        trace.append(best_y)

    return SpsaResult(best_x=best_x, best_y=best_y, final_x=x,
                      n_evaluations=n_evals, trace=trace)
