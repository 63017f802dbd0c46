"""Aggregate Bass diffusion baseline.

The Bass model treats the whole market as one pool: the per-period adoption
hazard p + (q/M)Y(t-1) rises with the installed base, new adopters are
hazard times remaining market, and the cumulative curve follows the familiar
S shape. It sees no network, no zones and no heterogeneity, which is exactly
why it serves as the baseline: its forecast cannot react to supply scenarios.

Fitting follows the quadratic-regression route: OLS of S(t) on
[1, Y(t-1), Y(t-1)^2] and an algebraic map from the coefficients back to
(p, q, M). The regression uses the lagged cumulative so it is internally
consistent with the simulation recursion; observations start at t = 1 with
Y(0) = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import InvalidInputError


class BassFitError(RuntimeError):
    """The series is not Bass-shaped (wrong curvature or no feasible M)."""


class HazardRangeWarning(UserWarning):
    """p + q >= 1, so the per-period hazard can leave (0, 1) before
    saturation; simulated flows are still clipped but the parameters are
    outside the model's intended regime."""


@dataclass(frozen=True)
class BassParams:
    p: float  # coefficient of innovation
    q: float  # coefficient of imitation
    M: float  # total potential market

    def __post_init__(self) -> None:
        if not (self.p > 0):
            raise InvalidInputError(f"p must be > 0, got {self.p}")
        if self.q < 0:
            raise InvalidInputError(f"q must be >= 0, got {self.q}")
        if not (self.M > 0):
            raise InvalidInputError(f"M must be > 0, got {self.M}")
        if self.p + self.q >= 1.0:
            warnings.warn(
                f"p + q = {self.p + self.q:.4f} >= 1: hazard leaves (0, 1) "
                "as the market saturates",
                HazardRangeWarning,
                stacklevel=2,
            )


class AdoptionSeries:
    """Monthly new adopters S(t), t = 1..T, plus the cumulative Y(t).

    ``y0`` is the installed base before the first month of the series; it is
    zero for a series starting at launch.
    """

    def __init__(self, new_adopters, y0: float = 0.0) -> None:
        s = np.asarray(new_adopters, dtype=float)
        if s.ndim != 1 or s.size < 1:
            raise InvalidInputError("series must be a 1-d array with >= 1 entry")
        if (s < 0).any():
            raise InvalidInputError("new-adopter counts must be >= 0")
        if y0 < 0:
            raise InvalidInputError(f"y0 must be >= 0, got {y0}")
        self.S = s
        self.y0 = float(y0)

    def __len__(self) -> int:
        return self.S.size

    @property
    def Y(self) -> np.ndarray:
        """Cumulative adopters at the end of each month, same length as S."""
        return self.y0 + np.cumsum(self.S)

    @property
    def Y_lagged(self) -> np.ndarray:
        """Installed base entering each month: Y(t-1) aligned with S(t)."""
        y = self.Y
        return np.concatenate([[self.y0], y[:-1]])

    def months(self) -> np.ndarray:
        return np.arange(1, self.S.size + 1)


def bass_hazard(params: BassParams, y_prev: float) -> float:
    """Adoption probability for the period entered with installed base
    ``y_prev``: p + (q/M) Y, clipped to [0, 1]."""
    if y_prev < 0:
        raise InvalidInputError(f"Y_prev must be >= 0, got {y_prev}")
    if y_prev > params.M:
        raise InvalidInputError(
            f"Y_prev {y_prev} exceeds market potential M = {params.M}"
        )
    return float(np.clip(params.p + (params.q / params.M) * y_prev, 0.0, 1.0))


def bass_simulate(params: BassParams, horizon: int, y0: float = 0.0) -> AdoptionSeries:
    """Deterministic expected-flow recursion over ``horizon`` months:
    S(t) = hazard(Y(t-1)) * (M - Y(t-1))."""
    if horizon < 1:
        raise InvalidInputError(f"horizon must be >= 1, got {horizon}")
    if not 0 <= y0 <= params.M:
        raise InvalidInputError(f"y0 must be in [0, M], got {y0}")
    s = np.zeros(horizon)
    y = float(y0)
    for t in range(horizon):
        s[t] = bass_hazard(params, y) * (params.M - y)
        y += s[t]
    return AdoptionSeries(s, y0=y0)


def bass_closed_form(params: BassParams, t) -> np.ndarray | float:
    """Continuous-time cumulative adopters Y(t) of the Bass differential
    equation: M (1 - e^{-(p+q)t}) / (1 + (q/p) e^{-(p+q)t})."""
    t_arr = np.asarray(t, dtype=float)
    if (t_arr < 0).any():
        raise InvalidInputError("t must be >= 0")
    e = np.exp(-(params.p + params.q) * t_arr)
    out = params.M * (1.0 - e) / (1.0 + (params.q / params.p) * e)
    return out if t_arr.ndim else float(out)


def bass_peak_time(params: BassParams) -> float:
    """Continuous-time peak of the adoption flow: ln(q/p) / (p + q).
    Only defined for q > p (otherwise the flow peaks at launch)."""
    if params.q <= params.p:
        return 0.0
    return float(np.log(params.q / params.p) / (params.p + params.q))


def bass_monthly_curve(
    params: BassParams, horizon: int, y0: float = 0.0
) -> AdoptionSeries:
    """Monthly adoption flows S(t) = Y(t) - Y(t-1) read off the closed-form
    cumulative curve.

    This is the continuous-time model sampled at month ends, the curve the
    familiar bell plots show. It peaks at the month containing the analytic
    peak time, unlike the one-step recursion of bass_simulate, which lags
    the continuous curve by its first-order discretization error. Starting
    from y0 > 0 shifts the curve to the time at which the closed form
    reaches y0.
    """
    if horizon < 1:
        raise InvalidInputError(f"horizon must be >= 1, got {horizon}")
    if not 0 <= y0 < params.M:
        raise InvalidInputError(f"y0 must be in [0, M), got {y0}")
    if y0 > 0:
        # invert Y(t0) = y0: e^{-(p+q)t0} = (M - y0) / (M + (q/p) y0)
        t0 = -np.log(
            (params.M - y0) / (params.M + (params.q / params.p) * y0)
        ) / (params.p + params.q)
    else:
        t0 = 0.0
    t = t0 + np.arange(horizon + 1)
    y = bass_closed_form(params, t)
    return AdoptionSeries(np.diff(y), y0=y0)


@dataclass
class BassFit:
    params: BassParams
    coefficients: tuple[float, float, float]  # (a, b, c) of S = a + bY + cY^2
    r_squared: float
    residuals: np.ndarray
    n_obs: int


def bass_fit_ols(series: AdoptionSeries) -> BassFit:
    """Fit (p, q, M) by OLS of S(t) on [1, Y(t-1), Y(t-1)^2].

    M is the root of c M^2 + b M + a = 0 that exceeds the observed maximum
    cumulative count: M = (-b - sqrt(b^2 - 4ac)) / (2c). Then p = a / M and
    q = -c M. A non-negative curvature c, a complex root, or no root beyond
    max(Y) means the series is not Bass-shaped.
    """
    if len(series) < 4:
        raise InvalidInputError("need >= 4 observations to fit the quadratic")
    y_lag = series.Y_lagged
    if np.allclose(y_lag, y_lag[0]):
        raise InvalidInputError("cumulative series is constant; nothing to fit")
    X = np.column_stack([np.ones_like(y_lag), y_lag, y_lag**2])
    coef, *_ = np.linalg.lstsq(X, series.S, rcond=None)
    a, b, c = (float(v) for v in coef)
    y_top = float(y_lag.max())
    # the curvature term must pull the flow down by a non-negligible amount
    # somewhere in the observed range, else the quadratic is degenerate
    # (constant or linear flow fits with c ~ 0 up to rounding noise)
    if c >= 0 or abs(c) * y_top**2 < 1e-9 * max(1.0, abs(a) + abs(b) * y_top):
        raise BassFitError(
            f"quadratic coefficient c = {c:.6g} is not meaningfully negative; "
            "the flow does not bend down with the installed base"
        )
    disc = b * b - 4 * a * c
    if disc < 0:
        raise BassFitError("no real root for the market potential")
    m = (-b - np.sqrt(disc)) / (2 * c)
    y_max = float(series.Y.max())
    if not m > y_max:
        raise BassFitError(
            f"fitted market potential {m:.4g} does not exceed the observed "
            f"cumulative maximum {y_max:.4g}"
        )
    p = a / m
    q = -c * m
    if p <= 0:
        raise BassFitError(f"implied p = {p:.6g} is not positive")
    fitted = X @ coef
    resid = series.S - fitted
    sst = float(np.sum((series.S - series.S.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return BassFit(
        params=BassParams(p=p, q=q, M=m),
        coefficients=(a, b, c),
        r_squared=r2,
        residuals=resid,
        n_obs=len(series),
    )


def bass_forecast(params: BassParams, horizon: int, y0: float = 0.0) -> AdoptionSeries:
    """Forecast flows for ``horizon`` months starting from installed base
    ``y0``. Same recursion as bass_simulate with S(t) clipped at 0 (relevant
    only when a noisy fit put y0 above the fitted M)."""
    if horizon < 1:
        raise InvalidInputError(f"horizon must be >= 1, got {horizon}")
    s = np.zeros(horizon)
    y = float(y0)
    for t in range(horizon):
        remaining = max(params.M - y, 0.0)
        hz = float(np.clip(params.p + (params.q / params.M) * min(y, params.M), 0.0, 1.0))
        s[t] = max(hz * remaining, 0.0)
        y += s[t]
    return AdoptionSeries(s, y0=y0)
