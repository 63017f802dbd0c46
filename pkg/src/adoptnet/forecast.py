"""Scenario forecasting on top of the estimated adoption model.

Covers four jobs: calibrating the innovator/imitator constants to an
observed uptake figure, editing the supply timeline into what-if scenarios,
propagating expected adopters month by month with the cumulative-count
feedback, and wrapping the point forecast in bootstrap bands.

The propagation is deterministic sample enumeration: each person carries a
per-class survival probability, the month's expected new adopters feed the
next month's imitator utility, and E[Y(t)] = E[Y(t-1)] + E[S(t)] holds
exactly by construction. A per-person Bernoulli simulator is available as
an alternative feedback mode for comparison runs.
"""

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence
import warnings

import numpy as np

from .destination import AccessibilityField, accessibility_field
from .lccm import (
    SOCIAL_SCALE,
    AdoptionParams,
    EmConfig,
    adoption_prob,
    em_estimate,
    membership_probs,
    phi_grid_search,
)
from .model import (
    STRATA,
    InvalidInputError,
    InvalidStateError,
    NetworkTimeline,
    Person,
    SamplingWeights,
    observed_cumulative_adopters,
)

FACILITY_TYPES = ("station", "onstreet")

# bounds for the drawn non-adopter constant; its curvature is near zero at
# any interior optimum, so unclamped normal draws can wander into overflow
NON_ASC_BOUNDS = (-30.0, 0.0)


class CalibrationError(InvalidStateError):
    """Raised when no constant shift on the bracket reaches the target."""

    def __init__(self, msg: str, low: float, high: float, target: float):
        super().__init__(msg)
        self.low = low
        self.high = high
        self.target = target


class NonPsdCovarianceWarning(UserWarning):
    """The supplied covariance had negative eigenvalues and was projected."""


@dataclass(frozen=True)
class ScenarioEdit:
    """One supply addition: a facility activated at a zone from a month on."""

    zone: str
    facility: str
    month: int

    def __post_init__(self) -> None:
        if self.facility not in FACILITY_TYPES:
            raise InvalidInputError(
                f"scenario edit: facility must be one of {FACILITY_TYPES}, "
                f"got {self.facility!r}"
            )
        if self.month < 1:
            raise InvalidInputError(
                f"scenario edit: month must be >= 1, got {self.month}"
            )

    def to_dict(self) -> dict:
        return {"zone": self.zone, "facility": self.facility, "month": self.month}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioEdit":
        try:
            return cls(str(d["zone"]), str(d["facility"]), int(d["month"]))
        except KeyError as exc:
            raise InvalidInputError(f"scenario edit: missing key {exc}") from exc


@dataclass(frozen=True)
class Scenario:
    """A named set of supply edits plus the number of forecast months."""

    name: str
    edits: tuple[ScenarioEdit, ...]
    horizon: int

    def __post_init__(self) -> None:
        if not self.name:
            raise InvalidInputError("scenario needs a non-empty name")
        if self.horizon < 1:
            raise InvalidInputError(
                f"scenario {self.name}: horizon must be >= 1, got {self.horizon}"
            )
        object.__setattr__(self, "edits", tuple(self.edits))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "edits": [e.to_dict() for e in self.edits],
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        try:
            edits = tuple(ScenarioEdit.from_dict(e) for e in d.get("edits", []))
            return cls(str(d["name"]), edits, int(d["horizon"]))
        except KeyError as exc:
            raise InvalidInputError(f"scenario: missing key {exc}") from exc


def base_scenario(horizon: int, name: str = "base") -> Scenario:
    """The no-investment scenario: the observed supply rolled forward."""
    return Scenario(name=name, edits=(), horizon=horizon)


def apply_scenario(
    network: NetworkTimeline, scenario: Scenario, end_month: Optional[int] = None
) -> NetworkTimeline:
    """Extend the observed timeline with a scenario's supply edits.

    Edits must fall strictly after the observed window (``network.horizon``):
    retroactive supply would alter the estimation data. The original
    timeline is left untouched. ``end_month`` overrides the extended horizon
    (default: observed horizon + scenario horizon).
    """
    end = end_month if end_month is not None else network.horizon + scenario.horizon
    if end < network.horizon:
        raise InvalidInputError(
            f"scenario {scenario.name}: end month {end} precedes the "
            f"observed horizon {network.horizon}"
        )
    for e in scenario.edits:
        if e.month <= network.horizon:
            raise InvalidInputError(
                f"scenario {scenario.name}: edit ({e.zone}, {e.facility}, "
                f"month {e.month}) falls inside the observed window "
                f"(ends month {network.horizon})"
            )
        if e.month > end:
            raise InvalidInputError(
                f"scenario {scenario.name}: edit month {e.month} is beyond "
                f"the forecast end {end}"
            )
    return network.with_additional_supply(
        [(e.zone, e.facility, e.month) for e in scenario.edits], end
    )


@dataclass(frozen=True)
class ForecastSeries:
    """Deterministic expected-adopter path for one parameter vector."""

    months: tuple[int, ...]
    new: np.ndarray          # E[S(t)] per forecast month
    cumulative: np.ndarray   # E[Y(t)], starting from y_start
    y_start: float


@dataclass(frozen=True)
class ForecastResult:
    """Bootstrap summary for one scenario: means plus quantile bands on the
    cumulative count."""

    scenario: str
    months: tuple[int, ...]
    mean_new: np.ndarray
    mean_cumulative: np.ndarray
    q025: np.ndarray
    q25: np.ndarray
    q50: np.ndarray
    q75: np.ndarray
    q975: np.ndarray
    draws: int
    y_start: float

    def rows(self) -> list[dict]:
        """Rows for the forecast CSV, one per month."""
        out = []
        for i, m in enumerate(self.months):
            out.append(
                {
                    "scenario": self.scenario,
                    "month": m,
                    "mean_S": float(self.mean_new[i]),
                    "mean_Y": float(self.mean_cumulative[i]),
                    "q025": float(self.q025[i]),
                    "q25": float(self.q25[i]),
                    "q50": float(self.q50[i]),
                    "q75": float(self.q75[i]),
                    "q975": float(self.q975[i]),
                }
            )
        return out


class _PersonArrays:
    """Person-major covariate arrays over a field's month range, built once
    and shared by every propagation over the same (persons, network, phi)."""

    def __init__(
        self,
        persons: Sequence[Person],
        network: NetworkTimeline,
        field: AccessibilityField,
        weights: Optional[SamplingWeights],
        posteriors,
        params: AdoptionParams,
    ) -> None:
        if not persons:
            raise InvalidInputError("need at least one person to forecast")
        self.persons = list(persons)
        self.horizon = field.horizon
        n = len(self.persons)

        fidx = {pid: i for i, pid in enumerate(field.person_ids)}
        missing = [p.id for p in self.persons if p.id not in fidx]
        if missing:
            raise InvalidInputError(
                f"persons absent from the accessibility field: {missing[:3]}"
            )
        rows = np.array([fidx[p.id] for p in self.persons])
        self.acc = field.values[rows, :]
        self.cov = field.covered_flags[rows, :].astype(float)

        t_max = self.horizon
        zone_station = np.zeros((len(network.ids), t_max + 1))
        zone_onstreet = np.zeros((len(network.ids), t_max + 1))
        for zi, zid in enumerate(network.ids):
            z = network.zones[zid]
            for t in range(1, t_max + 1):
                zone_station[zi, t] = 1.0 if z.has_station(t) else 0.0
                zone_onstreet[zi, t] = 1.0 if z.has_onstreet(t) else 0.0
        home = np.array([network.index[p.home_zone] for p in self.persons])
        self.station = zone_station[home, :]
        self.onstreet = zone_onstreet[home, :]

        self.tech = np.array(
            [float(p.tech_firm_employee) for p in self.persons]
        )
        if weights is None:
            self.w = np.ones(n)
        else:
            self.w = np.array([weights.for_person(p) for p in self.persons])
        self.h = _mixture_weights(params, self.persons, posteriors)
        self.adoption_month = np.array(
            [p.adoption_month if p.adoption_month is not None else -1
             for p in self.persons]
        )

    def at_risk(self, start_month: int) -> np.ndarray:
        """Persons still in the risk set when forecasting starts: never
        adopted, or adopted only at/after the start month."""
        return (self.adoption_month < 0) | (self.adoption_month >= start_month)

    def hazards(self, params: AdoptionParams, t: int, y_prev: float) -> np.ndarray:
        """(n, 3) per-class adoption probabilities at month t given the
        cumulative count through t-1."""
        acc_c = self.acc[:, t] * self.cov[:, t]
        acc_u = self.acc[:, t] * (1.0 - self.cov[:, t])
        v1 = (
            params.inn_asc
            + params.inn_tech * self.tech
            + params.inn_station * self.station[:, t]
            + params.inn_onstreet * self.onstreet[:, t]
            + params.inn_access_covered * acc_c
            + params.inn_access_uncovered * acc_u
        )
        v2 = (
            params.imi_asc
            + params.imi_tech * self.tech
            + params.imi_access_covered * acc_c
            + params.imi_access_uncovered * acc_u
            + params.imi_social_per100 * (y_prev / SOCIAL_SCALE)
        )
        v3 = np.full(v1.shape, params.non_asc)
        return adoption_prob(np.column_stack([v1, v2, v3]))


def _mixture_weights(params: AdoptionParams, persons, posteriors) -> np.ndarray:
    """Per-person class mixture weights: supplied posteriors where given,
    prior membership probabilities otherwise. Rows are renormalized."""
    n = len(persons)
    if posteriors is None:
        h = np.vstack([membership_probs(params, p) for p in persons])
    elif hasattr(posteriors, "posterior") and hasattr(posteriors, "person_ids"):
        lookup = {
            pid: posteriors.posterior[i]
            for i, pid in enumerate(posteriors.person_ids)
        }
        h = np.vstack(
            [
                lookup[p.id] if p.id in lookup else membership_probs(params, p)
                for p in persons
            ]
        )
    elif isinstance(posteriors, Mapping):
        h = np.vstack(
            [
                np.asarray(posteriors[p.id], dtype=float)
                if p.id in posteriors
                else membership_probs(params, p)
                for p in persons
            ]
        )
    else:
        h = np.asarray(posteriors, dtype=float)
        if h.shape != (n, 3):
            raise InvalidInputError(
                f"posterior array shape {h.shape} != ({n}, 3)"
            )
    return h / h.sum(axis=1, keepdims=True)


def _check_window(start_month: int, horizon: int, field_horizon: int) -> None:
    if start_month < 1:
        raise InvalidInputError(f"start_month must be >= 1, got {start_month}")
    if horizon < 1:
        raise InvalidInputError(f"forecast horizon must be >= 1, got {horizon}")
    end = start_month + horizon - 1
    if end > field_horizon:
        raise InvalidInputError(
            f"forecast window ends at month {end} but the timeline stops at "
            f"{field_horizon}; extend it with apply_scenario first"
        )


def _propagate(
    params: AdoptionParams,
    arrs: _PersonArrays,
    start_month: int,
    horizon: int,
    y_start: float,
) -> ForecastSeries:
    """Expected-adopter propagation with per-class survival tracking.

    Class-specific survival keeps the mixture exact: the effective class
    weight of a surviving person drifts toward classes with lower hazard,
    which a single pooled survival would miss.
    """
    risk = arrs.at_risk(start_month)
    surv = np.where(risk[:, None], 1.0, 0.0) * arrs.h
    months = tuple(range(start_month, start_month + horizon))
    new = np.zeros(horizon)
    cum = np.zeros(horizon)
    y = float(y_start)
    for i, t in enumerate(months):
        p = arrs.hazards(params, t, y)
        s_t = float(arrs.w @ (surv * p).sum(axis=1))
        surv = surv * (1.0 - p)
        y = y + s_t
        new[i] = s_t
        cum[i] = y
    return ForecastSeries(months=months, new=new, cumulative=cum, y_start=float(y_start))


def _simulate(
    params: AdoptionParams,
    arrs: _PersonArrays,
    start_month: int,
    horizon: int,
    y_start: float,
    rng: np.random.Generator,
) -> ForecastSeries:
    """Monte-Carlo counterpart of ``_propagate``: classes and adoption
    months are drawn person by person, feedback uses the realized weighted
    count. One call is one path."""
    n = len(arrs.persons)
    cdf = np.cumsum(arrs.h, axis=1)
    cls = (rng.random(n)[:, None] > cdf).sum(axis=1)
    alive = arrs.at_risk(start_month).copy()
    months = tuple(range(start_month, start_month + horizon))
    new = np.zeros(horizon)
    cum = np.zeros(horizon)
    y = float(y_start)
    for i, t in enumerate(months):
        p = arrs.hazards(params, t, y)[np.arange(n), cls]
        adopt = alive & (rng.random(n) < p)
        s_t = float(arrs.w @ adopt)
        alive &= ~adopt
        y = y + s_t
        new[i] = s_t
        cum[i] = y
    return ForecastSeries(months=months, new=new, cumulative=cum, y_start=float(y_start))


def _build_arrays(
    params: AdoptionParams,
    persons: Sequence[Person],
    network: NetworkTimeline,
    field: Optional[AccessibilityField],
    dc_params,
    weights: Optional[SamplingWeights],
    posteriors,
) -> _PersonArrays:
    if field is None:
        if dc_params is None:
            raise InvalidInputError(
                "need an accessibility field or destination-choice "
                "parameters to build one"
            )
        field = accessibility_field(dc_params, persons, network, params.phi)
    return _PersonArrays(persons, network, field, weights, posteriors, params)


def enumerate_forecast(
    params: AdoptionParams,
    persons: Sequence[Person],
    network: NetworkTimeline,
    start_month: int,
    horizon: int,
    y_start: float,
    *,
    field: Optional[AccessibilityField] = None,
    dc_params=None,
    weights: Optional[SamplingWeights] = None,
    posteriors=None,
) -> ForecastSeries:
    """Expected new and cumulative adopters for months ``start_month`` ..
    ``start_month + horizon - 1``.

    ``y_start`` is the cumulative adopter count through ``start_month - 1``;
    it seeds the imitator feedback and the cumulative series. Persons who
    adopted before the start month are absorbed (they should already be
    counted in ``y_start``); everyone else enters with survival one, i.e.
    the forecast conditions on the observed risk set. ``posteriors``
    (an estimation result, mapping, or aligned array) replaces prior
    membership weights for the persons it covers.
    """
    arrs = _build_arrays(params, persons, network, field, dc_params, weights,
                         posteriors)
    _check_window(start_month, horizon, arrs.horizon)
    return _propagate(params, arrs, start_month, horizon, y_start)


def simulate_forecast(
    params: AdoptionParams,
    persons: Sequence[Person],
    network: NetworkTimeline,
    start_month: int,
    horizon: int,
    y_start: float,
    seed,
    *,
    field: Optional[AccessibilityField] = None,
    dc_params=None,
    weights: Optional[SamplingWeights] = None,
    posteriors=None,
) -> ForecastSeries:
    """One simulated adoption path (individual Bernoulli draws) over the
    same window as ``enumerate_forecast``. ``seed`` is an int or Generator."""
    arrs = _build_arrays(params, persons, network, field, dc_params, weights,
                         posteriors)
    _check_window(start_month, horizon, arrs.horizon)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _simulate(params, arrs, start_month, horizon, y_start, rng)


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the constant-shift calibration."""

    params: AdoptionParams
    shift: float
    predicted: float
    target: float
    month: int
    n_iter: int


def calibrate_ascs(
    params: AdoptionParams,
    persons: Sequence[Person],
    network: NetworkTimeline,
    target: float,
    month: int,
    *,
    field: Optional[AccessibilityField] = None,
    dc_params=None,
    weights: Optional[SamplingWeights] = None,
    posteriors=None,
    y_prev: Optional[float] = None,
    tol: float = 0.5,
    bracket: tuple[float, float] = (-10.0, 10.0),
) -> CalibrationResult:
    """Shift the innovator and imitator constants by a common ``c`` so the
    enumerated expectation of new adopters in ``month`` matches ``target``.

    The predicted count is continuous and strictly increasing in ``c``, so
    bisection on the bracket converges; a target outside the achievable
    range raises ``CalibrationError`` carrying the attainable bounds.
    ``y_prev`` (cumulative adopters through ``month - 1``) defaults to the
    count observed in ``persons``.
    """
    if target < 0:
        raise InvalidInputError(f"calibration target must be >= 0, got {target}")
    arrs = _build_arrays(params, persons, network, field, dc_params, weights,
                         posteriors)
    _check_window(month, 1, arrs.horizon)
    if y_prev is None:
        y_prev = float(observed_cumulative_adopters(persons, month)[month - 1])

    risk = arrs.at_risk(month)
    base_w = arrs.w * risk
    h = arrs.h

    def predicted(c: float) -> float:
        p = arrs.hazards(
            params.replace(inn_asc=params.inn_asc + c,
                           imi_asc=params.imi_asc + c),
            month,
            y_prev,
        )
        return float(base_w @ (h * p).sum(axis=1))

    lo, hi = float(bracket[0]), float(bracket[1])
    f_lo, f_hi = predicted(lo), predicted(hi)
    if not (f_lo <= target <= f_hi):
        raise CalibrationError(
            f"calibration target {target} for month {month} is outside the "
            f"achievable range [{f_lo:.6g}, {f_hi:.6g}] on shift bracket "
            f"[{lo}, {hi}]",
            low=f_lo, high=f_hi, target=float(target),
        )
    n_iter = 0
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        n_iter += 1
        if predicted(mid) < target:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    pred = predicted(c)
    if abs(pred - target) > tol:
        raise CalibrationError(
            f"bisection converged to shift {c:.6g} but the prediction "
            f"{pred:.6g} misses the target {target} by more than {tol}",
            low=f_lo, high=f_hi, target=float(target),
        )
    return CalibrationResult(
        params=params.replace(inn_asc=params.inn_asc + c,
                              imi_asc=params.imi_asc + c),
        shift=float(c),
        predicted=pred,
        target=float(target),
        month=int(month),
        n_iter=n_iter,
    )


def _psd_factor(covariance: np.ndarray, n_params: int) -> np.ndarray:
    """Square root of the covariance for normal draws, projecting onto the
    PSD cone (with a warning) if needed."""
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (n_params, n_params):
        raise InvalidInputError(
            f"covariance shape {cov.shape} != ({n_params}, {n_params})"
        )
    sym = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(sym)
    scale = max(1.0, float(evals.max(initial=0.0)))
    if evals.min() < -1e-10 * scale:
        warnings.warn(
            f"covariance is not positive semi-definite (min eigenvalue "
            f"{evals.min():.3g}); projecting onto the PSD cone",
            NonPsdCovarianceWarning,
            stacklevel=3,
        )
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def _clamp_draw(p: AdoptionParams) -> AdoptionParams:
    lo, hi = NON_ASC_BOUNDS
    if lo <= p.non_asc <= hi:
        return p
    return p.replace(non_asc=min(hi, max(lo, p.non_asc)))


def _resample_persons(
    persons: Sequence[Person], rng: np.random.Generator
) -> list[Person]:
    """Within-stratum resample with replacement, preserving stratum counts
    (and therefore the sampling weights). Duplicates get fresh ids so the
    panel builder accepts them."""
    out: list[Person] = []
    for stratum in STRATA:
        group = [p for p in persons if p.stratum == stratum]
        if not group:
            continue
        picks = rng.integers(0, len(group), size=len(group))
        for k, j in enumerate(picks):
            out.append(replace(group[j], id=f"{group[j].id}~{k}"))
    return out


def bootstrap_forecast(
    params: AdoptionParams,
    covariance: np.ndarray,
    persons: Sequence[Person],
    network: NetworkTimeline,
    scenarios: Sequence[Scenario],
    draws: int,
    seed: int,
    *,
    dc_params,
    start_month: int,
    y_start: float,
    weights: Optional[SamplingWeights] = None,
    posteriors=None,
    feedback: str = "expected",
    mode: str = "parametric",
    em_config: Optional[EmConfig] = None,
) -> tuple[ForecastResult, ...]:
    """Forecast each scenario ``draws`` times under parameter uncertainty
    and summarize the cumulative paths with quantile bands.

    The default draws parameter vectors from the asymptotic normal around
    ``params`` (``mode="parametric"``); ``mode="resample"`` instead
    re-estimates the model on within-stratum resamples of ``persons``,
    which is orders of magnitude slower. ``feedback`` picks expectation
    propagation or per-draw individual simulation. Draw ``k`` always uses
    the generator seeded by ``(seed, k)``, so results are reproducible and
    independent of any execution order.

    The friction exponent and the class-mixture weights are held at their
    estimated values across draws; the covariance covers the remaining
    coefficients.
    """
    if draws < 1:
        raise InvalidInputError(f"draws must be >= 1, got {draws}")
    if not scenarios:
        raise InvalidInputError("need at least one scenario")
    if feedback not in ("expected", "simulated"):
        raise InvalidInputError(f"unknown feedback mode {feedback!r}")
    if mode not in ("parametric", "resample"):
        raise InvalidInputError(f"unknown bootstrap mode {mode!r}")

    n_params = len(AdoptionParams.param_names())
    factor = _psd_factor(covariance, n_params) if mode == "parametric" else None
    theta_hat = params.to_vector()

    # parameter draws do not depend on the scenario, so build them once and
    # reuse the same vector for every scenario at the same draw index
    drawn: list[AdoptionParams] = []
    for k in range(draws):
        rng = np.random.default_rng([seed, k])
        if mode == "parametric":
            theta = theta_hat + factor @ rng.standard_normal(n_params)
            drawn.append(
                _clamp_draw(AdoptionParams.from_vector(theta, phi=params.phi))
            )
        else:
            drawn.append(
                _reestimate_draw(params, persons, network, rng, dc_params,
                                 weights, start_month, em_config)
            )

    results = []
    for sc in scenarios:
        needed_end = start_month + sc.horizon - 1
        if sc.edits or needed_end > network.horizon:
            net_x = apply_scenario(network, sc, end_month=max(needed_end,
                                                              network.horizon))
        else:
            net_x = network
        fld = accessibility_field(dc_params, persons, net_x, params.phi)
        arrs = _PersonArrays(persons, net_x, fld, weights, posteriors, params)
        _check_window(start_month, sc.horizon, arrs.horizon)

        s_draws = np.zeros((draws, sc.horizon))
        y_draws = np.zeros((draws, sc.horizon))
        for k in range(draws):
            if feedback == "expected":
                series = _propagate(drawn[k], arrs, start_month, sc.horizon,
                                    y_start)
            else:
                # reseed so the path noise is identical across scenarios at
                # the same draw index (common random numbers)
                rng = np.random.default_rng([seed, k, 1])
                series = _simulate(drawn[k], arrs, start_month, sc.horizon,
                                   y_start, rng)
            s_draws[k] = series.new
            y_draws[k] = series.cumulative

        mean_new = s_draws.mean(axis=0)
        mean_cum = float(y_start) + np.cumsum(mean_new)
        qs = np.quantile(y_draws, [0.025, 0.25, 0.50, 0.75, 0.975], axis=0)
        results.append(
            ForecastResult(
                scenario=sc.name,
                months=tuple(range(start_month, start_month + sc.horizon)),
                mean_new=mean_new,
                mean_cumulative=mean_cum,
                q025=qs[0], q25=qs[1], q50=qs[2], q75=qs[3], q975=qs[4],
                draws=draws,
                y_start=float(y_start),
            )
        )
    return tuple(results)


def _reestimate_draw(
    params: AdoptionParams,
    persons: Sequence[Person],
    network: NetworkTimeline,
    rng: np.random.Generator,
    dc_params,
    weights: Optional[SamplingWeights],
    start_month: int,
    em_config: Optional[EmConfig],
) -> AdoptionParams:
    """One resampling-bootstrap draw: refit the model on a within-stratum
    resample of the estimation window and return its parameters."""
    est_horizon = min(start_month - 1, network.horizon)
    if est_horizon < 1:
        raise InvalidInputError(
            "resample bootstrap needs at least one estimation month before "
            f"the forecast start {start_month}"
        )
    boot = _resample_persons(persons, rng)
    boot = [
        p if (p.adoption_month is None or p.adoption_month <= est_horizon)
        else replace(p, adoption_month=None)
        for p in boot
    ]
    est_net = network.with_additional_supply([], est_horizon)
    fld = accessibility_field(dc_params, boot, est_net, params.phi)
    # the social feedback stays at the observed service counts, not the
    # resample's, since it proxies total fleet visibility
    y_ser = _truncated_y(persons, est_horizon)
    cfg = em_config or EmConfig(n_restarts=1, max_iter=300)
    res = em_estimate(boot, fld, weights or SamplingWeights.uniform(),
                      y_series=y_ser, init=params, config=cfg)
    return res.params.replace(phi=params.phi)


def _truncated_y(persons: Sequence[Person], horizon: int) -> np.ndarray:
    censored = [
        p if (p.adoption_month is None or p.adoption_month <= horizon)
        else replace(p, adoption_month=None)
        for p in persons
    ]
    return observed_cumulative_adopters(censored, horizon)


@dataclass(frozen=True)
class HoldoutResult:
    """Out-of-sample check: bootstrap bands against the held-out actuals."""

    forecast: ForecastResult
    months: tuple[int, ...]
    actual_new: np.ndarray
    actual_cumulative: np.ndarray
    in_iqr: tuple[bool, ...]
    in_whiskers: tuple[bool, ...]
    coverage_iqr: float
    coverage_whiskers: float
    calibration: CalibrationResult
    em_loglik: float
    phi: float
    split_month: int
    calib_month: int


def holdout_validate(
    persons: Sequence[Person],
    network: NetworkTimeline,
    weights: SamplingWeights,
    split_month: int,
    calib_month: int,
    horizon: int,
    *,
    dc_params,
    phi: Optional[float] = None,
    phi_grid: Optional[Sequence[float]] = None,
    draws: int = 1000,
    seed: int = 0,
    em_config: Optional[EmConfig] = None,
) -> HoldoutResult:
    """Estimate on months 1..split, calibrate on the calibration month, then
    forecast the remaining months and score the bands against what actually
    happened.

    Persons whose observed adoption falls after the split are censored for
    estimation (their sampling stratum, and hence weight, is kept: the
    stratification happened at collection time). Supply activations after
    the split stay out of the estimation window automatically because
    coverage is month-aware. Exactly one of ``phi`` and ``phi_grid`` must be
    given; the grid re-profiles the friction exponent on the truncated
    panel.
    """
    if not (1 <= split_month < calib_month <= horizon):
        raise InvalidInputError(
            f"need 1 <= split ({split_month}) < calibration ({calib_month}) "
            f"<= horizon ({horizon})"
        )
    if horizon > network.horizon:
        raise InvalidInputError(
            f"holdout horizon {horizon} exceeds the timeline's "
            f"{network.horizon}"
        )
    if (phi is None) == (phi_grid is None):
        raise InvalidInputError("pass exactly one of phi and phi_grid")

    truncated = [
        p if (p.adoption_month is None or p.adoption_month <= split_month)
        else replace(p, adoption_month=None)
        for p in persons
    ]
    est_net = network.with_additional_supply([], split_month)
    y_est = observed_cumulative_adopters(truncated, split_month)

    if phi_grid is not None:
        search = phi_grid_search(truncated, est_net, dc_params, weights,
                                 phi_grid, y_series=y_est, config=em_config)
        em = search.best
        phi_used = search.best_phi
    else:
        fld_est = accessibility_field(dc_params, truncated, est_net, phi)
        em = em_estimate(truncated, fld_est, weights, y_series=y_est,
                         config=em_config)
        phi_used = float(phi)

    y_full = observed_cumulative_adopters(persons, horizon)
    fld = accessibility_field(dc_params, persons, network, phi_used)
    target = float(y_full[calib_month] - y_full[calib_month - 1])
    calib = calibrate_ascs(
        em.params, persons, network, target, calib_month,
        field=fld, weights=weights, posteriors=em,
        y_prev=float(y_full[calib_month - 1]),
    )

    fc_months = horizon - calib_month
    sc = base_scenario(fc_months, name="holdout")
    fc = bootstrap_forecast(
        calib.params, em.covariance, persons, network, [sc], draws, seed,
        dc_params=dc_params, start_month=calib_month + 1,
        y_start=float(y_full[calib_month]), weights=weights, posteriors=em,
    )[0]

    months = fc.months
    actual_cum = np.array([y_full[m] for m in months])
    actual_new = np.array([y_full[m] - y_full[m - 1] for m in months])
    in_iqr = tuple(
        bool(fc.q25[i] <= actual_cum[i] <= fc.q75[i]) for i in range(len(months))
    )
    in_whisk = tuple(
        bool(fc.q025[i] <= actual_cum[i] <= fc.q975[i])
        for i in range(len(months))
    )
    return HoldoutResult(
        forecast=fc,
        months=months,
        actual_new=actual_new,
        actual_cumulative=actual_cum,
        in_iqr=in_iqr,
        in_whiskers=in_whisk,
        coverage_iqr=sum(in_iqr) / len(in_iqr),
        coverage_whiskers=sum(in_whisk) / len(in_whisk),
        calibration=calib,
        em_loglik=em.loglik,
        phi=phi_used,
        split_month=split_month,
        calib_month=calib_month,
    )
