"""Destination-choice MNL and the logsum accessibility field.

A member choosing where to take the service faces the zones with active
supply at that month. Utility is linear in distance (per 100 km), log
employment size, a home-zone dummy, an on-street-parking dummy, two
tech-employee trip-pair dummies (downtown, airport) and hub-zone ASCs.
Accessibility for a person-month is the logsum over that choice set from
the person's home zone; homes without coverage get a friction-discounted
copy of the nearest covered zone's logsum.

Only hub zones carry ASCs; everywhere else the constant is pinned at zero so
the utility of a zone that first gains supply in a forecast scenario is
defined without re-estimation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .model import (
    InvalidInputError,
    InvalidStateError,
    NetworkTimeline,
    Person,
)
from .optimize import ConvergenceError, OptResult, maximize

DIST_SCALE = 100.0  # distance enters utility per 100 km
SIZE_FLOOR = 1.0  # employees/mi^2; keeps ln(size) finite for empty zones
COEF_CAP = 30.0  # separation guard


class DegenerateChoiceSetWarning(UserWarning):
    """A trip month offers a single destination; those trips carry no
    choice information and contribute zero log-likelihood."""


class SeparationWarning(UserWarning):
    """A coefficient ran away (a dummy perfectly predicts choice); the
    estimate is capped."""


class ImputationDiagnosticWarning(UserWarning):
    """An imputation source logsum was negative, so dividing by the
    friction factor raises rather than lowers remote accessibility."""


def stable_logsumexp(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    m = float(np.max(v))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(v - m))))


@dataclass(frozen=True)
class Trip:
    """One observed trip: who went from where to where, and when."""

    person_id: str
    origin_zone: str
    dest_zone: str
    month: int

    def __post_init__(self) -> None:
        if self.month < 1:
            raise InvalidInputError(f"trip month must be >= 1, got {self.month}")


@dataclass(frozen=True)
class DcParams:
    """Destination-choice coefficients.

    ``asc`` holds constants for hub zones only; any zone absent from the map
    has its constant fixed at zero.
    """

    beta_distance: float = 0.0
    alpha_logsize: float = 0.0
    delta_home: float = 0.0
    theta_onstreet: float = 0.0
    gamma_tech_downtown: float = 0.0
    gamma_tech_airport: float = 0.0
    asc: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        vals = [
            self.beta_distance,
            self.alpha_logsize,
            self.delta_home,
            self.theta_onstreet,
            self.gamma_tech_downtown,
            self.gamma_tech_airport,
            *self.asc.values(),
        ]
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("all destination-choice coefficients must be finite")

    @property
    def hub_order(self) -> tuple[str, ...]:
        return tuple(sorted(self.asc))

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                self.beta_distance,
                self.alpha_logsize,
                self.delta_home,
                self.theta_onstreet,
                self.gamma_tech_downtown,
                self.gamma_tech_airport,
                *(self.asc[h] for h in self.hub_order),
            ]
        )

    @staticmethod
    def from_vector(x: np.ndarray, hubs: Sequence[str]) -> "DcParams":
        hubs = tuple(sorted(hubs))
        if len(x) != 6 + len(hubs):
            raise InvalidInputError(
                f"parameter vector length {len(x)} != {6 + len(hubs)}"
            )
        return DcParams(
            beta_distance=float(x[0]),
            alpha_logsize=float(x[1]),
            delta_home=float(x[2]),
            theta_onstreet=float(x[3]),
            gamma_tech_downtown=float(x[4]),
            gamma_tech_airport=float(x[5]),
            asc={h: float(x[6 + k]) for k, h in enumerate(hubs)},
        )

    @staticmethod
    def param_names(hubs: Sequence[str]) -> tuple[str, ...]:
        return (
            "beta_distance",
            "alpha_logsize",
            "delta_home",
            "theta_onstreet",
            "gamma_tech_downtown",
            "gamma_tech_airport",
            *(f"asc[{h}]" for h in sorted(hubs)),
        )


def _feature_row(
    network: NetworkTimeline,
    person: Person,
    origin: str,
    dest: str,
    month: int,
    hubs: Sequence[str],
) -> np.ndarray:
    zones = network.zones
    roles = network.roles
    d = network.distance(origin, dest) / DIST_SCALE
    lsize = np.log(max(zones[dest].employment_density, SIZE_FLOOR))
    home = 1.0 if dest == person.home_zone else 0.0
    onstreet = 1.0 if zones[dest].has_onstreet(month) else 0.0
    tech = float(person.tech_firm_employee)
    down = tech if (roles.downtown is not None and dest == roles.downtown) else 0.0
    air = tech if dest in roles.airports else 0.0
    hub_onehot = [1.0 if dest == h else 0.0 for h in sorted(hubs)]
    return np.array([d, lsize, home, onstreet, down, air, *hub_onehot])


def dc_utility(
    params: DcParams,
    person: Person,
    origin: str,
    dest: str,
    network: NetworkTimeline,
    month: int,
) -> float:
    """Systematic utility of destination ``dest`` for ``person`` traveling
    from ``origin`` at ``month``. The destination must host active supply."""
    if not network.zones[dest].covered(month):
        raise InvalidInputError(
            f"destination {dest} has no active facility at month {month}"
        )
    x = _feature_row(network, person, origin, dest, month, params.hub_order)
    return float(x @ params.to_vector())


class _TripData:
    """Padded per-trip feature tensor for vectorized likelihood work.

    X has shape (n_trips, j_max, k); rows beyond a trip's choice-set size are
    masked out. Trips whose month offers a single destination are kept but
    flagged; they contribute nothing to the likelihood.
    """

    def __init__(
        self,
        trips: Sequence[Trip],
        persons: Mapping[str, Person],
        network: NetworkTimeline,
        hubs: Sequence[str],
    ) -> None:
        if not trips:
            raise InvalidInputError("need at least one trip")
        hubs = tuple(sorted(hubs))
        for h in hubs:
            if h not in network.index:
                raise InvalidInputError(f"hub zone {h} not in network")
        k = 6 + len(hubs)
        rows = []
        chosen = []
        degenerate = 0
        for tr in trips:
            if tr.person_id not in persons:
                raise InvalidInputError(f"trip references unknown person {tr.person_id}")
            person = persons[tr.person_id]
            active = network.active_destinations(tr.month)
            if tr.dest_zone not in active:
                raise InvalidInputError(
                    f"trip by {tr.person_id}: destination {tr.dest_zone} inactive "
                    f"at month {tr.month}"
                )
            if tr.origin_zone not in active:
                raise InvalidInputError(
                    f"trip by {tr.person_id}: origin {tr.origin_zone} inactive "
                    f"at month {tr.month}"
                )
            if len(active) < 2:
                degenerate += 1
            mat = np.stack(
                [
                    _feature_row(network, person, tr.origin_zone, j, tr.month, hubs)
                    for j in active
                ]
            )
            rows.append(mat)
            chosen.append(active.index(tr.dest_zone))
        self.n = len(trips)
        self.k = k
        self.hubs = hubs
        j_max = max(r.shape[0] for r in rows)
        self.X = np.zeros((self.n, j_max, k))
        self.mask = np.zeros((self.n, j_max), dtype=bool)
        self.chosen = np.array(chosen)
        for i, r in enumerate(rows):
            self.X[i, : r.shape[0]] = r
            self.mask[i, : r.shape[0]] = True
        self.informative = self.mask.sum(axis=1) > 1
        self.n_degenerate = degenerate
        if degenerate:
            warnings.warn(
                f"{degenerate} trip(s) fall in months offering a single "
                "destination; they contribute zero log-likelihood",
                DegenerateChoiceSetWarning,
                stacklevel=3,
            )

    def loglik_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        v = self.X @ theta
        v = np.where(self.mask, v, -np.inf)
        vmax = v.max(axis=1, keepdims=True)
        ev = np.exp(v - vmax)
        denom = ev.sum(axis=1, keepdims=True)
        logp_chosen = (
            np.take_along_axis(v, self.chosen[:, None], axis=1)[:, 0]
            - vmax[:, 0]
            - np.log(denom[:, 0])
        )
        ll = float(logp_chosen[self.informative].sum())
        p = ev / denom
        p[~self.informative] = 0.0
        x_chosen = np.take_along_axis(
            self.X, self.chosen[:, None, None], axis=1
        )[:, 0, :]
        x_chosen[~self.informative] = 0.0
        xbar = np.einsum("nj,njk->nk", p, self.X)
        grad = (x_chosen - xbar).sum(axis=0)
        return ll, grad

    def probabilities(self, theta: np.ndarray) -> np.ndarray:
        v = self.X @ theta
        v = np.where(self.mask, v, -np.inf)
        vmax = v.max(axis=1, keepdims=True)
        ev = np.exp(v - vmax)
        return ev / ev.sum(axis=1, keepdims=True)

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        p = self.probabilities(theta)
        p = np.where(self.informative[:, None], p, 0.0)
        xbar = np.einsum("nj,njk->nk", p, self.X)
        exx = np.einsum("nj,njk,njl->kl", p, self.X, self.X)
        return -(exx - np.einsum("nk,nl->kl", xbar, xbar))


def dc_loglik(
    params: DcParams,
    trips: Sequence[Trip],
    persons: Mapping[str, Person] | Sequence[Person],
    network: NetworkTimeline,
) -> float:
    """Multinomial-logit log-likelihood of the observed destinations."""
    data = _TripData(trips, _as_person_map(persons), network, params.hub_order)
    ll, _ = data.loglik_grad(params.to_vector())
    return ll


def dc_loglik_gradient(
    params: DcParams,
    trips: Sequence[Trip],
    persons: Mapping[str, Person] | Sequence[Person],
    network: NetworkTimeline,
) -> np.ndarray:
    data = _TripData(trips, _as_person_map(persons), network, params.hub_order)
    _, g = data.loglik_grad(params.to_vector())
    return g


def _as_person_map(persons) -> Mapping[str, Person]:
    if isinstance(persons, Mapping):
        return persons
    return {p.id: p for p in persons}


@dataclass
class DcFit:
    params: DcParams
    covariance: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    loglik: float
    loglik_null: float
    n_trips: int
    n_params: int
    param_names: tuple[str, ...]
    converged: bool
    n_iter: int

    @property
    def rho_squared(self) -> float:
        if self.loglik_null == 0.0:
            return 0.0
        return 1.0 - self.loglik / self.loglik_null


def dc_estimate(
    trips: Sequence[Trip],
    persons: Mapping[str, Person] | Sequence[Person],
    network: NetworkTimeline,
    hub_zones: Optional[Sequence[str]] = None,
    gtol: float = 1e-6,
    max_iter: int = 500,
) -> DcFit:
    """Fit the destination-choice MNL by quasi-Newton ascent from zeros.

    Covariance is the inverse of the negative analytic Hessian at the
    solution. Runaway coefficients (separation) are capped at +/-30 with a
    warning; genuine non-convergence raises with the best iterate attached.
    """
    person_map = _as_person_map(persons)
    if hub_zones is None:
        hub_zones = network.roles.default_hubs()
    data = _TripData(trips, person_map, network, hub_zones)

    res = maximize(data.loglik_grad, np.zeros(data.k), gtol=gtol, max_iter=max_iter)
    theta = res.x
    if np.max(np.abs(theta)) > COEF_CAP:
        warnings.warn(
            "coefficient exceeded +/-30 during estimation (likely a dummy "
            "perfectly predicting choice); capping",
            SeparationWarning,
            stacklevel=2,
        )
        theta = np.clip(theta, -COEF_CAP, COEF_CAP)
    elif not res.converged:
        raise ConvergenceError(
            f"destination-choice estimation did not converge: {res.message} "
            f"(gradient inf-norm {res.grad_norm:.3e})",
            res,
        )

    hess = data.hessian(theta)
    try:
        cov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        warnings.warn(
            "singular Hessian; covariance from pseudo-inverse", UserWarning
        )
        cov = np.linalg.pinv(-hess)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, theta / se, np.nan)
    ll, _ = data.loglik_grad(theta)
    sizes = data.mask.sum(axis=1)
    ll0 = float(-np.log(sizes[data.informative]).sum())
    return DcFit(
        params=DcParams.from_vector(theta, hub_zones),
        covariance=cov,
        std_errors=se,
        t_stats=t,
        loglik=ll,
        loglik_null=ll0,
        n_trips=data.n,
        n_params=data.k,
        param_names=DcParams.param_names(hub_zones),
        converged=res.converged or np.max(np.abs(res.x)) > COEF_CAP,
        n_iter=res.n_iter,
    )


def accessibility_logsum(
    params: DcParams,
    person: Person,
    origin_zone: str,
    network: NetworkTimeline,
    month: int,
) -> float:
    """ln sum of exp destination utilities over the active set at ``month``,
    seen from ``origin_zone``. The expected maximum utility of the trip."""
    active = network.active_destinations(month)
    if not active:
        raise InvalidStateError(f"no active destinations at month {month}")
    theta = params.to_vector()
    v = np.array(
        [
            _feature_row(network, person, origin_zone, j, month, params.hub_order)
            @ theta
            for j in active
        ]
    )
    return stable_logsumexp(v)


def accessibility_impute(source_value: float, distance_km: float, phi: float) -> float:
    """Friction-discounted accessibility for an uncovered zone.

    source / max(d, 1)^phi. The clamp keeps sub-kilometer distances from
    amplifying the source value.
    """
    if distance_km < 0:
        raise InvalidInputError(f"distance must be >= 0, got {distance_km}")
    if phi < 0:
        raise InvalidInputError(f"phi must be >= 0, got {phi}")
    return source_value / max(distance_km, 1.0) ** phi


class AccessibilityField:
    """Per-person, per-month accessibility with coverage flags.

    Values are materialized for the persons supplied at build time; arbitrary
    (person, zone, month) queries go through ``value_at``. The field caches
    logsum evaluations by (origin, home, tech, month) since those four fully
    determine a utility vector.
    """

    def __init__(
        self,
        params: DcParams,
        network: NetworkTimeline,
        phi: float,
        persons: Sequence[Person],
    ) -> None:
        if phi < 0:
            raise InvalidInputError(f"phi must be >= 0, got {phi}")
        self.params = params
        self.network = network
        self.phi = float(phi)
        self.horizon = network.horizon
        self.person_ids = tuple(p.id for p in persons)
        self._person_index = {pid: i for i, pid in enumerate(self.person_ids)}
        self._cache: dict[tuple[str, str, int, int], float] = {}
        self._negative_sources: set[tuple[str, int]] = set()

        n, t_max = len(persons), self.horizon
        self.values = np.zeros((n, t_max + 1))  # column 0 unused; months 1..T
        self.covered_flags = np.zeros((n, t_max + 1), dtype=bool)
        for i, p in enumerate(persons):
            for t in range(1, t_max + 1):
                v, cov = self._value_for(p, p.home_zone, t)
                self.values[i, t] = v
                self.covered_flags[i, t] = cov
        if self._negative_sources:
            sample = sorted(self._negative_sources)[:3]
            warnings.warn(
                f"{len(self._negative_sources)} (zone, month) imputation "
                f"source logsum(s) were negative (e.g. {sample}); the "
                "friction division then raises remote accessibility",
                ImputationDiagnosticWarning,
                stacklevel=3,
            )

    def _logsum(self, person: Person, origin: str, month: int) -> float:
        key = (origin, person.home_zone, person.tech_firm_employee, month)
        if key not in self._cache:
            self._cache[key] = accessibility_logsum(
                self.params, person, origin, self.network, month
            )
        return self._cache[key]

    def _value_for(self, person: Person, zone: str, month: int) -> tuple[float, bool]:
        if self.network.zones[zone].covered(month):
            return self._logsum(person, zone, month), True
        k, d = self.network.nearest_covered(zone, month)
        source = self._logsum(person, k, month)
        if source < 0:
            self._negative_sources.add((zone, month))
        return accessibility_impute(source, d, self.phi), False

    def value(self, person_id: str, month: int) -> float:
        return float(self.values[self._person_index[person_id], month])

    def covered(self, person_id: str, month: int) -> bool:
        return bool(self.covered_flags[self._person_index[person_id], month])

    def value_at(self, person: Person, zone: str, month: int) -> float:
        return self._value_for(person, zone, month)[0]

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(values, covered) arrays of shape (n_persons, horizon+1); column 0
        is padding so month t sits at column t."""
        return self.values, self.covered_flags


def accessibility_field(
    params: DcParams,
    persons: Sequence[Person],
    network: NetworkTimeline,
    phi: float,
) -> AccessibilityField:
    """Build the month-indexed accessibility field for ``persons``."""
    return AccessibilityField(params, network, phi, persons)
