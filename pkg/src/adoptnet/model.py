"""Core domain types: zones, supply timeline, persons, panel expansion and
choice-based sampling weights.

The data model is monthly. Months are 1-indexed integers counted from service
launch. Supply (stations, on-street parking) only grows: once a facility is
active in a zone it stays active, so the set of reachable destinations is
non-decreasing over time. A person either adopts in some month (and then
leaves the risk set for good) or is observed not adopting through the full
horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

STRATUM_ADOPTER = "adopter-sample"
STRATUM_POPULATION = "population-sample"
STRATA = (STRATUM_ADOPTER, STRATUM_POPULATION)


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


class InvalidStateError(RuntimeError):
    """Raised when an operation is evaluated in a state it cannot handle
    (e.g. a logsum over an empty destination set)."""


@dataclass(frozen=True)
class Zone:
    """A zip-code-level zone: the spatial unit for supply and destinations.

    ``station_month`` / ``onstreet_month`` are the first months in which the
    respective facility is active (``None`` = never). Activation is permanent.
    """

    id: str
    employment_density: float
    station_month: Optional[int] = None
    onstreet_month: Optional[int] = None

    def __post_init__(self) -> None:
        if self.employment_density < 0:
            raise InvalidInputError(
                f"zone {self.id}: employment_density must be >= 0, "
                f"got {self.employment_density}"
            )
        for name in ("station_month", "onstreet_month"):
            m = getattr(self, name)
            if m is not None and m < 1:
                raise InvalidInputError(f"zone {self.id}: {name} must be >= 1, got {m}")

    def has_station(self, month: int) -> bool:
        return self.station_month is not None and month >= self.station_month

    def has_onstreet(self, month: int) -> bool:
        return self.onstreet_month is not None and month >= self.onstreet_month

    def covered(self, month: int) -> bool:
        """Whether the zone hosts any facility (station or on-street) at
        ``month``, i.e. whether it is a destination alternative."""
        return self.has_station(month) or self.has_onstreet(month)


@dataclass(frozen=True)
class ZoneRoles:
    """Designated zones used by the destination-choice specification:
    the major technology firm, the downtown zone and airport zones.
    All optional; absent roles simply disable the corresponding dummies."""

    tech_firm: Optional[str] = None
    downtown: Optional[str] = None
    airports: tuple[str, ...] = ()

    def all_zones(self) -> tuple[str, ...]:
        out = []
        if self.tech_firm is not None:
            out.append(self.tech_firm)
        if self.downtown is not None:
            out.append(self.downtown)
        out.extend(self.airports)
        return tuple(out)

    def default_hubs(self) -> tuple[str, ...]:
        """Default hub set for destination ASCs: the tech firm plus airports."""
        hubs = []
        if self.tech_firm is not None:
            hubs.append(self.tech_firm)
        hubs.extend(self.airports)
        return tuple(hubs)


class NetworkTimeline:
    """Zones, inter-zone distances and the month-indexed facility supply.

    Distances are symmetric with a zero diagonal; both are validated on
    construction. ``active_destinations(t)`` (zones with any facility at
    month ``t``) is non-decreasing in ``t`` by construction, because
    activation months are fixed per zone.
    """

    def __init__(
        self,
        zones: Iterable[Zone],
        distances: np.ndarray | Mapping[tuple[str, str], float],
        horizon: int,
        roles: ZoneRoles = ZoneRoles(),
    ) -> None:
        zone_list = sorted(zones, key=lambda z: z.id)
        if len(zone_list) == 0:
            raise InvalidInputError("network needs at least one zone")
        if len({z.id for z in zone_list}) != len(zone_list):
            raise InvalidInputError("duplicate zone ids")
        if horizon < 1:
            raise InvalidInputError(f"horizon must be >= 1, got {horizon}")
        self.zones: dict[str, Zone] = {z.id: z for z in zone_list}
        self.ids: tuple[str, ...] = tuple(z.id for z in zone_list)
        self.index: dict[str, int] = {zid: k for k, zid in enumerate(self.ids)}
        self.horizon = int(horizon)
        self.roles = roles

        n = len(self.ids)
        if isinstance(distances, np.ndarray):
            mat = np.asarray(distances, dtype=float)
            if mat.shape != (n, n):
                raise InvalidInputError(
                    f"distance matrix shape {mat.shape} != ({n}, {n})"
                )
        else:
            mat = np.full((n, n), np.nan)
            np.fill_diagonal(mat, 0.0)
            for (a, b), d in distances.items():
                if a not in self.index or b not in self.index:
                    raise InvalidInputError(f"distance pair ({a}, {b}): unknown zone")
                mat[self.index[a], self.index[b]] = d
                mat[self.index[b], self.index[a]] = d
            if np.isnan(mat).any():
                missing = [
                    (self.ids[i], self.ids[j])
                    for i, j in zip(*np.nonzero(np.isnan(mat)))
                ]
                raise InvalidInputError(f"missing distances for pairs {missing[:5]}")
        if (mat < 0).any():
            raise InvalidInputError("distances must be >= 0")
        if not np.allclose(mat, mat.T, atol=1e-9):
            raise InvalidInputError("distance matrix must be symmetric")
        if not np.allclose(np.diag(mat), 0.0, atol=1e-9):
            raise InvalidInputError("distance matrix must have a zero diagonal")
        self._dist = 0.5 * (mat + mat.T)

        for zid in roles.all_zones():
            if zid not in self.index:
                raise InvalidInputError(f"role zone {zid} not in network")
        self._active_cache: dict[int, tuple[str, ...]] = {}

    def distance(self, a: str, b: str) -> float:
        return float(self._dist[self.index[a], self.index[b]])

    @property
    def distance_matrix(self) -> np.ndarray:
        return self._dist

    def active_destinations(self, month: int) -> tuple[str, ...]:
        """Zone ids hosting a station or on-street facility at ``month``,
        sorted by id. One destination per zone regardless of how many
        facility types it hosts."""
        if month not in self._active_cache:
            self._active_cache[month] = tuple(
                zid for zid in self.ids if self.zones[zid].covered(month)
            )
        return self._active_cache[month]

    def nearest_covered(self, zone_id: str, month: int) -> tuple[str, float]:
        """Nearest zone with an active facility at ``month`` (ties broken by
        lowest zone id, which is the iteration order of ``ids``)."""
        active = self.active_destinations(month)
        if not active:
            raise InvalidStateError(f"no active destinations at month {month}")
        best_id, best_d = None, np.inf
        for k in active:
            d = self.distance(zone_id, k)
            if d < best_d:
                best_id, best_d = k, d
        return best_id, best_d  # type: ignore[return-value]

    def with_additional_supply(
        self, edits: Sequence[tuple[str, str, int]], horizon: int
    ) -> "NetworkTimeline":
        """A copy with extra facility activations applied and a new horizon.
        Existing activations always keep their (earlier) month."""
        activations: dict[str, dict[str, Optional[int]]] = {
            zid: {"station": z.station_month, "onstreet": z.onstreet_month}
            for zid, z in self.zones.items()
        }
        for zone_id, facility, month in edits:
            if zone_id not in activations:
                raise InvalidInputError(f"scenario edit: unknown zone {zone_id}")
            if facility not in ("station", "onstreet"):
                raise InvalidInputError(f"scenario edit: unknown facility {facility}")
            current = activations[zone_id][facility]
            if current is None or month < current:
                activations[zone_id][facility] = month
        zones = [
            Zone(
                id=zid,
                employment_density=z.employment_density,
                station_month=activations[zid]["station"],
                onstreet_month=activations[zid]["onstreet"],
            )
            for zid, z in self.zones.items()
        ]
        return NetworkTimeline(zones, self._dist, horizon, self.roles)


@dataclass(frozen=True)
class Person:
    """One decision-maker: socio-demographics, home zone, sampling stratum
    and the observed adoption month (``None`` = censored never-adopter).

    ``income_k`` is monthly income in $1000. Covariates are time-invariant.
    Population-sample persons are assumed non-adopters, so they cannot carry
    an adoption month.
    """

    id: str
    home_zone: str
    income_k: float
    male: int
    tech_firm_employee: int
    stratum: str
    adoption_month: Optional[int] = None

    def __post_init__(self) -> None:
        if self.stratum not in STRATA:
            raise InvalidInputError(
                f"person {self.id}: stratum must be one of {STRATA}, got {self.stratum!r}"
            )
        if self.male not in (0, 1) or self.tech_firm_employee not in (0, 1):
            raise InvalidInputError(f"person {self.id}: dummies must be 0/1")
        if self.adoption_month is not None:
            if self.adoption_month < 1:
                raise InvalidInputError(
                    f"person {self.id}: adoption_month must be >= 1"
                )
            if self.stratum == STRATUM_POPULATION:
                raise InvalidInputError(
                    f"person {self.id}: population-sample persons are assumed "
                    "non-adopters and cannot carry an adoption month"
                )


class PanelObservation(NamedTuple):
    person_id: str
    month: int
    adopt: bool


def expand_panel(person: Person, horizon: int) -> list[PanelObservation]:
    """Expand a person into monthly binary choice observations.

    Adoption is absorbing: an adopter at month m contributes not-adopt for
    t < m, adopt at t = m and nothing afterwards. A never-adopter stays in
    the risk set through the full horizon.
    """
    if horizon < 1:
        raise InvalidInputError(f"horizon must be >= 1, got {horizon}")
    m = person.adoption_month
    if m is not None and m > horizon:
        raise InvalidInputError(
            f"person {person.id}: adoption_month {m} exceeds horizon {horizon}"
        )
    last = m if m is not None else horizon
    return [
        PanelObservation(person.id, t, m is not None and t == m)
        for t in range(1, last + 1)
    ]


def risk_months(person: Person, horizon: int) -> int:
    """Number of months the person is in the risk set (T_n)."""
    m = person.adoption_month
    if m is not None and m > horizon:
        raise InvalidInputError(
            f"person {person.id}: adoption_month {m} exceeds horizon {horizon}"
        )
    return m if m is not None else horizon


@dataclass(frozen=True)
class SamplingWeights:
    """Per-stratum weights w_g = W_g / H_g correcting choice-based sampling
    (population fraction over sample fraction)."""

    weights: Mapping[str, float]

    def __post_init__(self) -> None:
        for g in STRATA:
            if g not in self.weights:
                raise InvalidInputError(f"missing weight for stratum {g!r}")
            if not self.weights[g] > 0:
                raise InvalidInputError(f"weight for stratum {g!r} must be > 0")

    def for_stratum(self, stratum: str) -> float:
        return float(self.weights[stratum])

    def for_person(self, person: Person) -> float:
        return self.for_stratum(person.stratum)

    @staticmethod
    def uniform(value: float = 1.0) -> "SamplingWeights":
        return SamplingWeights({g: value for g in STRATA})


def compute_weights(
    sample_counts: Mapping[str, int],
    population_fractions: Mapping[str, float],
) -> SamplingWeights:
    """Weights from stratum sample counts and known population fractions.

    w_g = W_g / (n_g / N) where W_g is the population fraction of stratum g
    and n_g / N its sample fraction. Both strata must be present with
    positive counts; population fractions must lie in (0, 1) and sum to 1.
    """
    for g in STRATA:
        if sample_counts.get(g, 0) <= 0:
            raise InvalidInputError(f"sample count for stratum {g!r} must be > 0")
        w = population_fractions.get(g)
        if w is None or not (0.0 < w < 1.0):
            raise InvalidInputError(
                f"population fraction for stratum {g!r} must be in (0, 1)"
            )
    total_w = sum(population_fractions[g] for g in STRATA)
    if abs(total_w - 1.0) > 1e-9:
        raise InvalidInputError(f"population fractions must sum to 1, got {total_w}")
    n_total = sum(sample_counts[g] for g in STRATA)
    return SamplingWeights(
        {
            g: population_fractions[g] / (sample_counts[g] / n_total)
            for g in STRATA
        }
    )


def weights_from_persons(
    persons: Sequence[Person], population_fractions: Mapping[str, float]
) -> SamplingWeights:
    counts = {g: 0 for g in STRATA}
    for p in persons:
        counts[p.stratum] += 1
    return compute_weights(counts, population_fractions)


def observed_cumulative_adopters(
    persons: Sequence[Person], horizon: int, weighted: bool = False,
    weights: Optional[SamplingWeights] = None,
) -> np.ndarray:
    """Cumulative adopters Y(t) for t = 0..horizon from observed adoption
    months. Y(0) = 0. Unweighted by default (the adopter stratum contains
    every adopter, so raw counts are population counts); pass
    ``weighted=True`` with weights for scaled fixtures."""
    y = np.zeros(horizon + 1)
    for p in persons:
        m = p.adoption_month
        if m is not None and m <= horizon:
            y[m] += weights.for_person(p) if (weighted and weights) else 1.0
    return np.cumsum(y)
