"""Synthetic population, supply timeline, trip and adoption-history generator.

The generator is latent-then-simulate, matching the estimation model's own
data-generating story: each person first draws a latent class from the
membership model under the true parameters, then runs monthly Bernoulli
adoption draws under that class's hazard, with the imitator utility fed the
live cumulative adopter count from the previous month. Adopters' trips are
drawn from the true destination-choice MNL over whatever zones are active in
the trip month.

Everything downstream of the seed is a single serial stream from one
``numpy`` generator, so a given config reproduces its files byte for byte.
The ground truth (parameters, per-person latent classes, population tallies)
is written alongside the data so recovery tests have their oracle.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import io
from .bass import AdoptionSeries
from .destination import (
    AccessibilityField,
    DcParams,
    Trip,
    accessibility_field,
    dc_utility,
)
from .lccm import (
    CLASS_NAMES,
    IMITATOR,
    INNOVATOR,
    NONADOPTER,
    SOCIAL_SCALE,
    AdoptionParams,
    adoption_prob,
    membership_probs,
)
from .model import (
    STRATUM_ADOPTER,
    STRATUM_POPULATION,
    InvalidInputError,
    NetworkTimeline,
    Person,
    Zone,
    ZoneRoles,
    observed_cumulative_adopters,
)


class FeasibilityWarning(UserWarning):
    """The configured truth is expected to generate (almost) no adopters."""


# Default truth: signs and rough magnitudes follow the published three-class
# estimates, moderated so a few-thousand-person panel actually identifies
# them (the published membership intercepts put the innovator share near
# 3e-4, which no 5k-person fixture can recover).
DEFAULT_TRUTH = AdoptionParams(
    mem_asc_imitator=1.4,
    mem_income_imitator=-0.10,
    mem_male_imitator=-0.50,
    mem_asc_nonadopter=1.9,
    mem_income_nonadopter=-0.04,
    mem_male_nonadopter=-1.10,
    inn_asc=-4.4,
    inn_tech=1.1,
    inn_station=1.2,
    inn_onstreet=0.9,
    inn_access_covered=0.45,
    inn_access_uncovered=0.90,
    imi_asc=-7.2,
    imi_tech=1.6,
    imi_access_covered=0.65,
    imi_access_uncovered=0.80,
    imi_social_per100=0.25,
    non_asc=-20.0,
    phi=1.0,
)

DEFAULT_DC = DcParams(
    beta_distance=-0.24,
    alpha_logsize=0.18,
    delta_home=1.55,
    theta_onstreet=0.34,
    gamma_tech_downtown=1.00,
    gamma_tech_airport=2.78,
)


@dataclass(frozen=True)
class SynthConfig:
    """Everything the generator needs: truth, geography and sampling design.

    ``adopter_oversample`` is the stratified-sampling knob: the sample keeps
    every adopter and a 1/factor share of never-adopters, so 1.0 means the
    sample is the whole population (self-weighting). ``income_mode`` chooses
    between person-level lognormal incomes and a zone-average income shared
    by all residents of a zone.
    """

    seed: int
    n_zones: int = 12
    n_persons: int = 5000
    horizon: int = 30
    dc: DcParams = field(default_factory=lambda: DEFAULT_DC)
    adoption: AdoptionParams = field(default_factory=lambda: DEFAULT_TRUTH)
    adopter_oversample: float = 1.0
    income_median_k: float = 4.0
    income_sigma: float = 0.6
    male_share: float = 0.5
    tech_share: float = 0.3
    home_zone_weights: Optional[tuple[float, ...]] = None
    income_mode: str = "person"
    trips_per_member_month: float = 2.0
    covered_share: float = 0.58
    plane_km: float = 9.0

    def __post_init__(self) -> None:
        if self.n_zones < 2:
            raise InvalidInputError(f"n_zones must be >= 2, got {self.n_zones}")
        if self.n_persons < 1:
            raise InvalidInputError(f"n_persons must be >= 1, got {self.n_persons}")
        if self.horizon < 1:
            raise InvalidInputError(f"horizon must be >= 1, got {self.horizon}")
        if not self.adopter_oversample >= 1.0:
            raise InvalidInputError(
                f"adopter_oversample must be >= 1, got {self.adopter_oversample}"
            )
        if not (self.income_median_k > 0 and self.income_sigma >= 0):
            raise InvalidInputError("income distribution needs positive scale")
        for name in ("male_share", "tech_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must be in [0, 1], got {v}")
        if self.home_zone_weights is not None:
            w = np.asarray(self.home_zone_weights, dtype=float)
            if w.shape != (self.n_zones,) or (w < 0).any() or w.sum() <= 0:
                raise InvalidInputError(
                    "home_zone_weights must be n_zones non-negative numbers "
                    "with a positive sum"
                )
        if self.income_mode not in ("person", "zone"):
            raise InvalidInputError(
                f"income_mode must be 'person' or 'zone', got {self.income_mode!r}"
            )
        if self.trips_per_member_month < 0:
            raise InvalidInputError("trips_per_member_month must be >= 0")
        if not 0.0 < self.covered_share <= 1.0:
            raise InvalidInputError("covered_share must be in (0, 1]")
        if self.plane_km <= 0:
            raise InvalidInputError("plane_km must be > 0")


@dataclass(frozen=True)
class SynthData:
    """Generator output before any file is written.

    ``population`` is every simulated person (adoption months included);
    ``sample`` is the stratified subset that lands in persons.csv. ``classes``
    aligns with ``population`` and holds the drawn latent class indices.
    """

    config: SynthConfig
    network: NetworkTimeline
    population: tuple[Person, ...]
    sample: tuple[Person, ...]
    classes: np.ndarray
    trips: tuple[Trip, ...]
    truth: dict


def _make_network(cfg: SynthConfig, rng: np.random.Generator) -> NetworkTimeline:
    """Zones scattered on a plane; stations roll out densest-first on a
    staggered schedule (cumulative supply growth is monotone by construction),
    leaving the sparsest zones uncovered for the friction-imputation path."""
    n = cfg.n_zones
    width = len(str(n - 1))
    ids = [f"z{str(k).zfill(width)}" for k in range(n)]
    xy = rng.uniform(0.0, cfg.plane_km, size=(n, 2))
    density = np.clip(rng.lognormal(np.log(120.0), 1.0, size=n), 5.0, 4000.0)

    n_cov = max(1, int(round(cfg.covered_share * n)))
    order = np.argsort(-density)
    covered_idx = order[:n_cov]
    last_month = max(2, int(round(0.6 * cfg.horizon)))
    if n_cov == 1:
        months = [1]
    else:
        months = [1] + [
            int(round(m))
            for m in np.linspace(2, last_month, n_cov - 1)
        ]
    station_month = {int(covered_idx[j]): months[j] for j in range(n_cov)}
    onstreet_month = {}
    for j in range(0, n_cov, 2):
        k = int(covered_idx[j])
        onstreet_month[k] = min(cfg.horizon, station_month[k] + 2)

    zones = [
        Zone(
            id=ids[k],
            employment_density=float(density[k]),
            station_month=station_month.get(k),
            onstreet_month=onstreet_month.get(k),
        )
        for k in range(n)
    ]
    dist = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(ids[i], ids[j])] = float(np.hypot(*(xy[i] - xy[j])))

    downtown = ids[int(order[0])]
    covered_ids = [ids[int(k)] for k in covered_idx]
    hub_xy = xy[int(order[0])]
    airport = max(
        covered_ids, key=lambda z: float(np.hypot(*(xy[ids.index(z)] - hub_xy)))
    )
    roles = ZoneRoles(downtown=downtown, airports=(airport,) if airport != downtown else ())
    return NetworkTimeline(zones, dist, cfg.horizon, roles)


def _make_population(
    cfg: SynthConfig, network: NetworkTimeline, rng: np.random.Generator
) -> list[Person]:
    n = cfg.n_persons
    ids = network.ids
    if cfg.home_zone_weights is None:
        w = np.full(len(ids), 1.0 / len(ids))
    else:
        w = np.asarray(cfg.home_zone_weights, dtype=float)
        w = w / w.sum()
    homes = rng.choice(len(ids), size=n, p=w)
    mu = np.log(cfg.income_median_k)
    if cfg.income_mode == "zone":
        zone_income = rng.lognormal(mu, cfg.income_sigma, size=len(ids))
        income = zone_income[homes]
    else:
        income = rng.lognormal(mu, cfg.income_sigma, size=n)
    income = np.clip(income, 0.2, 60.0)
    male = (rng.random(n) < cfg.male_share).astype(int)
    tech = (rng.random(n) < cfg.tech_share).astype(int)
    width = len(str(n - 1))
    return [
        Person(
            id=f"p{str(i).zfill(width)}",
            home_zone=ids[homes[i]],
            income_k=float(income[i]),
            male=int(male[i]),
            tech_firm_employee=int(tech[i]),
            stratum=STRATUM_POPULATION,
        )
        for i in range(n)
    ]


def _zone_tech_profiles(
    cfg: SynthConfig, network: NetworkTimeline
) -> tuple[dict[tuple[str, int], int], np.ndarray, np.ndarray]:
    """Accessibility depends on a person only through (home zone, tech flag),
    so compute one profile per pair and broadcast instead of building the
    field over the whole population."""
    protos = []
    index = {}
    for zid in network.ids:
        for tech in (0, 1):
            index[(zid, tech)] = len(protos)
            protos.append(
                Person(
                    id=f"proto-{zid}-{tech}",
                    home_zone=zid,
                    income_k=1.0,
                    male=0,
                    tech_firm_employee=tech,
                    stratum=STRATUM_POPULATION,
                )
            )
    fld = accessibility_field(cfg.dc, protos, network, cfg.adoption.phi)
    values, covered = fld.matrix()
    return index, values, covered


def _simulate_adoption(
    cfg: SynthConfig,
    network: NetworkTimeline,
    population: Sequence[Person],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw latent classes, then run the monthly hazard with live integer
    cumulative-count feedback. Returns (classes, adoption month or 0)."""
    truth = cfg.adoption
    n = len(population)
    probs = np.array([membership_probs(truth, p) for p in population])
    u = rng.random(n)
    cum = np.cumsum(probs, axis=1)
    classes = (u[:, None] >= cum).sum(axis=1)

    prof_index, prof_values, prof_covered = _zone_tech_profiles(cfg, network)
    row = np.array(
        [prof_index[(p.home_zone, p.tech_firm_employee)] for p in population]
    )
    tech = np.array([float(p.tech_firm_employee) for p in population])
    zidx = np.array([network.index[p.home_zone] for p in population])
    t_max = cfg.horizon
    station = np.zeros((len(network.ids), t_max + 1))
    onstreet = np.zeros((len(network.ids), t_max + 1))
    for k, zid in enumerate(network.ids):
        z = network.zones[zid]
        for t in range(1, t_max + 1):
            station[k, t] = float(z.has_station(t))
            onstreet[k, t] = float(z.has_onstreet(t))

    is_inn = classes == INNOVATOR
    is_imi = classes == IMITATOR
    month_of = np.zeros(n, dtype=int)
    at_risk = np.ones(n, dtype=bool)
    y_cum = 0
    expected_no_feedback = np.zeros(n)
    survival = np.ones(n)
    for t in range(1, t_max + 1):
        acc = prof_values[row, t]
        cov = prof_covered[row, t].astype(float)
        acc_cov = acc * cov
        acc_unc = acc * (1.0 - cov)
        v = np.full(n, truth.non_asc)
        v[is_inn] = (
            truth.inn_asc
            + truth.inn_tech * tech[is_inn]
            + truth.inn_station * station[zidx[is_inn], t]
            + truth.inn_onstreet * onstreet[zidx[is_inn], t]
            + truth.inn_access_covered * acc_cov[is_inn]
            + truth.inn_access_uncovered * acc_unc[is_inn]
        )
        v[is_imi] = (
            truth.imi_asc
            + truth.imi_tech * tech[is_imi]
            + truth.imi_access_covered * acc_cov[is_imi]
            + truth.imi_access_uncovered * acc_unc[is_imi]
            + truth.imi_social_per100 * (y_cum / SOCIAL_SCALE)
        )
        p = adoption_prob(v)
        # fixed draw count per month keeps the stream independent of outcomes
        draws = rng.random(n)
        adopt = at_risk & (draws < p)
        month_of[adopt] = t
        at_risk &= ~adopt
        y_cum += int(adopt.sum())
        expected_no_feedback += survival * p
        survival *= 1.0 - p

    if y_cum == 0:
        expected = float(expected_no_feedback.sum())
        share = [float(probs[:, s].mean()) for s in range(3)]
        warnings.warn(
            f"no adopters generated (expected about {expected:.3g} under the "
            f"configured truth; mean class shares {share}); estimation on "
            "this output cannot identify adoption parameters",
            FeasibilityWarning,
            stacklevel=2,
        )
    return classes, month_of


def _stamp_population(
    population: Sequence[Person], month_of: np.ndarray
) -> list[Person]:
    out = []
    for p, m in zip(population, month_of):
        if m > 0:
            out.append(
                replace(p, stratum=STRATUM_ADOPTER, adoption_month=int(m))
            )
        else:
            out.append(p)
    return out


def _draw_sample(
    cfg: SynthConfig, population: Sequence[Person], rng: np.random.Generator
) -> list[Person]:
    """All adopters plus a 1/oversample share of never-adopters."""
    keep_rate = 1.0 / cfg.adopter_oversample
    draws = rng.random(len(population))
    sample = []
    for p, u in zip(population, draws):
        if p.adoption_month is not None or u < keep_rate:
            sample.append(p)
    return sample


def _dest_distribution_cache(cfg: SynthConfig, network: NetworkTimeline):
    """Cumulative destination probabilities keyed by (origin, home, tech,
    month); the true MNL depends on a person only through those."""
    cache: dict[tuple[str, str, int, int], tuple[list[str], np.ndarray]] = {}

    def get(origin: str, home: str, tech: int, month: int):
        key = (origin, home, tech, month)
        if key not in cache:
            active = network.active_destinations(month)
            proto = Person(
                id="proto",
                home_zone=home,
                income_k=1.0,
                male=0,
                tech_firm_employee=tech,
                stratum=STRATUM_POPULATION,
            )
            v = np.array(
                [dc_utility(cfg.dc, proto, origin, d, network, month) for d in active]
            )
            ev = np.exp(v - v.max())
            cache[key] = (list(active), np.cumsum(ev / ev.sum()))
        return cache[key]

    return get


def _make_trips(
    cfg: SynthConfig,
    network: NetworkTimeline,
    population: Sequence[Person],
    rng: np.random.Generator,
) -> list[Trip]:
    if cfg.trips_per_member_month == 0:
        return []
    dest_dist = _dest_distribution_cache(cfg, network)
    trips = []
    for p in population:
        if p.adoption_month is None:
            continue
        for t in range(p.adoption_month, cfg.horizon + 1):
            k = int(rng.poisson(cfg.trips_per_member_month))
            if k == 0:
                continue
            # trips start where a vehicle can be picked up: the home zone if
            # it hosts a facility, else the member's nearest covered zone
            if network.zones[p.home_zone].covered(t):
                origin = p.home_zone
            else:
                origin, _ = network.nearest_covered(p.home_zone, t)
            active, cum = dest_dist(origin, p.home_zone, p.tech_firm_employee, t)
            picks = np.searchsorted(cum, rng.random(k), side="right")
            picks = np.minimum(picks, len(active) - 1)
            for j in picks:
                trips.append(
                    Trip(
                        person_id=p.id,
                        origin_zone=origin,
                        dest_zone=active[int(j)],
                        month=t,
                    )
                )
    return trips


def _truth_document(
    cfg: SynthConfig,
    network: NetworkTimeline,
    population: Sequence[Person],
    sample: Sequence[Person],
    classes: np.ndarray,
) -> dict:
    n = len(population)
    n_adopters = sum(1 for p in population if p.adoption_month is not None)
    class_counts = {
        CLASS_NAMES[s]: int((classes == s).sum()) for s in range(3)
    }
    probs = np.array([membership_probs(cfg.adoption, p) for p in population])
    expected_shares = {
        CLASS_NAMES[s]: float(probs[:, s].mean()) for s in range(3)
    }
    sample_counts = {
        STRATUM_ADOPTER: sum(1 for p in sample if p.stratum == STRATUM_ADOPTER),
        STRATUM_POPULATION: sum(
            1 for p in sample if p.stratum == STRATUM_POPULATION
        ),
    }
    sample_ids = {p.id for p in sample}
    doc = {
        "seed": cfg.seed,
        "n_persons": cfg.n_persons,
        "n_zones": cfg.n_zones,
        "horizon": cfg.horizon,
        "adoption": cfg.adoption.to_blocks(),
        "phi": cfg.adoption.phi,
        "dc": {
            "coefficients": dict(
                zip(DcParams.param_names(cfg.dc.hub_order), cfg.dc.to_vector())
            )
        },
        "population": {
            "n_adopters": n_adopters,
            "class_counts": class_counts,
            "expected_class_shares": expected_shares,
            "fractions": {
                STRATUM_ADOPTER: n_adopters / n,
                STRATUM_POPULATION: 1.0 - n_adopters / n,
            },
        },
        "sample": {"counts": sample_counts},
        "classes": {
            p.id: CLASS_NAMES[int(s)]
            for p, s in zip(population, classes)
            if p.id in sample_ids
        },
        "roles": {
            "downtown": network.roles.downtown,
            "airports": list(network.roles.airports),
        },
    }
    return doc


def generate(cfg: SynthConfig) -> SynthData:
    """Run the full generator pipeline in memory. One serial stream."""
    rng = np.random.default_rng(cfg.seed)
    network = _make_network(cfg, rng)
    proto_population = _make_population(cfg, network, rng)
    classes, month_of = _simulate_adoption(cfg, network, proto_population, rng)
    population = _stamp_population(proto_population, month_of)
    sample = _draw_sample(cfg, population, rng)
    trips = _make_trips(cfg, network, population, rng)
    truth = _truth_document(cfg, network, population, sample, classes)
    return SynthData(
        config=cfg,
        network=network,
        population=tuple(population),
        sample=tuple(sample),
        classes=classes,
        trips=tuple(trips),
        truth=truth,
    )


def generate_to_dir(cfg: SynthConfig, out_dir: str) -> dict[str, str]:
    """Generate and write the full artifact set; returns name -> path."""
    data = generate(cfg)
    paths = {
        "persons": os.path.join(out_dir, "persons.csv"),
        "zones": os.path.join(out_dir, "zones.csv"),
        "distances": os.path.join(out_dir, "distances.csv"),
        "supply": os.path.join(out_dir, "supply.csv"),
        "trips": os.path.join(out_dir, "trips.csv"),
        "series": os.path.join(out_dir, "adoption_series.csv"),
        "truth": os.path.join(out_dir, "truth.json"),
    }
    io.write_persons_csv(paths["persons"], data.sample)
    io.write_network(
        data.network, paths["zones"], paths["distances"], paths["supply"]
    )
    io.write_trips_csv(paths["trips"], data.trips)
    y = observed_cumulative_adopters(list(data.population), cfg.horizon)
    io.write_series_csv(paths["series"], AdoptionSeries(np.diff(y)))
    io.write_json(paths["truth"], data.truth)
    return paths
