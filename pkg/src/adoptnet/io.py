"""File codecs: CSV tables, JSON parameter bundles, and the run manifest.

Every writer is atomic (temp file in the destination directory, then
``os.replace``) so an interrupted run never leaves a truncated artifact.
CSVs are UTF-8 with a header row and '.' decimals regardless of locale;
floats are written with ``repr`` so reading them back is bit-exact. JSON
files are indented and key-sorted, which makes reruns byte-comparable.

Readers raise :class:`~adoptnet.model.InvalidInputError` naming the file,
line and column of the first offending cell.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .bass import AdoptionSeries, BassFit, BassParams
from .destination import AccessibilityField, DcFit, DcParams, Trip
from .forecast import Scenario
from .lccm import AdoptionParams, EmResult, FitStats
from .model import (
    InvalidInputError,
    NetworkTimeline,
    Person,
    Zone,
    ZoneRoles,
)

PERSON_COLUMNS = (
    "id",
    "home_zone",
    "income_k",
    "male",
    "tech_firm_employee",
    "stratum",
    "adoption_month",
)
ZONE_COLUMNS = ("id", "employment_density")
DISTANCE_COLUMNS = ("from_zone", "to_zone", "km")
SUPPLY_COLUMNS = ("zone", "facility_type", "activation_month")
TRIP_COLUMNS = ("person_id", "origin_zone", "dest_zone", "month")
ACCESS_COLUMNS = ("person_id", "month", "value", "covered_flag")
SERIES_COLUMNS = ("month", "new_adopters")
POSTERIOR_COLUMNS = ("person_id", "p_innovator", "p_imitator", "p_nonadopter")
FORECAST_COLUMNS = (
    "scenario",
    "month",
    "mean_S",
    "mean_Y",
    "q025",
    "q25",
    "q50",
    "q75",
    "q975",
)


# ---------------------------------------------------------------- plumbing


def _atomic_write(path: str, emit: Callable[[Any], None]) -> None:
    """Write via a temp file in the target directory, then rename."""
    target = os.path.abspath(path)
    d = os.path.dirname(target)
    if d:
        os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp.", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            emit(fh)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    def emit(fh):
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)

    _atomic_write(path, emit)


def _read_rows(path: str, header: Sequence[str]) -> list[dict[str, str]]:
    if not os.path.exists(path):
        raise InvalidInputError(f"input file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file, expected header {header}")
        if got != list(header):
            raise InvalidInputError(
                f"{path}:1: header {got} does not match expected {list(header)}"
            )
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append(dict(zip(header, row)))
        return rows


def _cell(path: str, line_no: int, col: str, raw: str, conv: Callable):
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise InvalidInputError(
            f"{path}:{line_no}: column {col!r}: cannot parse {raw!r}"
        )


def _py(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    return obj


def write_json(path: str, obj) -> None:
    def emit(fh):
        json.dump(_py(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")

    _atomic_write(path, emit)


def read_json(path: str):
    if not os.path.exists(path):
        raise InvalidInputError(f"input file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidInputError(
                f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}"
            )


# ------------------------------------------------------------------ persons


def write_persons_csv(path: str, persons: Sequence[Person]) -> None:
    rows = [
        (
            p.id,
            p.home_zone,
            repr(p.income_k),
            p.male,
            p.tech_firm_employee,
            p.stratum,
            "" if p.adoption_month is None else p.adoption_month,
        )
        for p in persons
    ]
    _write_csv(path, PERSON_COLUMNS, rows)


def read_persons_csv(path: str) -> list[Person]:
    persons = []
    for line_no, r in enumerate(_read_rows(path, PERSON_COLUMNS), start=2):
        month = r["adoption_month"].strip()
        persons.append(
            Person(
                id=r["id"],
                home_zone=r["home_zone"],
                income_k=_cell(path, line_no, "income_k", r["income_k"], float),
                male=_cell(path, line_no, "male", r["male"], int),
                tech_firm_employee=_cell(
                    path, line_no, "tech_firm_employee", r["tech_firm_employee"], int
                ),
                stratum=r["stratum"],
                adoption_month=(
                    None
                    if month == ""
                    else _cell(path, line_no, "adoption_month", month, int)
                ),
            )
        )
    if not persons:
        raise InvalidInputError(f"{path}: no person rows")
    return persons


# ------------------------------------------------------------------ network


def write_zones_csv(path: str, zones: Sequence[Zone]) -> None:
    _write_csv(
        path,
        ZONE_COLUMNS,
        [(z.id, repr(z.employment_density)) for z in zones],
    )


def write_distances_csv(path: str, network: NetworkTimeline) -> None:
    """Upper triangle only; the loader symmetrizes."""
    rows = []
    for i, a in enumerate(network.ids):
        for b in network.ids[i + 1 :]:
            rows.append((a, b, repr(network.distance(a, b))))
    _write_csv(path, DISTANCE_COLUMNS, rows)


def write_supply_csv(path: str, zones: Sequence[Zone]) -> None:
    rows = []
    for z in zones:
        if z.station_month is not None:
            rows.append((z.id, "station", z.station_month))
        if z.onstreet_month is not None:
            rows.append((z.id, "onstreet", z.onstreet_month))
    _write_csv(path, SUPPLY_COLUMNS, rows)


def write_network(
    network: NetworkTimeline, zones_path: str, distances_path: str, supply_path: str
) -> None:
    zones = [network.zones[zid] for zid in network.ids]
    write_zones_csv(zones_path, zones)
    write_distances_csv(distances_path, network)
    write_supply_csv(supply_path, zones)


def read_network(
    zones_path: str,
    distances_path: str,
    supply_path: str,
    horizon: int,
    roles: ZoneRoles = ZoneRoles(),
) -> NetworkTimeline:
    activation: dict[str, dict[str, Optional[int]]] = {}
    for line_no, r in enumerate(_read_rows(supply_path, SUPPLY_COLUMNS), start=2):
        fac = r["facility_type"]
        if fac not in ("station", "onstreet"):
            raise InvalidInputError(
                f"{supply_path}:{line_no}: column 'facility_type': "
                f"expected station or onstreet, got {fac!r}"
            )
        month = _cell(supply_path, line_no, "activation_month", r["activation_month"], int)
        slot = activation.setdefault(r["zone"], {"station": None, "onstreet": None})
        prior = slot[fac]
        slot[fac] = month if prior is None else min(prior, month)

    zones = []
    for line_no, r in enumerate(_read_rows(zones_path, ZONE_COLUMNS), start=2):
        act = activation.get(r["id"], {"station": None, "onstreet": None})
        zones.append(
            Zone(
                id=r["id"],
                employment_density=_cell(
                    zones_path, line_no, "employment_density", r["employment_density"], float
                ),
                station_month=act["station"],
                onstreet_month=act["onstreet"],
            )
        )
    known = {z.id for z in zones}
    for zid in activation:
        if zid not in known:
            raise InvalidInputError(
                f"{supply_path}: supply references unknown zone {zid!r}"
            )

    dist: dict[tuple[str, str], float] = {}
    for line_no, r in enumerate(_read_rows(distances_path, DISTANCE_COLUMNS), start=2):
        km = _cell(distances_path, line_no, "km", r["km"], float)
        dist[(r["from_zone"], r["to_zone"])] = km
    return NetworkTimeline(zones, dist, horizon, roles)


# -------------------------------------------------------------------- trips


def write_trips_csv(path: str, trips: Sequence[Trip]) -> None:
    _write_csv(
        path,
        TRIP_COLUMNS,
        [(t.person_id, t.origin_zone, t.dest_zone, t.month) for t in trips],
    )


def read_trips_csv(path: str) -> list[Trip]:
    trips = []
    for line_no, r in enumerate(_read_rows(path, TRIP_COLUMNS), start=2):
        trips.append(
            Trip(
                person_id=r["person_id"],
                origin_zone=r["origin_zone"],
                dest_zone=r["dest_zone"],
                month=_cell(path, line_no, "month", r["month"], int),
            )
        )
    if not trips:
        raise InvalidInputError(f"{path}: no trip rows")
    return trips


# ------------------------------------------------------------ accessibility


def write_accessibility_csv(path: str, field: AccessibilityField) -> None:
    values, covered = field.matrix()
    rows = []
    for i, pid in enumerate(field.person_ids):
        for t in range(1, field.horizon + 1):
            rows.append((pid, t, repr(float(values[i, t])), int(covered[i, t])))
    _write_csv(path, ACCESS_COLUMNS, rows)


def read_accessibility_csv(
    path: str,
) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Returns (person_ids, values, covered) with month t in column t."""
    cells: dict[str, dict[int, tuple[float, bool]]] = {}
    horizon = 0
    for line_no, r in enumerate(_read_rows(path, ACCESS_COLUMNS), start=2):
        t = _cell(path, line_no, "month", r["month"], int)
        v = _cell(path, line_no, "value", r["value"], float)
        c = _cell(path, line_no, "covered_flag", r["covered_flag"], int)
        cells.setdefault(r["person_id"], {})[t] = (v, bool(c))
        horizon = max(horizon, t)
    if not cells:
        raise InvalidInputError(f"{path}: no accessibility rows")
    ids = tuple(sorted(cells))
    values = np.zeros((len(ids), horizon + 1))
    covered = np.zeros((len(ids), horizon + 1), dtype=bool)
    for i, pid in enumerate(ids):
        for t, (v, c) in cells[pid].items():
            values[i, t] = v
            covered[i, t] = c
    return ids, values, covered


# ---------------------------------------------------------- adoption series


def write_series_csv(path: str, series: AdoptionSeries) -> None:
    _write_csv(
        path,
        SERIES_COLUMNS,
        [(t + 1, repr(float(s))) for t, s in enumerate(series.S)],
    )


def read_series_csv(path: str, y0: float = 0.0) -> AdoptionSeries:
    rows = _read_rows(path, SERIES_COLUMNS)
    parsed = []
    for line_no, r in enumerate(rows, start=2):
        m = _cell(path, line_no, "month", r["month"], int)
        s = _cell(path, line_no, "new_adopters", r["new_adopters"], float)
        parsed.append((m, s))
    parsed.sort()
    months = [m for m, _ in parsed]
    if months != list(range(1, len(months) + 1)):
        raise InvalidInputError(
            f"{path}: months must be 1..T without gaps, got {months[:8]}..."
        )
    return AdoptionSeries([s for _, s in parsed], y0=y0)


# ----------------------------------------------------------- parameter JSON


def dc_fit_to_dict(fit: DcFit) -> dict:
    return {
        "coefficients": dict(zip(fit.param_names, fit.params.to_vector())),
        "hub_ascs": dict(fit.params.asc),
        "covariance": fit.covariance,
        "std_errors": dict(zip(fit.param_names, fit.std_errors)),
        "t_stats": dict(zip(fit.param_names, fit.t_stats)),
        "loglik": fit.loglik,
        "loglik_null": fit.loglik_null,
        "rho_squared": fit.rho_squared,
        "n_trips": fit.n_trips,
        "n_params": fit.n_params,
        "converged": fit.converged,
        "n_iter": fit.n_iter,
    }


def write_dc_params_json(path: str, fit: DcFit) -> None:
    write_json(path, dc_fit_to_dict(fit))


def read_dc_params_json(path: str) -> DcParams:
    doc = read_json(path)
    try:
        coef = doc["coefficients"]
        return DcParams(
            beta_distance=float(coef["beta_distance"]),
            alpha_logsize=float(coef["alpha_logsize"]),
            delta_home=float(coef["delta_home"]),
            theta_onstreet=float(coef["theta_onstreet"]),
            gamma_tech_downtown=float(coef["gamma_tech_downtown"]),
            gamma_tech_airport=float(coef["gamma_tech_airport"]),
            asc={k: float(v) for k, v in doc.get("hub_ascs", {}).items()},
        )
    except KeyError as e:
        raise InvalidInputError(f"{path}: missing key {e.args[0]!r}")


def em_result_to_dict(res: EmResult, fit: Optional[FitStats] = None) -> dict:
    doc = {
        "params": res.params.to_blocks(),
        "phi": res.params.phi,
        "param_order": list(res.param_names),
        "covariance_diagonal": np.diag(res.covariance),
        # the diagonal is what reports consume; the bootstrap needs the
        # cross terms too
        "covariance": res.covariance,
        "std_errors": dict(zip(res.param_names, res.std_errors)),
        "t_stats": dict(zip(res.param_names, res.t_stats)),
        "loglik": res.loglik,
        "class_shares": {
            "innovator": res.class_shares[0],
            "imitator": res.class_shares[1],
            "nonadopter": res.class_shares[2],
        },
        "em": {
            "trajectory": res.trajectory,
            "n_iter": res.n_iter,
            "converged": res.converged,
            "restart": res.restart,
            "restart_logliks": res.restart_logliks,
            "degenerate": res.degenerate,
            "n_persons": res.n_persons,
            "n_obs": res.n_obs,
        },
    }
    if fit is not None:
        doc["fit"] = {
            "loglik": fit.loglik,
            "n_params": fit.n_params,
            "n_observations": fit.n_obs,
            "aic": fit.aic,
            "bic": fit.bic,
            "null_loglik": fit.null_loglik,
            "rho_bar_squared": fit.rho_bar_squared,
            "null_definition": fit.null_definition,
        }
    return doc


def write_adoption_params_json(
    path: str, res: EmResult, fit: Optional[FitStats] = None
) -> None:
    write_json(path, em_result_to_dict(res, fit))


def adoption_params_from_blocks(blocks: Mapping) -> AdoptionParams:
    try:
        mem, inn, imi = blocks["membership"], blocks["innovator"], blocks["imitator"]
        return AdoptionParams(
            mem_asc_imitator=float(mem["imitator"]["asc"]),
            mem_income_imitator=float(mem["imitator"]["income_k"]),
            mem_male_imitator=float(mem["imitator"]["male"]),
            mem_asc_nonadopter=float(mem["nonadopter"]["asc"]),
            mem_income_nonadopter=float(mem["nonadopter"]["income_k"]),
            mem_male_nonadopter=float(mem["nonadopter"]["male"]),
            inn_asc=float(inn["asc"]),
            inn_tech=float(inn["tech_firm"]),
            inn_station=float(inn["station_in_zone"]),
            inn_onstreet=float(inn["onstreet_in_zone"]),
            inn_access_covered=float(inn["access_covered"]),
            inn_access_uncovered=float(inn["access_uncovered"]),
            imi_asc=float(imi["asc"]),
            imi_tech=float(imi["tech_firm"]),
            imi_access_covered=float(imi["access_covered"]),
            imi_access_uncovered=float(imi["access_uncovered"]),
            imi_social_per100=float(imi["social_per100"]),
            non_asc=float(blocks["nonadopter"]["asc"]),
            phi=float(blocks["phi"]),
        )
    except KeyError as e:
        raise InvalidInputError(f"adoption params: missing key {e.args[0]!r}")


def read_adoption_params_json(path: str) -> AdoptionParams:
    doc = read_json(path)
    blocks = doc.get("params", doc)
    return adoption_params_from_blocks(blocks)


def write_posterior_csv(path: str, res: EmResult) -> None:
    rows = [
        (pid, repr(float(h[0])), repr(float(h[1])), repr(float(h[2])))
        for pid, h in zip(res.person_ids, res.posterior)
    ]
    _write_csv(path, POSTERIOR_COLUMNS, rows)


def read_posterior_csv(path: str) -> tuple[tuple[str, ...], np.ndarray]:
    ids, probs = [], []
    for line_no, r in enumerate(_read_rows(path, POSTERIOR_COLUMNS), start=2):
        ids.append(r["person_id"])
        probs.append(
            [
                _cell(path, line_no, c, r[c], float)
                for c in POSTERIOR_COLUMNS[1:]
            ]
        )
    return tuple(ids), np.array(probs)


def bass_fit_to_dict(fit: BassFit) -> dict:
    a, b, c = fit.coefficients
    return {
        "p": fit.params.p,
        "q": fit.params.q,
        "M": fit.params.M,
        "ols": {"a": a, "b": b, "c": c, "r_squared": fit.r_squared},
        "n_obs": fit.n_obs,
    }


def write_bass_params_json(path: str, fit: BassFit) -> None:
    write_json(path, bass_fit_to_dict(fit))


def read_bass_params_json(path: str) -> BassParams:
    doc = read_json(path)
    try:
        return BassParams(p=float(doc["p"]), q=float(doc["q"]), M=float(doc["M"]))
    except KeyError as e:
        raise InvalidInputError(f"{path}: missing key {e.args[0]!r}")


BASS_FORECAST_COLUMNS = ("month", "S", "Y")


def write_bass_forecast_csv(path: str, series: AdoptionSeries,
                            start_month: int = 1) -> None:
    y = series.Y
    rows = [
        [start_month + i, repr(float(series.S[i])), repr(float(y[i]))]
        for i in range(len(series))
    ]
    _write_csv(path, BASS_FORECAST_COLUMNS, rows)


def read_bass_forecast_csv(path: str) -> list[dict]:
    rows = []
    for line_no, r in enumerate(_read_rows(path, BASS_FORECAST_COLUMNS), start=2):
        rows.append(
            {
                "month": _cell(path, line_no, "month", r["month"], int),
                "S": _cell(path, line_no, "S", r["S"], float),
                "Y": _cell(path, line_no, "Y", r["Y"], float),
            }
        )
    return rows


# ----------------------------------------------------------------- forecast


def write_scenarios_json(path: str, scenarios: Sequence[Scenario]) -> None:
    write_json(path, [s.to_dict() for s in scenarios])


def read_scenarios_json(path: str) -> tuple[Scenario, ...]:
    doc = read_json(path)
    if isinstance(doc, Mapping):
        doc = doc.get("scenarios")
    if not isinstance(doc, list) or not doc:
        raise InvalidInputError(f"{path}: expected a non-empty scenario list")
    try:
        scenarios = tuple(Scenario.from_dict(d) for d in doc)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{path}: {e}")
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise InvalidInputError(f"{path}: duplicate scenario names")
    return scenarios


def write_forecast_csv(path: str, rows: Sequence[Mapping[str, object]]) -> None:
    out = []
    for r in rows:
        out.append(
            [
                r["scenario"],
                r["month"],
                *(repr(float(r[c])) for c in FORECAST_COLUMNS[2:]),
            ]
        )
    _write_csv(path, FORECAST_COLUMNS, out)


def read_forecast_csv(path: str) -> list[dict]:
    rows = []
    for line_no, r in enumerate(_read_rows(path, FORECAST_COLUMNS), start=2):
        row: dict[str, object] = {"scenario": r["scenario"]}
        row["month"] = _cell(path, line_no, "month", r["month"], int)
        for c in FORECAST_COLUMNS[2:]:
            row[c] = _cell(path, line_no, c, r[c], float)
        rows.append(row)
    return rows


CURVE_COLUMNS = ("curve", "month", "value")


def write_curves_csv(path: str, rows: Sequence[tuple[str, int, float]]) -> None:
    """Plot-ready long-format series: one (curve, month, value) per row."""
    _write_csv(
        path, CURVE_COLUMNS,
        [[c, m, repr(float(v))] for c, m, v in rows],
    )


def read_curves_csv(path: str) -> list[tuple[str, int, float]]:
    rows = []
    for line_no, r in enumerate(_read_rows(path, CURVE_COLUMNS), start=2):
        rows.append(
            (
                r["curve"],
                _cell(path, line_no, "month", r["month"], int),
                _cell(path, line_no, "value", r["value"], float),
            )
        )
    return rows


def write_text(path: str, text: str) -> None:
    """Atomic UTF-8 text write (same temp-and-rename policy as the CSVs)."""

    def emit(fh):
        fh.write(text)

    _atomic_write(path, emit)


# ----------------------------------------------------------------- manifest


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path: str,
    stage: str,
    inputs: Mapping[str, str],
    outputs: Mapping[str, str],
    seed: Optional[int] = None,
    options: Optional[Mapping] = None,
) -> None:
    """Record everything needed to reproduce a stage bit-identically:
    content hashes of inputs and outputs, the seed, and the code version."""
    doc = {
        "stage": stage,
        "version": __version__,
        "seed": seed,
        "inputs": {
            name: {"path": p, "sha256": file_sha256(p)} for name, p in inputs.items()
        },
        "outputs": {
            name: {"path": p, "sha256": file_sha256(p)} for name, p in outputs.items()
        },
        "options": dict(options or {}),
    }
    write_json(path, doc)
