"""Stage-based command line: each subcommand reads artifacts, runs one
pipeline stage, writes its outputs atomically plus a manifest, and prints a
short summary. Failures exit nonzero with a machine-readable JSON line on
stderr. Stages are independently runnable so intermediate artifacts cache
between runs.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import io
from . import report as report_mod
from .bass import BassFitError, bass_fit_ols, bass_forecast, bass_peak_time
from .destination import DcParams, accessibility_field, dc_estimate
from .forecast import (
    CalibrationError,
    bootstrap_forecast,
    calibrate_ascs,
    holdout_validate,
)
from .lccm import (
    AdoptionParams,
    EmConfig,
    EmMonotonicityError,
    em_estimate,
    fit_stats,
    mnl_baseline_estimate,
    phi_grid_search,
)
from .model import (
    InvalidInputError,
    InvalidStateError,
    SamplingWeights,
    ZoneRoles,
    observed_cumulative_adopters,
    weights_from_persons,
)
from .synthgen import SynthConfig, generate_to_dir

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

THREADS_ENV = "ADOPTNET_THREADS"


def _fail(stage: str, kind: str, exc: BaseException, code: int) -> int:
    doc = {"stage": stage, "error": kind, "message": str(exc)}
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def _say(*lines: str) -> None:
    for line in lines:
        print(line)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}")


def _parse_target(text: str) -> tuple[int, float]:
    """'month=30,adopters=141' -> (30, 141.0)"""
    parts = dict(
        kv.split("=", 1) for kv in text.split(",") if "=" in kv
    )
    if set(parts) != {"month", "adopters"}:
        raise InvalidInputError(
            f"calibration target must look like month=30,adopters=140, got {text!r}"
        )
    try:
        return int(parts["month"]), float(parts["adopters"])
    except ValueError:
        raise InvalidInputError(f"bad calibration target numbers in {text!r}")


def _roles(args) -> ZoneRoles:
    return ZoneRoles(
        tech_firm=args.tech_firm,
        downtown=args.downtown,
        airports=tuple(args.airports.split(",")) if args.airports else (),
    )


def _read_inputs(args):
    persons = io.read_persons_csv(args.persons)
    network = io.read_network(
        args.zones, args.distances, args.supply, args.horizon, roles=_roles(args)
    )
    return persons, network


def _read_weights(args, persons) -> SamplingWeights:
    if not getattr(args, "weights_config", None):
        return SamplingWeights.uniform()
    doc = io.read_json(args.weights_config)
    fractions = doc.get("population_fractions", doc)
    if not isinstance(fractions, dict) or not fractions:
        raise InvalidInputError(
            f"{args.weights_config}: expected population_fractions mapping"
        )
    return weights_from_persons(persons, {k: float(v) for k, v in fractions.items()})


def _read_posteriors(args):
    if not getattr(args, "posterior", None):
        return None
    ids, mat = io.read_posterior_csv(args.posterior)
    return {pid: mat[i] for i, pid in enumerate(ids)}


def _manifest_for(out_path: str) -> str:
    return out_path + ".manifest.json"


# ------------------------------------------------------------------ stages


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    doc = io.read_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{args.config}: expected a JSON object")
    known = {f for f in SynthConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise InvalidInputError(f"unknown synth config keys: {sorted(unknown)}")
    if "adoption" in doc:
        doc["adoption"] = io.adoption_params_from_blocks(doc["adoption"])
    if "dc" in doc:
        dc = doc["dc"]
        coef = dc.get("coefficients", dc)
        doc["dc"] = DcParams(
            beta_distance=float(coef["beta_distance"]),
            alpha_logsize=float(coef["alpha_logsize"]),
            delta_home=float(coef["delta_home"]),
            theta_onstreet=float(coef["theta_onstreet"]),
            gamma_tech_downtown=float(coef.get("gamma_tech_downtown", 0.0)),
            gamma_tech_airport=float(coef.get("gamma_tech_airport", 0.0)),
            asc={k: float(v) for k, v in dc.get("hub_ascs", {}).items()},
        )
    if "home_zone_weights" in doc and doc["home_zone_weights"] is not None:
        doc["home_zone_weights"] = tuple(doc["home_zone_weights"])
    if args.seed is not None:
        doc["seed"] = args.seed
    if "seed" not in doc:
        raise InvalidInputError("synth needs --seed or a seed in the config")
    cfg = SynthConfig(**doc)

    paths = generate_to_dir(cfg, args.out)
    truth = io.read_json(paths["truth"])
    manifest = os.path.join(args.out, "manifest.json")
    io.write_manifest(
        manifest, "synth",
        inputs={"config": args.config} if args.config else {},
        outputs=paths, seed=cfg.seed,
        options={"n_persons": cfg.n_persons, "n_zones": cfg.n_zones,
                 "horizon": cfg.horizon, "threads": args.threads},
    )
    _say(
        f"[synth] {cfg.n_persons} persons, {cfg.n_zones} zones, "
        f"{cfg.horizon} months -> {args.out}",
        f"[synth] adopters: {truth['population']['n_adopters']}, "
        f"sampled persons: {sum(truth['sample']['counts'].values())}",
        f"[synth] done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_estimate_dc(args) -> int:
    t0 = time.perf_counter()
    persons, network = _read_inputs(args)
    trips = io.read_trips_csv(args.trips)
    hubs = tuple(args.hubs.split(",")) if args.hubs else None
    fit = dc_estimate(trips, persons, network, hub_zones=hubs)
    io.write_dc_params_json(args.out, fit)
    io.write_manifest(
        _manifest_for(args.out), "estimate-dc",
        inputs={"persons": args.persons, "zones": args.zones,
                "distances": args.distances, "supply": args.supply,
                "trips": args.trips},
        outputs={"dc_params": args.out},
        options={"hubs": hubs, "horizon": args.horizon,
                 "threads": args.threads},
    )
    _say(
        f"[estimate-dc] loglik {fit.loglik:.2f} (null {fit.loglik_null:.2f}, "
        f"rho-sq {fit.rho_squared:.4f}) on {fit.n_trips} trips",
        "[estimate-dc] " + ", ".join(
            f"{n}={v:.4f}" for n, v in
            zip(fit.param_names, fit.params.to_vector())
        ),
        f"[estimate-dc] converged: {fit.converged} "
        f"({fit.n_iter} iterations), done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_compute_access(args) -> int:
    t0 = time.perf_counter()
    persons, network = _read_inputs(args)
    dc = io.read_dc_params_json(args.dc_params)
    field = accessibility_field(dc, persons, network, args.phi)
    io.write_accessibility_csv(args.out, field)
    io.write_manifest(
        _manifest_for(args.out), "compute-access",
        inputs={"persons": args.persons, "zones": args.zones,
                "distances": args.distances, "supply": args.supply,
                "dc_params": args.dc_params},
        outputs={"accessibility": args.out},
        options={"phi": args.phi, "horizon": args.horizon,
                 "threads": args.threads},
    )
    covered = float(field.covered_flags[:, 1:].mean())
    _say(
        f"[compute-access] {len(persons)} persons x {args.horizon} months "
        f"at phi={args.phi}",
        f"[compute-access] covered person-months: {covered:.1%}, "
        f"done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_estimate_lccm(args) -> int:
    t0 = time.perf_counter()
    persons, network = _read_inputs(args)
    weights = _read_weights(args, persons)
    if args.dc_params:
        dc = io.read_dc_params_json(args.dc_params)
    elif args.trips:
        trips = io.read_trips_csv(args.trips)
        dc = dc_estimate(trips, persons, network).params
    else:
        raise InvalidInputError("estimate-lccm needs --dc-params or --trips")

    grid = _float_list(args.phi_grid)
    if not grid:
        raise InvalidInputError("phi grid is empty")
    y = observed_cumulative_adopters(persons, network.horizon)
    cfg = EmConfig(n_restarts=args.restarts, seed=args.seed,
                   max_iter=args.max_iter)
    profile = None
    if len(grid) == 1:
        field = accessibility_field(dc, persons, network, grid[0])
        res = em_estimate(persons, field, weights, y_series=y, config=cfg)
    else:
        search = phi_grid_search(persons, network, dc, weights, grid,
                                 y_series=y, config=cfg)
        res = search.best
        profile = search.profile
        field = accessibility_field(dc, persons, network, search.best_phi)

    fit = fit_stats(res.loglik, len(res.param_names), res.n_obs)
    baseline = mnl_baseline_estimate(persons, field, weights, y_series=y)
    doc = io.em_result_to_dict(res, fit)
    if profile is not None:
        doc["phi_profile"] = [[g, ll] for g, ll in profile]
    doc["mnl_baseline"] = {
        "coefficients": dict(baseline.coefficients),
        "loglik": baseline.loglik,
        "n_params": len(baseline.param_names),
        "n_obs": baseline.n_obs,
        "converged": baseline.converged,
    }
    doc["weights"] = {k: weights.for_stratum(k) for k in sorted(weights.weights)}
    io.write_json(args.out, doc)
    posterior_out = args.posterior_out or os.path.join(
        os.path.dirname(os.path.abspath(args.out)), "posterior.csv"
    )
    io.write_posterior_csv(posterior_out, res)

    inputs = {"persons": args.persons, "zones": args.zones,
              "distances": args.distances, "supply": args.supply}
    if args.dc_params:
        inputs["dc_params"] = args.dc_params
    if args.trips:
        inputs["trips"] = args.trips
    if args.weights_config:
        inputs["weights_config"] = args.weights_config
    io.write_manifest(
        _manifest_for(args.out), "estimate-lccm", inputs=inputs,
        outputs={"adoption_params": args.out, "posterior": posterior_out},
        seed=args.seed,
        options={"phi_grid": grid, "restarts": args.restarts,
                 "max_iter": args.max_iter, "horizon": args.horizon,
                 "threads": args.threads},
    )
    shares = res.class_shares
    _say(
        f"[estimate-lccm] phi={res.params.phi}, loglik {res.loglik:.4f}, "
        f"AIC {fit.aic:.2f}, BIC {fit.bic:.2f}",
        f"[estimate-lccm] class shares: innovator {shares[0]:.3f}, "
        f"imitator {shares[1]:.3f}, non-adopter {shares[2]:.3f}",
        f"[estimate-lccm] EM converged: {res.converged} "
        f"({res.n_iter} iterations, restart {res.restart}), "
        f"done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_fit_bass(args) -> int:
    t0 = time.perf_counter()
    series = io.read_series_csv(args.series)
    fit = bass_fit_ols(series)
    io.write_bass_params_json(args.out, fit)
    io.write_manifest(
        _manifest_for(args.out), "fit-bass",
        inputs={"series": args.series}, outputs={"bass_params": args.out},
        options={"threads": args.threads},
    )
    p = fit.params
    _say(
        f"[fit-bass] p={p.p:.6f}, q={p.q:.6f}, M={p.M:.2f} "
        f"(OLS R-sq {fit.r_squared:.4f}, {fit.n_obs} months)",
        f"[fit-bass] flow peak at {bass_peak_time(p):.1f} months, "
        f"done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_forecast_bass(args) -> int:
    t0 = time.perf_counter()
    params = io.read_bass_params_json(args.params)
    series = bass_forecast(params, args.horizon, y0=args.y0)
    io.write_bass_forecast_csv(args.out, series, start_month=args.start_month)
    io.write_manifest(
        _manifest_for(args.out), "forecast-bass",
        inputs={"bass_params": args.params},
        outputs={"bass_forecast": args.out},
        options={"horizon": args.horizon, "y0": args.y0,
                 "start_month": args.start_month, "threads": args.threads},
    )
    _say(
        f"[forecast-bass] {args.horizon} months from installed base "
        f"{args.y0:.1f}: Y ends at {series.Y[-1]:.1f} of M={params.M:.1f}",
        f"[forecast-bass] done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    t0 = time.perf_counter()
    persons, network = _read_inputs(args)
    weights = _read_weights(args, persons)
    doc = io.read_json(args.params)
    params = io.adoption_params_from_blocks(doc["params"])
    dc = io.read_dc_params_json(args.dc_params)
    month, target = _parse_target(args.calibrate_to)
    result = calibrate_ascs(
        params, persons, network, target, month,
        dc_params=dc, weights=weights, posteriors=_read_posteriors(args),
    )
    doc["params"] = result.params.to_blocks()
    doc["calibration"] = {
        "shift": result.shift,
        "month": result.month,
        "target": result.target,
        "predicted": result.predicted,
        "n_iter": result.n_iter,
    }
    io.write_json(args.out, doc)
    inputs = {"params": args.params, "persons": args.persons,
              "zones": args.zones, "distances": args.distances,
              "supply": args.supply, "dc_params": args.dc_params}
    if args.posterior:
        inputs["posterior"] = args.posterior
    if args.weights_config:
        inputs["weights_config"] = args.weights_config
    io.write_manifest(
        _manifest_for(args.out), "calibrate", inputs=inputs,
        outputs={"adoption_params": args.out},
        options={"calibrate_to": args.calibrate_to, "horizon": args.horizon,
                 "threads": args.threads},
    )
    _say(
        f"[calibrate] shift {result.shift:+.6f} on both adoption constants",
        f"[calibrate] month {month}: predicted {result.predicted:.4f} vs "
        f"target {target:.4f}",
        f"[calibrate] done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_forecast(args) -> int:
    t0 = time.perf_counter()
    persons, network = _read_inputs(args)
    weights = _read_weights(args, persons)
    posteriors = _read_posteriors(args)
    doc = io.read_json(args.params)
    params = io.adoption_params_from_blocks(doc["params"])
    if "covariance" in doc:
        cov = np.asarray(doc["covariance"], dtype=float)
    else:
        cov = np.diag(np.asarray(doc["covariance_diagonal"], dtype=float))
    dc = io.read_dc_params_json(args.dc_params)
    scenarios = io.read_scenarios_json(args.scenarios)

    shift = None
    if args.calibrate_to:
        month, target = _parse_target(args.calibrate_to)
        result = calibrate_ascs(
            params, persons, network, target, month,
            dc_params=dc, weights=weights, posteriors=posteriors,
        )
        params = result.params
        shift = result.shift
        start_default = month + 1
    else:
        start_default = network.horizon + 1
    start = args.start_month or start_default
    if args.y_start is not None:
        y_start = args.y_start
    else:
        y = observed_cumulative_adopters(persons, network.horizon)
        y_start = float(y[min(start - 1, network.horizon)])

    results = bootstrap_forecast(
        params, cov, persons, network, scenarios, args.draws, args.seed,
        dc_params=dc, start_month=start, y_start=y_start, weights=weights,
        posteriors=posteriors, feedback=args.feedback, mode=args.mode,
    )
    rows = [row for r in results for row in r.rows()]
    io.write_forecast_csv(args.out, rows)
    inputs = {"params": args.params, "scenarios": args.scenarios,
              "persons": args.persons, "zones": args.zones,
              "distances": args.distances, "supply": args.supply,
              "dc_params": args.dc_params}
    if args.posterior:
        inputs["posterior"] = args.posterior
    if args.weights_config:
        inputs["weights_config"] = args.weights_config
    io.write_manifest(
        _manifest_for(args.out), "forecast", inputs=inputs,
        outputs={"forecast": args.out}, seed=args.seed,
        options={"draws": args.draws, "start_month": start,
                 "y_start": y_start, "feedback": args.feedback,
                 "mode": args.mode, "calibrate_to": args.calibrate_to,
                 "shift": shift, "horizon": args.horizon,
                 "threads": args.threads},
    )
    lines = [
        f"[forecast] {len(scenarios)} scenario(s), {args.draws} draws, "
        f"months {start}..{start + max(s.horizon for s in scenarios) - 1}"
    ]
    if shift is not None:
        lines.append(f"[forecast] calibration shift {shift:+.6f}")
    for r in results:
        lines.append(
            f"[forecast] {r.scenario}: mean Y ends at "
            f"{r.mean_cumulative[-1]:.1f} "
            f"[{r.q025[-1]:.1f}, {r.q975[-1]:.1f}]"
        )
    lines.append(f"[forecast] done in {time.perf_counter() - t0:.2f}s")
    _say(*lines)
    return EXIT_OK


def cmd_validate_holdout(args) -> int:
    t0 = time.perf_counter()
    persons, network = _read_inputs(args)
    weights = _read_weights(args, persons)
    dc = io.read_dc_params_json(args.dc_params)
    phi = args.phi
    grid = _float_list(args.phi_grid) if args.phi_grid else None
    res = holdout_validate(
        persons, network, weights, args.split, args.calibrate_month,
        args.horizon, dc_params=dc, phi=phi, phi_grid=grid,
        draws=args.draws, seed=args.seed,
        em_config=EmConfig(n_restarts=args.restarts, seed=args.seed,
                           max_iter=args.max_iter),
    )
    doc = {
        "split_month": res.split_month,
        "calibration_month": res.calib_month,
        "phi": res.phi,
        "em_loglik": res.em_loglik,
        "calibration": {
            "shift": res.calibration.shift,
            "target": res.calibration.target,
            "predicted": res.calibration.predicted,
        },
        "months": list(res.months),
        "actual_new": res.actual_new,
        "actual_cumulative": res.actual_cumulative,
        "coverage_iqr": res.coverage_iqr,
        "coverage_whiskers": res.coverage_whiskers,
        "in_iqr": list(res.in_iqr),
        "in_whiskers": list(res.in_whiskers),
        "forecast": res.forecast.rows(),
    }
    io.write_json(args.out, doc)
    inputs = {"persons": args.persons, "zones": args.zones,
              "distances": args.distances, "supply": args.supply,
              "dc_params": args.dc_params}
    if args.weights_config:
        inputs["weights_config"] = args.weights_config
    io.write_manifest(
        _manifest_for(args.out), "validate-holdout", inputs=inputs,
        outputs={"holdout": args.out}, seed=args.seed,
        options={"split": args.split, "calibrate_month": args.calibrate_month,
                 "horizon": args.horizon, "phi": phi, "phi_grid": grid,
                 "draws": args.draws, "restarts": args.restarts,
                 "threads": args.threads},
    )
    _say(
        f"[validate-holdout] estimated on months 1..{args.split}, "
        f"calibrated at {args.calibrate_month}, forecast "
        f"{res.months[0]}..{res.months[-1]}",
        f"[validate-holdout] actuals inside IQR: {sum(res.in_iqr)}/"
        f"{len(res.in_iqr)}, inside whiskers: {sum(res.in_whiskers)}/"
        f"{len(res.in_whiskers)}",
        f"[validate-holdout] done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


def cmd_report(args) -> int:
    t0 = time.perf_counter()
    written = report_mod.emit_report(
        args.out_dir,
        dc_params_path=args.dc_params,
        adoption_params_path=args.adoption_params,
        bass_params_path=args.bass_params,
        forecast_path=args.forecast,
        series_path=args.series,
    )
    inputs = {
        name: path
        for name, path in (
            ("dc_params", args.dc_params),
            ("adoption_params", args.adoption_params),
            ("bass_params", args.bass_params),
            ("forecast", args.forecast),
            ("series", args.series),
        )
        if path
    }
    io.write_manifest(
        os.path.join(args.out_dir, "manifest.json"), "report",
        inputs=inputs, outputs=written, options={"threads": args.threads},
    )
    _say(
        "[report] wrote " + ", ".join(sorted(written.values())),
        f"[report] done in {time.perf_counter() - t0:.2f}s",
    )
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--persons", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--distances", required=True)
    p.add_argument("--supply", required=True)
    p.add_argument("--horizon", type=int, required=True,
                   help="last observed month (censoring makes it non-inferable)")
    p.add_argument("--tech-firm", default=None, help="zone id of the tech firm")
    p.add_argument("--downtown", default=None, help="zone id of downtown")
    p.add_argument("--airports", default=None,
                   help="comma-separated airport zone ids")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="adoptnet",
        description="Estimate and forecast adoption of a spatially "
                    "networked transportation service.",
    )
    default_threads = int(os.environ.get(THREADS_ENV, "1"))
    sub = ap.add_subparsers(dest="command", required=True)

    def stage(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        p.add_argument("--threads", type=int, default=default_threads,
                       help="accepted for interface stability; stages are "
                            "deterministic at any value")
        return p

    p = stage("synth", cmd_synth, help="generate a synthetic data set")
    p.add_argument("--config", default=None, help="synth config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)

    p = stage("estimate-dc", cmd_estimate_dc,
              help="estimate the destination-choice model from trips")
    _add_network_flags(p)
    p.add_argument("--trips", required=True)
    p.add_argument("--hubs", default=None,
                   help="comma-separated hub zones with own constants")
    p.add_argument("--out", required=True)

    p = stage("compute-access", cmd_compute_access,
              help="materialize the per-person accessibility field")
    _add_network_flags(p)
    p.add_argument("--dc-params", required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--out", required=True)

    p = stage("estimate-lccm", cmd_estimate_lccm,
              help="estimate the three-class adoption model")
    _add_network_flags(p)
    p.add_argument("--dc-params", default=None)
    p.add_argument("--trips", default=None,
                   help="estimate destination choice inline when no "
                        "--dc-params is given")
    p.add_argument("--phi-grid", required=True,
                   help="comma-separated friction exponents to profile")
    p.add_argument("--weights-config", default=None,
                   help="JSON with population_fractions per stratum")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.add_argument("--posterior-out", default=None)

    p = stage("fit-bass", cmd_fit_bass,
              help="fit the aggregate diffusion baseline by OLS")
    p.add_argument("--series", required=True)
    p.add_argument("--out", required=True)

    p = stage("forecast-bass", cmd_forecast_bass,
              help="project the aggregate baseline forward")
    p.add_argument("--params", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--y0", type=float, default=0.0,
                   help="installed base entering the window")
    p.add_argument("--start-month", type=int, default=1)
    p.add_argument("--out", required=True)

    p = stage("calibrate", cmd_calibrate,
              help="shift adoption constants to match observed uptake")
    _add_network_flags(p)
    p.add_argument("--params", required=True)
    p.add_argument("--dc-params", required=True)
    p.add_argument("--calibrate-to", required=True,
                   help="month=<m>,adopters=<new adopters in that month>")
    p.add_argument("--weights-config", default=None)
    p.add_argument("--posterior", default=None)
    p.add_argument("--out", required=True)

    p = stage("forecast", cmd_forecast,
              help="bootstrap scenario forecasts")
    _add_network_flags(p)
    p.add_argument("--params", required=True)
    p.add_argument("--dc-params", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--calibrate-to", default=None)
    p.add_argument("--start-month", type=int, default=None)
    p.add_argument("--y-start", type=float, default=None)
    p.add_argument("--feedback", choices=("expected", "simulated"),
                   default="expected")
    p.add_argument("--mode", choices=("parametric", "resample"),
                   default="parametric")
    p.add_argument("--weights-config", default=None)
    p.add_argument("--posterior", default=None)
    p.add_argument("--out", required=True)

    p = stage("validate-holdout", cmd_validate_holdout,
              help="estimate early, forecast late, score the bands")
    _add_network_flags(p)
    p.add_argument("--dc-params", required=True)
    p.add_argument("--split", type=int, required=True)
    p.add_argument("--calibrate-month", type=int, required=True)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--phi-grid", default=None)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--weights-config", default=None)
    p.add_argument("--out", required=True)

    p = stage("report", cmd_report, help="emit the markdown report bundle")
    p.add_argument("--dc-params", default=None)
    p.add_argument("--adoption-params", default=None)
    p.add_argument("--bass-params", default=None)
    p.add_argument("--forecast", default=None)
    p.add_argument("--series", default=None)
    p.add_argument("--out-dir", required=True)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage_name = args.command
    try:
        return args.fn(args)
    except CalibrationError as e:
        return _fail(stage_name, "calibration-failure", e, EXIT_NUMERIC)
    except BassFitError as e:
        return _fail(stage_name, "bass-fit-failure", e, EXIT_NUMERIC)
    except EmMonotonicityError as e:
        return _fail(stage_name, "numeric-failure", e, EXIT_NUMERIC)
    except InvalidInputError as e:
        return _fail(stage_name, "invalid-input", e, EXIT_INPUT)
    except InvalidStateError as e:
        return _fail(stage_name, "invalid-state", e, EXIT_NUMERIC)
    except np.linalg.LinAlgError as e:
        return _fail(stage_name, "numeric-failure", e, EXIT_NUMERIC)
    except OSError as e:
        return _fail(stage_name, "io-error", e, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
