"""Markdown report and plot-ready curve series from recorded artifacts.

Everything in the report is taken from the files on disk; derived figures
(AIC, BIC, adjusted rho-squared, the flow peak) are recomputed from the
recorded primitives rather than copied, so the document doubles as a check
that the stored numbers are internally consistent. Identical inputs yield
byte-identical output.
"""

import math
import os
from typing import Optional

import numpy as np

from . import io
from .bass import BassParams, bass_forecast, bass_peak_time, bass_simulate
from .lccm import fit_stats
from .model import InvalidInputError

DC_BASE_ORDER = (
    "beta_distance",
    "alpha_logsize",
    "delta_home",
    "theta_onstreet",
    "gamma_tech_downtown",
    "gamma_tech_airport",
)

MEMBERSHIP_ROWS = (
    ("constant", "asc"),
    ("monthly income ($1000)", "income_k"),
    ("male", "male"),
)

CLASS_TABLES = (
    (
        "Innovator adoption utility",
        "innovator",
        (
            ("constant", "asc", "inn_asc"),
            ("technology-firm employee", "tech_firm", "inn_tech"),
            ("station in home zone", "station_in_zone", "inn_station"),
            ("on-street parking in home zone", "onstreet_in_zone", "inn_onstreet"),
            ("accessibility, covered home", "access_covered", "inn_access_covered"),
            ("accessibility, uncovered home", "access_uncovered",
             "inn_access_uncovered"),
        ),
    ),
    (
        "Imitator adoption utility",
        "imitator",
        (
            ("constant", "asc", "imi_asc"),
            ("technology-firm employee", "tech_firm", "imi_tech"),
            ("accessibility, covered home", "access_covered", "imi_access_covered"),
            ("accessibility, uncovered home", "access_uncovered",
             "imi_access_uncovered"),
            ("cumulative adopters (per 100)", "social_per100", "imi_social_per100"),
        ),
    ),
    (
        "Non-adopter utility",
        "nonadopter",
        (("constant", "asc", "non_asc"),),
    ),
)


def _fmt(x, nd: int = 4) -> str:
    if x is None:
        return "-"
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.{nd}f}"


def _table(headers, rows) -> list[str]:
    out = ["| " + " | ".join(headers) + " |",
           "|" + "|".join("---" for _ in headers) + "|"]
    for r in rows:
        out.append("| " + " | ".join(str(c) for c in r) + " |")
    out.append("")
    return out


def _dc_section(doc: dict) -> list[str]:
    coef = doc["coefficients"]
    se = doc.get("std_errors", {})
    ts = doc.get("t_stats", {})
    names = [n for n in DC_BASE_ORDER if n in coef]
    names += sorted(n for n in coef if n not in DC_BASE_ORDER)
    rows = [
        (n, _fmt(coef[n]), _fmt(se.get(n)), _fmt(ts.get(n), 2)) for n in names
    ]
    lines = ["## Destination choice", ""]
    lines += _table(("parameter", "estimate", "std. error", "t-stat"), rows)
    lines.append(
        f"Log-likelihood {_fmt(doc['loglik'], 2)} against a null of "
        f"{_fmt(doc['loglik_null'], 2)} (rho-squared "
        f"{_fmt(doc['rho_squared'], 4)}) on {doc['n_trips']} trips."
    )
    lines.append("")
    return lines


def _adoption_section(doc: dict) -> list[str]:
    params = doc["params"]
    se = doc.get("std_errors", {})
    ts = doc.get("t_stats", {})
    lines = ["## Adoption model", ""]
    lines.append(f"Friction exponent of imputed accessibility: {doc['phi']}.")
    lines.append("")

    profile = doc.get("phi_profile")
    if profile:
        lines += _table(
            ("phi", "log-likelihood"),
            [(_fmt(g, 2), _fmt(ll, 4)) for g, ll in profile],
        )

    mem = params["membership"]
    rows = []
    for label, key in MEMBERSHIP_ROWS:
        row = [label]
        for cls in ("imitator", "nonadopter"):
            name = {
                "asc": f"mem_asc_{cls}",
                "income_k": f"mem_income_{cls}",
                "male": f"mem_male_{cls}",
            }[key]
            row.append(_fmt(mem[cls][key]))
            row.append(_fmt(ts.get(name), 2))
        rows.append(tuple(row))
    lines.append("### Class membership (innovator class normalized)")
    lines.append("")
    lines += _table(
        ("variable", "imitator", "t", "non-adopter", "t"), rows
    )

    for title, block, spec_rows in CLASS_TABLES:
        rows = [
            (label, _fmt(params[block][key]), _fmt(se.get(name)),
             _fmt(ts.get(name), 2))
            for label, key, name in spec_rows
        ]
        lines.append(f"### {title}")
        lines.append("")
        lines += _table(("variable", "estimate", "std. error", "t-stat"), rows)

    shares = doc.get("class_shares")
    if shares:
        lines.append(
            "Estimated class shares: "
            f"innovator {_fmt(shares['innovator'], 3)}, "
            f"imitator {_fmt(shares['imitator'], 3)}, "
            f"non-adopter {_fmt(shares['nonadopter'], 3)}."
        )
        lines.append("")

    em = doc.get("em")
    if em:
        status = "converged" if em.get("converged") else "stopped at max-iter"
        lines.append(
            f"EM {status} after {em['n_iter']} iterations "
            f"(best of {len(em.get('restart_logliks', []))} restarts, "
            f"final log-likelihood {_fmt(doc['loglik'], 4)})."
        )
        lines.append("")

    calib = doc.get("calibration")
    if calib:
        lines.append("### Calibration")
        lines.append("")
        lines.append(
            f"Common shift on the innovator and imitator constants: "
            f"{_fmt(calib['shift'], 6)}, matching {_fmt(calib['target'], 2)} "
            f"new adopters in month {calib['month']} "
            f"(achieved {_fmt(calib['predicted'], 4)})."
        )
        lines.append("")
    return lines


def _fit_row(label: str, loglik: float, k: int, n: int):
    st = fit_stats(loglik, k, n)
    return (
        label, _fmt(loglik, 2), k, n, _fmt(st.aic, 2), _fmt(st.bic, 2),
        _fmt(st.rho_bar_squared, 4),
    ), st


def _fit_section(doc: dict) -> list[str]:
    fit = doc.get("fit")
    if not fit:
        return []
    rows = []
    row, st = _fit_row("latent-class (3 classes)", fit["loglik"],
                       int(fit["n_params"]), int(fit["n_observations"]))
    rows.append(row)
    base = doc.get("mnl_baseline")
    if base:
        row, _ = _fit_row("binary logit baseline", base["loglik"],
                          int(base["n_params"]), int(base["n_obs"]))
        rows.append(row)
    lines = ["## Model fit", ""]
    lines += _table(
        ("model", "log-likelihood", "k", "N", "AIC", "BIC", "adj. rho-sq"),
        rows,
    )
    lines.append(f"Null model: {st.null_definition}.")
    lines.append("")
    return lines


def _bass_section(bass_doc: dict, forecast_rows: list[dict]) -> list[str]:
    p, q, m = bass_doc["p"], bass_doc["q"], bass_doc["M"]
    params = BassParams(p=p, q=q, M=m)
    lines = ["## Aggregate diffusion baseline", ""]
    ols = bass_doc.get("ols", {})
    lines += _table(
        ("p", "q", "M", "OLS R-squared"),
        [(_fmt(p, 4), _fmt(q, 4), _fmt(m, 1), _fmt(ols.get("r_squared"), 4))],
    )
    lines.append(
        f"Flow peak at t = ln(q/p)/(p+q) = {_fmt(bass_peak_time(params), 2)} "
        "months."
    )
    lines.append("")

    if forecast_rows:
        by_scenario = _forecast_by_scenario(forecast_rows)
        months = sorted({r["month"] for r in forecast_rows})
        # recover the installed base entering the window from the first row
        first = min(next(iter(by_scenario.values())), key=lambda r: r["month"])
        y0 = first["mean_Y"] - first["mean_S"]
        bass_y = bass_forecast(params, len(months), y0=min(y0, m)).Y
        lines.append("### Scenario comparison")
        lines.append("")
        lines.append(
            "The aggregate baseline has no supply levers, so its projection "
            "is identical across every scenario; the disaggregate model "
            "responds to the edits."
        )
        lines.append("")
        headers = ["month", "aggregate Y"] + [
            f"{name} mean Y" for name in by_scenario
        ]
        rows = []
        for i, month in enumerate(months):
            row = [month, _fmt(bass_y[i], 1)]
            for name in by_scenario:
                cell = next(
                    (r for r in by_scenario[name] if r["month"] == month), None
                )
                row.append(_fmt(cell["mean_Y"], 1) if cell else "-")
            rows.append(tuple(row))
        lines += _table(headers, rows)
    return lines


def _forecast_by_scenario(rows: list[dict]) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for r in rows:
        out.setdefault(r["scenario"], []).append(r)
    return {k: out[k] for k in sorted(out)}


def _forecast_section(rows: list[dict]) -> list[str]:
    if not rows:
        return []
    lines = ["## Forecast bands", ""]
    for name, rs in _forecast_by_scenario(rows).items():
        lines.append(f"### Scenario: {name}")
        lines.append("")
        lines += _table(
            ("month", "mean S", "mean Y", "2.5%", "25%", "50%", "75%", "97.5%"),
            [
                (
                    r["month"], _fmt(r["mean_S"], 2), _fmt(r["mean_Y"], 1),
                    _fmt(r["q025"], 1), _fmt(r["q25"], 1), _fmt(r["q50"], 1),
                    _fmt(r["q75"], 1), _fmt(r["q975"], 1),
                )
                for r in sorted(rs, key=lambda r: r["month"])
            ],
        )
    return lines


def _curves(series, bass_doc, forecast_rows) -> list[tuple[str, int, float]]:
    rows: list[tuple[str, int, float]] = []
    if series is not None:
        y = series.Y
        for i in range(len(series)):
            rows.append(("actual_S", i + 1, float(series.S[i])))
            rows.append(("actual_Y", i + 1, float(y[i])))
        if bass_doc is not None:
            params = BassParams(p=bass_doc["p"], q=bass_doc["q"], M=bass_doc["M"])
            fitted = bass_simulate(params, len(series), y0=series.y0)
            for i in range(len(series)):
                rows.append(("bass_S", i + 1, float(fitted.S[i])))
                rows.append(("bass_Y", i + 1, float(fitted.Y[i])))
    for name, rs in _forecast_by_scenario(forecast_rows).items():
        for r in sorted(rs, key=lambda r: r["month"]):
            rows.append((f"forecast_{name}_mean_Y", r["month"], r["mean_Y"]))
            rows.append((f"forecast_{name}_q50", r["month"], r["q50"]))
    return rows


def emit_report(
    out_dir: str,
    *,
    dc_params_path: Optional[str] = None,
    adoption_params_path: Optional[str] = None,
    bass_params_path: Optional[str] = None,
    forecast_path: Optional[str] = None,
    series_path: Optional[str] = None,
) -> dict[str, str]:
    """Write report.md (and adoption_curves.csv when there is anything to
    plot) from whichever artifacts are provided; absent inputs simply drop
    their sections. Returns name -> written path."""
    if not any((dc_params_path, adoption_params_path, bass_params_path,
                forecast_path, series_path)):
        raise InvalidInputError("report needs at least one input artifact")

    dc_doc = io.read_json(dc_params_path) if dc_params_path else None
    adoption_doc = (
        io.read_json(adoption_params_path) if adoption_params_path else None
    )
    bass_doc = io.read_json(bass_params_path) if bass_params_path else None
    forecast_rows = io.read_forecast_csv(forecast_path) if forecast_path else []
    series = io.read_series_csv(series_path) if series_path else None

    lines = ["# Adoption model report", ""]
    if dc_doc is not None:
        lines += _dc_section(dc_doc)
    if adoption_doc is not None:
        lines += _adoption_section(adoption_doc)
        lines += _fit_section(adoption_doc)
    if bass_doc is not None:
        lines += _bass_section(bass_doc, forecast_rows)
    lines += _forecast_section(forecast_rows)

    written: dict[str, str] = {}
    curve_rows = _curves(series, bass_doc, forecast_rows)
    if curve_rows:
        curves_path = os.path.join(out_dir, "adoption_curves.csv")
        io.write_curves_csv(curves_path, curve_rows)
        written["curves"] = curves_path
        lines.append(f"Plot-ready series: {os.path.basename(curves_path)}.")
        lines.append("")

    report_path = os.path.join(out_dir, "report.md")
    io.write_text(report_path, "\n".join(lines).rstrip("\n") + "\n")
    written["report"] = report_path
    return written
