"""Dynamic latent-class adoption model.

Three confirmatory classes with hard-coded utility templates:

- innovators: adoption driven by supply in the home zone (station and
  on-street dummies) and accessibility, indifferent to how many people
  already adopted;
- imitators: adoption driven by accessibility and the lagged cumulative
  adopter count (social influence, per 100 adopters);
- non-adopters: a constant-only utility pinned deep in the negatives.

Class membership is an MNL on [1, income, male] with the innovator class
normalized to zero. A person's panel log-likelihood multiplies monthly
binary adoption choices over their risk set (adoption is absorbing), the
marginal likelihood mixes the three class panels with the membership
probabilities, and choice-based sampling weights multiply each person's
log contribution (WESML).

Estimation is EM. The E-step posterior is the standard unweighted one;
sampling weights enter the M-step objectives, which is the exact EM for the
weighted likelihood, so the weighted loglik trajectory is non-decreasing.
A switch moves the weights into the posterior itself for sensitivity runs;
that variant has no monotonicity guarantee.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .destination import AccessibilityField, accessibility_field
from .model import (
    InvalidInputError,
    Person,
    SamplingWeights,
    observed_cumulative_adopters,
    risk_months,
)
from .optimize import maximize

INNOVATOR, IMITATOR, NONADOPTER = 0, 1, 2
CLASS_NAMES = ("innovator", "imitator", "nonadopter")

NON_ASC_MIN = -30.0
NON_ASC_MAX = 0.0
PROB_FLOOR = 1e-300
PROB_CEIL = 1.0 - 1e-16
SOCIAL_SCALE = 100.0  # lagged cumulative adopters enter per 100


class DegenerateClassWarning(UserWarning):
    """A class lost all posterior mass during EM; the run is abandoned and
    the next restart takes over."""


class EmMonotonicityError(RuntimeError):
    """The weighted loglik trajectory decreased beyond numerical slack.
    With the exact EM this cannot happen; treat as a bug signal."""


@dataclass(frozen=True)
class AdoptionParams:
    """All free parameters of the adoption model, plus the friction
    exponent phi (fixed within an EM run, chosen by grid search).

    Membership coefficients for the innovator class are identically zero
    (identification normalization), so only imitator and non-adopter
    membership blocks appear here.
    """

    # membership MNL on [1, income_k, male]; innovator class normalized to 0
    mem_asc_imitator: float = 0.0
    mem_income_imitator: float = 0.0
    mem_male_imitator: float = 0.0
    mem_asc_nonadopter: float = 0.0
    mem_income_nonadopter: float = 0.0
    mem_male_nonadopter: float = 0.0
    # innovator adoption utility
    inn_asc: float = 0.0
    inn_tech: float = 0.0
    inn_station: float = 0.0
    inn_onstreet: float = 0.0
    inn_access_covered: float = 0.0
    inn_access_uncovered: float = 0.0
    # imitator adoption utility
    imi_asc: float = 0.0
    imi_tech: float = 0.0
    imi_access_covered: float = 0.0
    imi_access_uncovered: float = 0.0
    imi_social_per100: float = 0.0
    # non-adopter adoption utility (constant only)
    non_asc: float = 0.0
    # friction exponent for accessibility imputation
    phi: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise InvalidInputError(f"{f.name} must be finite, got {v}")
        if self.phi < 0:
            raise InvalidInputError(f"phi must be >= 0, got {self.phi}")

    @classmethod
    def param_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls) if f.name != "phi")

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.param_names()])

    @classmethod
    def from_vector(cls, x: np.ndarray, phi: float) -> "AdoptionParams":
        names = cls.param_names()
        if len(x) != len(names):
            raise InvalidInputError(
                f"parameter vector length {len(x)} != {len(names)}"
            )
        kw = {n: float(v) for n, v in zip(names, x)}
        return cls(phi=float(phi), **kw)

    def replace(self, **kw) -> "AdoptionParams":
        return replace(self, **kw)

    def to_blocks(self) -> dict:
        """Grouped view for reporting and serialization."""
        return {
            "membership": {
                "imitator": {
                    "asc": self.mem_asc_imitator,
                    "income_k": self.mem_income_imitator,
                    "male": self.mem_male_imitator,
                },
                "nonadopter": {
                    "asc": self.mem_asc_nonadopter,
                    "income_k": self.mem_income_nonadopter,
                    "male": self.mem_male_nonadopter,
                },
            },
            "innovator": {
                "asc": self.inn_asc,
                "tech_firm": self.inn_tech,
                "station_in_zone": self.inn_station,
                "onstreet_in_zone": self.inn_onstreet,
                "access_covered": self.inn_access_covered,
                "access_uncovered": self.inn_access_uncovered,
            },
            "imitator": {
                "asc": self.imi_asc,
                "tech_firm": self.imi_tech,
                "access_covered": self.imi_access_covered,
                "access_uncovered": self.imi_access_uncovered,
                "social_per100": self.imi_social_per100,
            },
            "nonadopter": {"asc": self.non_asc},
            "phi": self.phi,
        }


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # exp(-|v|) never overflows; both branches reduce to the textbook form
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0, e) / (1.0 + e)


def adoption_prob(v_adopt) -> np.ndarray | float:
    """Binary-logit adoption probability, clipped away from 0 and 1 so its
    log stays finite."""
    v = np.asarray(v_adopt, dtype=float)
    p = np.clip(_sigmoid(v), PROB_FLOOR, PROB_CEIL)
    return p if p.ndim else float(p)


def _membership_matrix(params: AdoptionParams, z: np.ndarray) -> np.ndarray:
    """Utilities (n, 3) of the membership MNL for design z = [1, income, male]."""
    v = np.zeros((z.shape[0], 3))
    v[:, IMITATOR] = z @ np.array(
        [params.mem_asc_imitator, params.mem_income_imitator, params.mem_male_imitator]
    )
    v[:, NONADOPTER] = z @ np.array(
        [
            params.mem_asc_nonadopter,
            params.mem_income_nonadopter,
            params.mem_male_nonadopter,
        ]
    )
    return v


def _log_softmax(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=1, keepdims=True)
    return v - m - np.log(np.exp(v - m).sum(axis=1, keepdims=True))


def membership_probs(params: AdoptionParams, person: Person) -> np.ndarray:
    """P(class | person) over (innovator, imitator, non-adopter), clipped
    strictly inside (0,1) so logs stay finite; the sum stays within 1e-12
    of one."""
    z = np.array([[1.0, person.income_k, float(person.male)]])
    p = np.exp(_log_softmax(_membership_matrix(params, z)))[0]
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def adoption_utility(
    params: AdoptionParams,
    person: Person,
    access_value: float,
    covered_flag: bool,
    y_prev: float,
    station_home: float = 0.0,
    onstreet_home: float = 0.0,
) -> np.ndarray:
    """Class-specific systematic utilities of adopting this month.

    The not-adopt utility is fixed at zero for every class. ``station_home``
    and ``onstreet_home`` are the supply dummies of the person's home zone
    at the month in question; ``y_prev`` is the cumulative adopter count
    entering the month.
    """
    if y_prev < 0:
        raise InvalidInputError(f"Y_prev must be >= 0, got {y_prev}")
    tech = float(person.tech_firm_employee)
    acc_c = access_value if covered_flag else 0.0
    acc_u = 0.0 if covered_flag else access_value
    v1 = (
        params.inn_asc
        + tech * params.inn_tech
        + station_home * params.inn_station
        + onstreet_home * params.inn_onstreet
        + acc_c * params.inn_access_covered
        + acc_u * params.inn_access_uncovered
    )
    v2 = (
        params.imi_asc
        + tech * params.imi_tech
        + acc_c * params.imi_access_covered
        + acc_u * params.imi_access_uncovered
        + (y_prev / SOCIAL_SCALE) * params.imi_social_per100
    )
    return np.array([v1, v2, params.non_asc])


def _check_y_series(y_series, horizon: int) -> np.ndarray:
    y = np.asarray(y_series, dtype=float)
    if y.ndim != 1 or y.size < horizon + 1:
        raise InvalidInputError(
            f"Y series must cover months 0..{horizon} (need {horizon + 1} "
            f"entries, got {y.size})"
        )
    if y[0] != 0:
        raise InvalidInputError(f"Y(0) must be 0, got {y[0]}")
    if (np.diff(y) < -1e-9).any():
        raise InvalidInputError("cumulative adopters must be non-decreasing")
    return y


class PanelData:
    """Flattened person-month design for the three class templates.

    Rows are person-major and month-ordered; ``offsets`` marks each person's
    first row for segment reductions. Covariates are fixed for a given
    (field, Y series) pair, so everything here is computed once per EM run.
    """

    N_PARAMS = len(AdoptionParams.param_names())

    def __init__(
        self,
        persons: Sequence[Person],
        acc_field: AccessibilityField,
        y_series,
    ) -> None:
        if not persons:
            raise InvalidInputError("need at least one person")
        self.persons = sorted(persons, key=lambda p: p.id)
        ids = [p.id for p in self.persons]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate person ids")
        self.person_ids = tuple(ids)
        network = acc_field.network
        horizon = acc_field.horizon
        self.horizon = horizon
        y = _check_y_series(y_series, horizon)
        self.y_series = y

        n = len(self.persons)
        t_n = np.array([risk_months(p, horizon) for p in self.persons])
        self.t_n = t_n
        self.offsets = np.concatenate([[0], np.cumsum(t_n)[:-1]])
        r = int(t_n.sum())
        self.n_rows = r

        row_person = np.repeat(np.arange(n), t_n)
        row_month = np.concatenate([np.arange(1, t + 1) for t in t_n])
        self.row_person = row_person
        self.row_month = row_month
        self.y_adopt = np.zeros(r)
        adopt_rows = np.array(
            [
                self.offsets[i] + self.persons[i].adoption_month - 1
                for i in range(n)
                if self.persons[i].adoption_month is not None
            ],
            dtype=int,
        )
        if adopt_rows.size:
            self.y_adopt[adopt_rows] = 1.0
        self.adopted = np.array(
            [p.adoption_month is not None for p in self.persons], dtype=float
        )

        # supply dummies of the home zone, per month
        zone_station = np.zeros((len(network.ids), horizon + 1))
        zone_onstreet = np.zeros((len(network.ids), horizon + 1))
        for zi, zid in enumerate(network.ids):
            z = network.zones[zid]
            for t in range(1, horizon + 1):
                zone_station[zi, t] = 1.0 if z.has_station(t) else 0.0
                zone_onstreet[zi, t] = 1.0 if z.has_onstreet(t) else 0.0
        home_idx = np.array([network.index[p.home_zone] for p in self.persons])
        station = zone_station[home_idx[row_person], row_month]
        onstreet = zone_onstreet[home_idx[row_person], row_month]

        # accessibility values in the field's own person order
        fidx = {pid: i for i, pid in enumerate(acc_field.person_ids)}
        missing = [pid for pid in ids if pid not in fidx]
        if missing:
            raise InvalidInputError(
                f"persons absent from the accessibility field: {missing[:3]}"
            )
        fi = np.array([fidx[pid] for pid in ids])
        acc = acc_field.values[fi[row_person], row_month]
        cov = acc_field.covered_flags[fi[row_person], row_month].astype(float)
        acc_c = acc * cov
        acc_u = acc * (1.0 - cov)

        tech = np.array([float(p.tech_firm_employee) for p in self.persons])
        ones = np.ones(r)
        self.X1 = np.column_stack(
            [ones, tech[row_person], station, onstreet, acc_c, acc_u]
        )
        self.X2 = np.column_stack(
            [
                ones,
                tech[row_person],
                acc_c,
                acc_u,
                y[row_month - 1] / SOCIAL_SCALE,
            ]
        )
        self.Z = np.column_stack(
            [
                np.ones(n),
                np.array([p.income_k for p in self.persons]),
                np.array([float(p.male) for p in self.persons]),
            ]
        )

    def weights_vector(self, weights: SamplingWeights) -> np.ndarray:
        return np.array([weights.for_person(p) for p in self.persons])

    def _segment_sum(self, rows: np.ndarray) -> np.ndarray:
        return np.add.reduceat(rows, self.offsets, axis=0)

    def class_pass(self, x: np.ndarray, beta: np.ndarray):
        """Per-person panel loglik and per-row residual for one class's
        binary logit with design ``x``."""
        v = x @ beta
        # share one exp: logaddexp(0, v) = max(v, 0) + log1p(exp(-|v|))
        e = np.exp(-np.abs(v))
        ll_rows = self.y_adopt * v - (np.maximum(v, 0.0) + np.log1p(e))
        resid = self.y_adopt - np.where(v >= 0, 1.0, e) / (1.0 + e)
        return self._segment_sum(ll_rows), resid

    def class3_loglik(self, lam: float) -> np.ndarray:
        return self.adopted * lam - self.t_n * np.logaddexp(0.0, lam)

    def person_logliks(self, params: AdoptionParams) -> np.ndarray:
        """(n, 3) panel loglik per class."""
        beta1 = np.array(
            [
                params.inn_asc,
                params.inn_tech,
                params.inn_station,
                params.inn_onstreet,
                params.inn_access_covered,
                params.inn_access_uncovered,
            ]
        )
        beta2 = np.array(
            [
                params.imi_asc,
                params.imi_tech,
                params.imi_access_covered,
                params.imi_access_uncovered,
                params.imi_social_per100,
            ]
        )
        l1, _ = self.class_pass(self.X1, beta1)
        l2, _ = self.class_pass(self.X2, beta2)
        l3 = self.class3_loglik(params.non_asc)
        return np.column_stack([l1, l2, l3])

    def mixture(self, params: AdoptionParams):
        """log membership (n,3), class logliks (n,3), person mixture loglik
        (n,), posterior (n,3)."""
        logp = _log_softmax(_membership_matrix(params, self.Z))
        l = self.person_logliks(params)
        joint = logp + l
        m = joint.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(joint - m).sum(axis=1))
        h = np.exp(joint - lse[:, None])
        return logp, l, lse, h

    def gradient_rows(self, params: AdoptionParams):
        """Per-person gradient (n, 18) of ln of the person's mixture
        likelihood, plus the mixture pieces (for reuse)."""
        logp, l, lse, h = self.mixture(params)
        p_mem = np.exp(logp)
        beta1 = params.to_vector()[6:12]
        beta2 = params.to_vector()[12:17]
        _, resid1 = self.class_pass(self.X1, beta1)
        _, resid2 = self.class_pass(self.X2, beta2)
        g = np.zeros((self.Z.shape[0], self.N_PARAMS))
        # membership blocks: (h_s - P_s) z for s = imitator, nonadopter
        g[:, 0:3] = (h[:, IMITATOR] - p_mem[:, IMITATOR])[:, None] * self.Z
        g[:, 3:6] = (h[:, NONADOPTER] - p_mem[:, NONADOPTER])[:, None] * self.Z
        # class blocks: h_s * sum_t (y - p) x
        g[:, 6:12] = h[:, INNOVATOR][:, None] * self._segment_sum(
            self.X1 * resid1[:, None]
        )
        g[:, 12:17] = h[:, IMITATOR][:, None] * self._segment_sum(
            self.X2 * resid2[:, None]
        )
        p3 = _sigmoid(np.array([params.non_asc]))[0]
        g[:, 17] = h[:, NONADOPTER] * (self.adopted - self.t_n * p3)
        return g, (logp, l, lse, h)


def panel_class_loglik(
    params: AdoptionParams,
    person: Person,
    acc_field: AccessibilityField,
    y_series,
) -> np.ndarray:
    """Per-class log-likelihood of one person's observed panel."""
    data = PanelData([person], acc_field, y_series)
    return data.person_logliks(params)[0]


def weighted_loglik(
    params: AdoptionParams,
    persons: Sequence[Person],
    weights: SamplingWeights,
    acc_field: AccessibilityField,
    y_series,
) -> float:
    """Choice-based-sampling weighted mixture log-likelihood:
    sum_n w_n ln sum_s P(s|z_n) exp(panel loglik of n under s)."""
    data = PanelData(persons, acc_field, y_series)
    w = data.weights_vector(weights)
    _, _, lse, _ = data.mixture(params)
    return float(w @ lse)


def weighted_loglik_gradient(
    params: AdoptionParams,
    persons: Sequence[Person],
    weights: SamplingWeights,
    acc_field: AccessibilityField,
    y_series,
) -> np.ndarray:
    data = PanelData(persons, acc_field, y_series)
    w = data.weights_vector(weights)
    g, _ = data.gradient_rows(params)
    return w @ g


@dataclass
class EmConfig:
    tol: float = 1e-7
    max_iter: int = 2000
    n_restarts: int = 5
    seed: int = 0
    jitter: float = 0.1
    min_class_mass: float = 1e-3
    weights_in_posterior: bool = False
    monotone_slack: float = 1e-9
    m_step_gtol: float = 1e-7
    m_step_max_iter: int = 60


@dataclass
class EmResult:
    params: AdoptionParams
    posterior: np.ndarray
    person_ids: tuple[str, ...]
    loglik: float
    trajectory: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    param_names: tuple[str, ...]
    class_shares: np.ndarray
    n_iter: int
    converged: bool
    restart: int
    degenerate: bool
    n_persons: int
    n_obs: int
    restart_logliks: tuple[float, ...]


def _m_step_membership(data, h, w, tau0, cfg, h0=None):
    z, n = data.Z, data.Z.shape[0]
    wh = w[:, None] * h

    def fg(tau):
        params_like = tau.reshape(2, 3)
        v = np.zeros((n, 3))
        v[:, IMITATOR] = z @ params_like[0]
        v[:, NONADOPTER] = z @ params_like[1]
        logp = _log_softmax(v)
        f = float(np.sum(wh * logp))
        p = np.exp(logp)
        wsum = w[:, None] * (h - p)
        g = np.concatenate([z.T @ wsum[:, IMITATOR], z.T @ wsum[:, NONADOPTER]])
        return f, g

    res = maximize(
        fg, tau0, gtol=cfg.m_step_gtol, max_iter=cfg.m_step_max_iter, h0=h0
    )
    return res.x, res.h_inv


def _m_step_class(data, x, obs_w_person, beta0, cfg, h0=None):
    row_w = obs_w_person[data.row_person]

    def fg(beta):
        v = x @ beta
        e = np.exp(-np.abs(v))
        ll = data.y_adopt * v - (np.maximum(v, 0.0) + np.log1p(e))
        f = float(row_w @ ll)
        sig = np.where(v >= 0, 1.0, e) / (1.0 + e)
        g = x.T @ (row_w * (data.y_adopt - sig))
        return f, g

    res = maximize(
        fg, beta0, gtol=cfg.m_step_gtol, max_iter=cfg.m_step_max_iter, h0=h0
    )
    return res.x, res.h_inv


def _m_step_nonadopter(data, obs_w_person) -> float:
    num = float(obs_w_person @ data.adopted)
    den = float(obs_w_person @ data.t_n)
    if den <= 0 or num <= 0:
        return NON_ASC_MIN
    p_hat = min(num / den, 1.0 - 1e-12)
    lam = float(np.log(p_hat / (1.0 - p_hat)))
    return float(np.clip(lam, NON_ASC_MIN, NON_ASC_MAX))


def _moment_init(data, w: np.ndarray, phi: float) -> AdoptionParams:
    """Aggregate-hazard starting point. A zero start puts every class at
    p = 0.5 per month, orders of magnitude off any real panel, and EM paths
    from there stall in poor basins; intercepts matched to crude moments
    start the climb inside the right likelihood region."""
    total_w = float(w.sum())
    events = float(w @ data.adopted)
    exposure = float(w @ data.t_n)
    h_bar = min(max(events / max(exposure, 1.0), 1e-4), 0.4)
    never = min(max(1.0 - events / max(total_w, 1.0), 0.05), 0.95)
    p_inn = 0.4 * (1.0 - never)
    p_imi = 0.6 * (1.0 - never)

    def logit(p: float) -> float:
        return float(np.log(p / (1.0 - p)))

    theta = np.zeros(PanelData.N_PARAMS)
    theta[0] = float(np.log(p_imi / p_inn))
    theta[3] = float(np.log(never / p_inn))
    theta[6] = logit(min(3.0 * h_bar, 0.45))  # innovators adopt early
    theta[12] = logit(h_bar)
    theta[17] = max(logit(h_bar) - 4.0, NON_ASC_MIN)
    return AdoptionParams.from_vector(theta, phi)


def _em_single_run(data, w, phi, init, cfg, rng, base=None) -> dict:
    if init is not None:
        theta = init.to_vector()
    else:
        # explore around the moment init; intercepts get proportionally
        # wider jitter so restarts can cross basin boundaries
        theta = (base if base is not None else _moment_init(data, w, phi)).to_vector()
        scale = np.maximum(np.abs(theta), 1.0)
        theta = theta + rng.normal(0.0, cfg.jitter, size=theta.size) * scale
        theta[17] = min(theta[17], 0.0)
    params = AdoptionParams.from_vector(theta, phi)

    # M-step observation weights are normalized by total mass so the
    # parameter path is invariant to scaling every weight by a constant
    # (the argmax of each weighted fit is unchanged by that scaling)
    w_norm = w / w.sum()
    curv = {"tau": None, "b1": None, "b2": None}

    trajectory = []
    converged = False
    degenerate = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        logp, l, lse, h = data.mixture(params)
        if cfg.weights_in_posterior:
            joint = w[:, None] * (logp + l)
            m = joint.max(axis=1, keepdims=True)
            h = np.exp(joint - m)
            h /= h.sum(axis=1, keepdims=True)
        ll = float(w @ lse)
        if trajectory:
            drop = trajectory[-1] - ll
            if drop > cfg.monotone_slack:
                if cfg.weights_in_posterior:
                    warnings.warn(
                        f"weighted loglik decreased by {drop:.3e} at "
                        f"iteration {it} (expected: weights-in-posterior "
                        "variant has no monotone guarantee)",
                        UserWarning,
                    )
                else:
                    raise EmMonotonicityError(
                        f"weighted loglik decreased by {drop:.3e} at "
                        f"iteration {it}"
                    )
            if abs(ll - trajectory[-1]) < cfg.tol:
                trajectory.append(ll)
                converged = True
                break
        trajectory.append(ll)

        mass = h.max(axis=0)
        if (mass < cfg.min_class_mass).any():
            empty = [CLASS_NAMES[s] for s in range(3) if mass[s] < cfg.min_class_mass]
            warnings.warn(
                f"class(es) {empty} lost posterior mass "
                f"(max < {cfg.min_class_mass}); abandoning this start",
                DegenerateClassWarning,
            )
            degenerate = True
            break

        vec = params.to_vector()
        tau, curv["tau"] = _m_step_membership(
            data, h, w_norm, vec[0:6], cfg, h0=curv["tau"]
        )
        beta1, curv["b1"] = _m_step_class(
            data, data.X1, w_norm * h[:, INNOVATOR], vec[6:12], cfg, h0=curv["b1"]
        )
        beta2, curv["b2"] = _m_step_class(
            data, data.X2, w_norm * h[:, IMITATOR], vec[12:17], cfg, h0=curv["b2"]
        )
        lam = _m_step_nonadopter(data, w_norm * h[:, NONADOPTER])
        params = AdoptionParams.from_vector(
            np.concatenate([tau, beta1, beta2, [lam]]), phi
        )

    _, _, lse, h = data.mixture(params)
    ll_final = float(w @ lse)
    if not trajectory or ll_final != trajectory[-1]:
        # loop left via max_iter with one M-step past the last recorded value
        trajectory.append(ll_final)
    return {
        "params": params,
        "loglik": ll_final,
        "posterior": h,
        "trajectory": np.array(trajectory),
        "n_iter": it,
        "converged": converged,
        "degenerate": degenerate,
    }


def em_estimate(
    persons: Sequence[Person],
    acc_field: AccessibilityField,
    weights: SamplingWeights,
    y_series=None,
    init: Optional[AdoptionParams] = None,
    config: Optional[EmConfig] = None,
) -> EmResult:
    """EM estimation of the three-class adoption model.

    ``y_series`` defaults to the observed cumulative adopter counts of
    ``persons`` (the adopter stratum holds every adopter, so raw counts are
    population counts). Restart 0 starts from ``init`` (or the aggregate
    moment init); further restarts jitter around that base. The best final
    weighted loglik wins; degenerate runs lose to any healthy run.
    """
    cfg = config or EmConfig()
    if y_series is None:
        y_series = observed_cumulative_adopters(persons, acc_field.horizon)
    data = PanelData(persons, acc_field, y_series)
    w = data.weights_vector(weights)

    base = _moment_init(data, w, acc_field.phi)
    runs = []
    for r in range(max(cfg.n_restarts, 1)):
        rng = np.random.default_rng([cfg.seed, r])
        run_init = init if r == 0 else None
        if r == 0 and init is None:
            run_init = base
        run = _em_single_run(data, w, acc_field.phi, run_init, cfg, rng, base=base)
        run["restart"] = r
        runs.append(run)

    healthy = [r for r in runs if not r["degenerate"]]
    pool = healthy if healthy else runs
    if not healthy:
        warnings.warn(
            "every restart degenerated; returning the best degenerate run",
            DegenerateClassWarning,
        )
    best = max(pool, key=lambda r: r["loglik"])

    params = best["params"]
    g, (_, _, _, h) = data.gradient_rows(params)
    gw = w[:, None] * g
    opg = gw.T @ gw
    cov = np.linalg.pinv(opg)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    theta = params.to_vector()
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, theta / se, np.nan)
    shares = (w[:, None] * h).sum(axis=0) / w.sum()

    return EmResult(
        params=params,
        posterior=best["posterior"],
        person_ids=data.person_ids,
        loglik=best["loglik"],
        trajectory=best["trajectory"],
        covariance=cov,
        std_errors=se,
        t_stats=t,
        param_names=AdoptionParams.param_names(),
        class_shares=shares,
        n_iter=best["n_iter"],
        converged=best["converged"],
        restart=best["restart"],
        degenerate=best["degenerate"],
        n_persons=len(data.persons),
        n_obs=data.n_rows,
        restart_logliks=tuple(r["loglik"] for r in runs),
    )


@dataclass
class PhiSearchResult:
    best_phi: float
    profile: tuple[tuple[float, float], ...]
    best: EmResult
    results: tuple[EmResult, ...]


def phi_grid_search(
    persons: Sequence[Person],
    network,
    dc_params,
    weights: SamplingWeights,
    grid: Sequence[float],
    y_series=None,
    init: Optional[AdoptionParams] = None,
    config: Optional[EmConfig] = None,
) -> PhiSearchResult:
    """Estimate the adoption model for each friction exponent in ``grid``
    and keep the phi with the best final weighted loglik (ties favor the
    smaller phi). Each grid point rebuilds the accessibility field.

    After the independent fits, every other grid point is re-polished from
    the winning point's solution. Without that pass the profile can compare
    different local optima across phi values, and the selection then
    reflects restart luck rather than the data."""
    if len(grid) == 0:
        raise InvalidInputError("phi grid must be non-empty")
    if any(p < 0 for p in grid):
        raise InvalidInputError("phi values must be >= 0")
    cfg = config or EmConfig()
    fields = {}
    results = []
    for phi in grid:
        fields[phi] = accessibility_field(dc_params, persons, network, phi)
        results.append(
            em_estimate(persons, fields[phi], weights, y_series=y_series,
                        init=init, config=cfg)
        )
    if len(grid) > 1:
        polish_cfg = replace(cfg, n_restarts=1)
        best_i = max(range(len(grid)), key=lambda i: results[i].loglik)
        anchor = results[best_i].params
        # the anchor polishes itself too: every point gets the same extra
        # iteration budget, so an unconverged anchor cannot win by default
        for i, phi in enumerate(grid):
            refit = em_estimate(persons, fields[phi], weights,
                                y_series=y_series, init=anchor,
                                config=polish_cfg)
            if not refit.degenerate and refit.loglik > results[i].loglik:
                results[i] = refit
    lls = [r.loglik for r in results]
    order = sorted(range(len(grid)), key=lambda i: (-lls[i], grid[i]))
    best_i = order[0]
    return PhiSearchResult(
        best_phi=float(grid[best_i]),
        profile=tuple((float(g), float(ll)) for g, ll in zip(grid, lls)),
        best=results[best_i],
        results=tuple(results),
    )


@dataclass
class FitStats:
    loglik: float
    n_params: int
    n_obs: int
    aic: float
    bic: float
    rho_bar_squared: float
    null_loglik: float
    null_definition: str


def fit_stats(final_loglik: float, n_params: int, n_observations: int) -> FitStats:
    """AIC, BIC and adjusted rho-squared against an equal-shares null.

    The null assigns probability 1/2 to adopting and not adopting in every
    person-month: LL0 = N ln(1/2).
    """
    if n_params < 0:
        raise InvalidInputError(f"n_params must be >= 0, got {n_params}")
    if n_observations < max(n_params, 1):
        raise InvalidInputError(
            f"n_observations {n_observations} below parameter count {n_params}"
        )
    ll0 = n_observations * np.log(0.5)
    return FitStats(
        loglik=final_loglik,
        n_params=n_params,
        n_obs=n_observations,
        aic=-2.0 * final_loglik + 2.0 * n_params,
        bic=-2.0 * final_loglik + n_params * np.log(n_observations),
        rho_bar_squared=1.0 - (final_loglik - n_params) / ll0,
        null_loglik=float(ll0),
        null_definition="equal-shares binary null: LL0 = N ln(1/2)",
    )


@dataclass
class MnlBaselineFit:
    coefficients: Mapping[str, float]
    loglik: float
    std_errors: np.ndarray
    t_stats: np.ndarray
    covariance: np.ndarray
    param_names: tuple[str, ...]
    n_persons: int
    n_obs: int
    converged: bool


MNL_BASELINE_NAMES = (
    "asc",
    "tech_firm",
    "station_in_zone",
    "onstreet_in_zone",
    "access_covered",
    "access_uncovered",
    "social_per100",
)


def mnl_baseline_estimate(
    persons: Sequence[Person],
    acc_field: AccessibilityField,
    weights: SamplingWeights,
    y_series=None,
) -> MnlBaselineFit:
    """Single-class weighted binary logit on the union of the class
    templates' covariates; the Table-4-style comparison baseline."""
    if y_series is None:
        y_series = observed_cumulative_adopters(persons, acc_field.horizon)
    data = PanelData(persons, acc_field, y_series)
    w = data.weights_vector(weights)
    # union design: X1 plus the social column from X2
    x = np.column_stack([data.X1, data.X2[:, 4]])
    row_w = w[data.row_person]

    def fg(beta):
        v = x @ beta
        f = float(np.sum(row_w * (data.y_adopt * v - np.logaddexp(0.0, v))))
        g = x.T @ (row_w * (data.y_adopt - _sigmoid(v)))
        return f, g

    res = maximize(fg, np.zeros(x.shape[1]))
    # OPG on the weighted person scores, consistent with em_estimate
    v = x @ res.x
    resid = data.y_adopt - _sigmoid(v)
    person_g = np.add.reduceat(x * resid[:, None], data.offsets, axis=0)
    gw = w[:, None] * person_g
    cov = np.linalg.pinv(gw.T @ gw)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, res.x / se, np.nan)
    return MnlBaselineFit(
        coefficients=dict(zip(MNL_BASELINE_NAMES, (float(b) for b in res.x))),
        loglik=res.fun,
        std_errors=se,
        t_stats=t,
        covariance=cov,
        param_names=MNL_BASELINE_NAMES,
        n_persons=len(data.persons),
        n_obs=data.n_rows,
        converged=res.converged,
    )
