import numpy as np
import pytest
from numpy.testing import assert_allclose

from adoptnet import io
from adoptnet.destination import DcParams, accessibility_field
from adoptnet.forecast import (
    CalibrationError,
    NonPsdCovarianceWarning,
    Scenario,
    ScenarioEdit,
    apply_scenario,
    base_scenario,
    bootstrap_forecast,
    calibrate_ascs,
    enumerate_forecast,
    holdout_validate,
    simulate_forecast,
)
from adoptnet.lccm import (
    AdoptionParams,
    EmConfig,
    adoption_prob,
    adoption_utility,
    membership_probs,
)
from adoptnet.model import (
    InvalidInputError,
    NetworkTimeline,
    Person,
    SamplingWeights,
    STRATUM_ADOPTER,
    STRATUM_POPULATION,
    Zone,
    ZoneRoles,
    observed_cumulative_adopters,
)
from adoptnet.synthgen import SynthConfig, generate

DC = DcParams(
    beta_distance=-0.24, alpha_logsize=0.18, delta_home=1.55,
    theta_onstreet=0.34, gamma_tech_downtown=1.0,
)

PARAMS = AdoptionParams(
    mem_asc_imitator=1.0, mem_income_imitator=-0.1, mem_male_imitator=-0.4,
    mem_asc_nonadopter=1.5, mem_income_nonadopter=-0.05, mem_male_nonadopter=-0.8,
    inn_asc=-3.2, inn_tech=0.9, inn_station=0.8, inn_onstreet=0.5,
    inn_access_covered=0.4, inn_access_uncovered=0.6,
    imi_asc=-4.5, imi_tech=1.1, imi_access_covered=0.5, imi_access_uncovered=0.7,
    imi_social_per100=1.2, non_asc=-20.0, phi=1.0,
)

DEAD = AdoptionParams(inn_asc=-30.0, imi_asc=-30.0, non_asc=-30.0, phi=1.0)


def toy_network(horizon=8):
    zones = [
        Zone("a", 800.0, station_month=1, onstreet_month=2),
        Zone("b", 300.0, station_month=3),
        Zone("c", 40.0),
        Zone("d", 25.0),
    ]
    dist = {
        ("a", "b"): 2.0, ("a", "c"): 1.5, ("a", "d"): 4.0,
        ("b", "c"): 2.5, ("b", "d"): 2.2, ("c", "d"): 3.0,
    }
    return NetworkTimeline(zones, dist, horizon, ZoneRoles(tech_firm="a", downtown="a"))


def toy_persons(n=20, seed=7, horizon=8):
    rng = np.random.default_rng(seed)
    zones = ["a", "b", "c", "d"]
    out = []
    for i in range(n):
        adopted = rng.random() < 0.3
        month = int(rng.integers(1, horizon + 1)) if adopted else None
        out.append(
            Person(
                id=f"p{i:03d}",
                home_zone=zones[int(rng.integers(0, 4))],
                income_k=float(np.round(rng.lognormal(1.2, 0.5), 3)),
                male=bool(rng.random() < 0.5),
                tech_firm_employee=bool(rng.random() < 0.3),
                stratum=STRATUM_ADOPTER if adopted else STRATUM_POPULATION,
                adoption_month=month,
            )
        )
    return out


def toy_field(persons, network, phi=1.0):
    return accessibility_field(DC, persons, network, phi)


class TestScenarioTypes:
    def test_edit_validation(self):
        with pytest.raises(InvalidInputError):
            ScenarioEdit("a", "garage", 5)
        with pytest.raises(InvalidInputError):
            ScenarioEdit("a", "station", 0)

    def test_scenario_validation(self):
        with pytest.raises(InvalidInputError):
            Scenario("", (), 5)
        with pytest.raises(InvalidInputError):
            Scenario("s", (), 0)

    def test_dict_round_trip(self):
        sc = Scenario("expand", (ScenarioEdit("c", "station", 9),), 6)
        assert Scenario.from_dict(sc.to_dict()) == sc

    def test_missing_keys_named(self):
        with pytest.raises(InvalidInputError, match="month"):
            Scenario.from_dict(
                {"name": "x", "edits": [{"zone": "a", "facility": "station"}],
                 "horizon": 3}
            )

    def test_json_round_trip(self, tmp_path):
        path = str(tmp_path / "scenarios.json")
        scs = (
            base_scenario(6),
            Scenario("expand", (ScenarioEdit("c", "station", 9),), 6),
        )
        io.write_scenarios_json(path, scs)
        assert io.read_scenarios_json(path) == scs

    def test_duplicate_names_rejected(self, tmp_path):
        path = str(tmp_path / "scenarios.json")
        io.write_json(path, [base_scenario(3).to_dict()] * 2)
        with pytest.raises(InvalidInputError, match="duplicate"):
            io.read_scenarios_json(path)


class TestApplyScenario:
    def test_empty_edits_is_base_case(self):
        net = toy_network()
        out = apply_scenario(net, base_scenario(4))
        assert out.horizon == 12
        for t in range(1, 9):
            assert out.active_destinations(t) == net.active_destinations(t)
        # extension months keep the final observed supply
        assert out.active_destinations(12) == net.active_destinations(8)

    def test_new_station_adds_one_destination(self):
        net = toy_network()
        sc = Scenario("x", (ScenarioEdit("c", "station", 9),), 4)
        out = apply_scenario(net, sc)
        before = out.active_destinations(8)
        after = out.active_destinations(9)
        assert len(after) == len(before) + 1
        assert "c" in after and "c" not in before

    def test_colocated_facilities_stay_one_destination(self):
        net = toy_network()
        sc = Scenario(
            "x",
            (ScenarioEdit("c", "station", 9), ScenarioEdit("c", "onstreet", 10)),
            4,
        )
        out = apply_scenario(net, sc)
        assert out.zones["c"].has_station(10)
        assert out.zones["c"].has_onstreet(10)
        assert list(out.active_destinations(10)).count("c") == 1

    def test_edit_inside_window_rejected(self):
        net = toy_network()
        sc = Scenario("x", (ScenarioEdit("c", "station", 8),), 4)
        with pytest.raises(InvalidInputError, match="observed window"):
            apply_scenario(net, sc)

    def test_edit_beyond_end_rejected(self):
        net = toy_network()
        sc = Scenario("x", (ScenarioEdit("c", "station", 13),), 4)
        with pytest.raises(InvalidInputError, match="beyond"):
            apply_scenario(net, sc)

    def test_original_untouched(self):
        net = toy_network()
        apply_scenario(net, Scenario("x", (ScenarioEdit("c", "station", 9),), 4))
        assert net.horizon == 8
        assert not net.zones["c"].covered(9)


class TestEnumerateForecast:
    def test_dead_params_give_zero(self):
        net = toy_network()
        persons = [p for p in toy_persons() if p.adoption_month is None]
        fc = enumerate_forecast(DEAD, persons, net, 1, 8, 0.0, dc_params=DC)
        assert fc.new.sum() < 1e-9

    def test_single_person_geometric_closed_form(self):
        # one sure innovator on a static network: the hazard is constant,
        # so expected uptake follows 1 - (1-h)^t
        net = NetworkTimeline(
            [Zone("a", 500.0, station_month=1), Zone("b", 60.0)],
            {("a", "b"): 2.0}, 10, ZoneRoles(),
        )
        p = Person("p0", "a", 3.0, False, False, STRATUM_POPULATION, None)
        params = PARAMS.replace(
            mem_asc_imitator=-40.0, mem_asc_nonadopter=-40.0,
            mem_income_imitator=0.0, mem_income_nonadopter=0.0,
        )
        fld = toy_field([p], net)
        fc = enumerate_forecast(params, [p], net, 1, 10, 0.0, field=fld)
        v = adoption_utility(
            params, p, fld.value("p0", 1), fld.covered("p0", 1), 0.0,
            station_home=1.0, onstreet_home=0.0,
        )[0]
        h = adoption_prob(v)
        expect = 1.0 - (1.0 - h) ** np.arange(1, 11)
        assert_allclose(fc.cumulative, expect, atol=1e-9)

    def test_matches_per_person_reference(self):
        # brute-force propagation straight from the public per-person
        # utilities, with per-class survival
        net = toy_network()
        persons = toy_persons(15, seed=3)
        fld = toy_field(persons, net)
        weights = SamplingWeights({STRATUM_ADOPTER: 0.7, STRATUM_POPULATION: 1.4})
        start, hor, y0 = 3, 6, 5.0
        fc = enumerate_forecast(
            PARAMS, persons, net, start, hor, y0, field=fld, weights=weights
        )

        surv = {}
        for p in persons:
            at_risk = p.adoption_month is None or p.adoption_month >= start
            surv[p.id] = membership_probs(PARAMS, p) * (1.0 if at_risk else 0.0)
        y = y0
        ref_new = []
        for t in range(start, start + hor):
            s_t = 0.0
            for p in persons:
                z = net.zones[p.home_zone]
                probs = adoption_prob(
                    adoption_utility(
                        PARAMS, p, fld.value(p.id, t), fld.covered(p.id, t), y,
                        station_home=float(z.has_station(t)),
                        onstreet_home=float(z.has_onstreet(t)),
                    )
                )
                s_t += weights.for_person(p) * float(surv[p.id] @ probs)
                surv[p.id] = surv[p.id] * (1.0 - probs)
            y += s_t
            ref_new.append(s_t)
        assert_allclose(fc.new, ref_new, rtol=1e-10)

    def test_bookkeeping_identity_exact(self):
        net = toy_network()
        persons = toy_persons(12, seed=5)
        fc = enumerate_forecast(PARAMS, persons, net, 1, 8, 3.0, dc_params=DC)
        prev = fc.y_start
        for i in range(len(fc.months)):
            assert fc.cumulative[i] == prev + fc.new[i]
            prev = fc.cumulative[i]

    def test_paths_are_monotone_and_bounded(self):
        net = toy_network()
        persons = toy_persons(18, seed=11)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = PARAMS.to_vector() + rng.normal(0, 0.5, len(PARAMS.to_vector()))
            params = AdoptionParams.from_vector(x, phi=1.0)
            fc = enumerate_forecast(params, persons, net, 2, 7, 1.0, dc_params=DC)
            assert (fc.new >= 0).all()
            assert (np.diff(np.concatenate([[fc.y_start], fc.cumulative])) >= -1e-12).all()
            n_risk = sum(
                1 for p in persons
                if p.adoption_month is None or p.adoption_month >= 2
            )
            assert fc.cumulative[-1] <= fc.y_start + n_risk + 1e-9

    def test_absorbed_persons_contribute_nothing(self):
        net = toy_network()
        persons = toy_persons(20, seed=9)
        early = [p for p in persons if p.adoption_month is not None and p.adoption_month < 4]
        assert early, "fixture needs at least one early adopter"
        rest = [p for p in persons if p not in early]
        full = enumerate_forecast(PARAMS, persons, net, 4, 5, 10.0, dc_params=DC)
        reduced = enumerate_forecast(PARAMS, rest, net, 4, 5, 10.0, dc_params=DC)
        assert_allclose(full.new, reduced.new, rtol=1e-12)

    def test_posterior_forms_agree(self):
        net = toy_network()
        persons = toy_persons(10, seed=13)
        fld = toy_field(persons, net)
        rng = np.random.default_rng(1)
        h = rng.dirichlet([2.0, 2.0, 2.0], size=len(persons))

        class Duck:
            posterior = h
            person_ids = tuple(p.id for p in persons)

        as_dict = {p.id: h[i] for i, p in enumerate(persons)}
        runs = [
            enumerate_forecast(PARAMS, persons, net, 1, 6, 0.0, field=fld,
                               posteriors=post)
            for post in (Duck(), as_dict, h)
        ]
        assert_allclose(runs[0].new, runs[1].new, rtol=0)
        assert_allclose(runs[0].new, runs[2].new, rtol=0)

    def test_bad_posterior_shape_rejected(self):
        net = toy_network()
        persons = toy_persons(5, seed=1)
        with pytest.raises(InvalidInputError, match="shape"):
            enumerate_forecast(PARAMS, persons, net, 1, 4, 0.0, dc_params=DC,
                               posteriors=np.ones((3, 3)))

    def test_window_beyond_timeline_names_the_fix(self):
        net = toy_network()
        persons = toy_persons(5, seed=1)
        with pytest.raises(InvalidInputError, match="apply_scenario"):
            enumerate_forecast(PARAMS, persons, net, 7, 4, 0.0, dc_params=DC)

    def test_weights_scale_linearly_without_feedback(self):
        # the social term makes scale nonlinear on purpose, so turn it off
        params = PARAMS.replace(imi_social_per100=0.0)
        net = toy_network()
        persons = toy_persons(14, seed=17)
        fld = toy_field(persons, net)
        one = enumerate_forecast(params, persons, net, 1, 6, 0.0, field=fld,
                                 weights=SamplingWeights.uniform(1.0))
        two = enumerate_forecast(params, persons, net, 1, 6, 0.0, field=fld,
                                 weights=SamplingWeights.uniform(2.0))
        assert_allclose(two.new, 2.0 * one.new, rtol=1e-12)
        # with feedback on, the doubled population adopts faster than 2x
        one_fb = enumerate_forecast(PARAMS, persons, net, 1, 6, 0.0, field=fld,
                                    weights=SamplingWeights.uniform(1.0))
        two_fb = enumerate_forecast(PARAMS, persons, net, 1, 6, 0.0, field=fld,
                                    weights=SamplingWeights.uniform(2.0))
        assert two_fb.new[0] == 2.0 * one_fb.new[0]
        assert (two_fb.new[1:] > 2.0 * one_fb.new[1:]).all()


class TestSimulateForecast:
    def test_seeded_and_reproducible(self):
        net = toy_network()
        persons = toy_persons(25, seed=23)
        a = simulate_forecast(PARAMS, persons, net, 1, 8, 0.0, 42, dc_params=DC)
        b = simulate_forecast(PARAMS, persons, net, 1, 8, 0.0, 42, dc_params=DC)
        c = simulate_forecast(PARAMS, persons, net, 1, 8, 0.0, 43, dc_params=DC)
        assert (a.new == b.new).all()
        assert not (a.new == c.new).all()

    def test_unit_weights_give_integer_counts(self):
        net = toy_network()
        persons = toy_persons(25, seed=23)
        fc = simulate_forecast(PARAMS, persons, net, 1, 8, 0.0, 7, dc_params=DC)
        assert_allclose(fc.new, np.round(fc.new), rtol=0)

    def test_mean_path_matches_enumeration_without_feedback(self):
        # with the social coefficient off, paths are independent across
        # persons and the enumerated series is the exact mean
        params = PARAMS.replace(imi_social_per100=0.0)
        net = toy_network()
        persons = [p for p in toy_persons(30, seed=29) if p.adoption_month is None]
        fld = toy_field(persons, net)
        point = enumerate_forecast(params, persons, net, 1, 6, 0.0, field=fld)
        paths = np.vstack(
            [
                simulate_forecast(params, persons, net, 1, 6, 0.0, seed,
                                  field=fld).cumulative
                for seed in range(400)
            ]
        )
        se = paths.std(axis=0, ddof=1) / np.sqrt(paths.shape[0])
        assert (np.abs(paths.mean(axis=0) - point.cumulative) < 4 * se + 0.05).all()


class TestCalibrateAscs:
    def setup_method(self):
        self.net = toy_network()
        self.persons = toy_persons(40, seed=31)
        self.fld = toy_field(self.persons, self.net)

    def one_month_prediction(self, params, month, y_prev):
        total = 0.0
        for p in self.persons:
            if p.adoption_month is not None and p.adoption_month < month:
                continue
            z = self.net.zones[p.home_zone]
            probs = adoption_prob(
                adoption_utility(
                    params, p, self.fld.value(p.id, month),
                    self.fld.covered(p.id, month), y_prev,
                    station_home=float(z.has_station(month)),
                    onstreet_home=float(z.has_onstreet(month)),
                )
            )
            total += float(membership_probs(params, p) @ probs)
        return total

    def test_fixed_point_gives_zero_shift(self):
        y_prev = float(observed_cumulative_adopters(self.persons, 8)[7])
        target = self.one_month_prediction(PARAMS, 8, y_prev)
        res = calibrate_ascs(PARAMS, self.persons, self.net, target, 8,
                             field=self.fld)
        assert abs(res.shift) < 1e-6
        assert abs(res.predicted - res.target) < 1e-6

    def test_zero_target_unreachable(self):
        with pytest.raises(CalibrationError) as exc:
            calibrate_ascs(PARAMS, self.persons, self.net, 0.0, 8, field=self.fld)
        assert exc.value.low > 0.0
        assert exc.value.target == 0.0

    def test_huge_target_reports_bounds(self):
        with pytest.raises(CalibrationError, match="achievable range"):
            calibrate_ascs(PARAMS, self.persons, self.net, 1e6, 8, field=self.fld)

    def test_negative_target_rejected(self):
        with pytest.raises(InvalidInputError):
            calibrate_ascs(PARAMS, self.persons, self.net, -1.0, 8, field=self.fld)

    def test_doubling_target_raises_shift_and_grid_agrees(self):
        y_prev = float(observed_cumulative_adopters(self.persons, 8)[7])
        base = self.one_month_prediction(PARAMS, 8, y_prev)
        r1 = calibrate_ascs(PARAMS, self.persons, self.net, base * 1.5, 8,
                            field=self.fld)
        r2 = calibrate_ascs(PARAMS, self.persons, self.net, base * 3.0, 8,
                            field=self.fld)
        assert r2.shift > r1.shift > 0.0
        # brute-force scan: prediction is monotone in the shift, and the
        # bisection root sits where the scan crosses the target
        grid = np.linspace(-10, 10, 201)
        preds = np.array(
            [
                self.one_month_prediction(
                    PARAMS.replace(inn_asc=PARAMS.inn_asc + c,
                                   imi_asc=PARAMS.imi_asc + c),
                    8, y_prev,
                )
                for c in grid
            ]
        )
        assert (np.diff(preds) > 0).all()
        crossing = grid[np.searchsorted(preds, base * 3.0)]
        assert abs(r2.shift - crossing) < (grid[1] - grid[0]) + 1e-9

    def test_calibrated_hit_and_idempotence(self):
        res = calibrate_ascs(PARAMS, self.persons, self.net, 4.0, 8,
                             field=self.fld)
        assert abs(res.predicted - 4.0) < 1e-6
        again = calibrate_ascs(res.params, self.persons, self.net, 4.0, 8,
                               field=self.fld)
        assert abs(again.shift) < 1e-6


class TestBootstrapForecast:
    def setup_method(self):
        self.net = toy_network()
        self.persons = toy_persons(25, seed=37)
        self.k = len(AdoptionParams.param_names())

    def scenarios(self):
        return [base_scenario(4), Scenario("grow", (ScenarioEdit("c", "station", 9),), 4)]

    def test_single_draw_zero_cov_collapses_to_point(self):
        res = bootstrap_forecast(
            PARAMS, np.zeros((self.k, self.k)), self.persons, self.net,
            [base_scenario(4)], 1, 0, dc_params=DC, start_month=9, y_start=8.0,
        )[0]
        net_x = apply_scenario(self.net, base_scenario(4))
        point = enumerate_forecast(PARAMS, self.persons, net_x, 9, 4, 8.0,
                                   dc_params=DC)
        for q in (res.q025, res.q25, res.q50, res.q75, res.q975, res.mean_cumulative):
            assert_allclose(q, point.cumulative, rtol=1e-12)

    def test_same_seed_identical_output(self):
        cov = np.diag(np.full(self.k, 0.01))
        a, b = (
            bootstrap_forecast(
                PARAMS, cov, self.persons, self.net, self.scenarios(), 32, 5,
                dc_params=DC, start_month=9, y_start=8.0,
            )
            for _ in range(2)
        )
        for ra, rb in zip(a, b):
            assert ra.scenario == rb.scenario
            for fa, fb in ((ra.mean_new, rb.mean_new), (ra.q025, rb.q025),
                           (ra.q975, rb.q975)):
                assert fa.tobytes() == fb.tobytes()

    def test_quantiles_nested_and_bookkeeping_holds(self):
        cov = np.diag(np.full(self.k, 0.04))
        res = bootstrap_forecast(
            PARAMS, cov, self.persons, self.net, self.scenarios(), 64, 3,
            dc_params=DC, start_month=9, y_start=8.0,
        )
        for r in res:
            assert (r.q025 <= r.q25).all()
            assert (r.q25 <= r.q50).all()
            assert (r.q50 <= r.q75).all()
            assert (r.q75 <= r.q975).all()
            assert_allclose(np.diff(r.mean_cumulative), r.mean_new[1:], rtol=1e-12)
            assert r.mean_cumulative[0] == r.y_start + r.mean_new[0]

    def test_supply_scenario_dominates_base(self):
        cov = np.diag(np.full(self.k, 0.0004))
        base, grow = bootstrap_forecast(
            PARAMS, cov, self.persons, self.net, self.scenarios(), 16, 11,
            dc_params=DC, start_month=9, y_start=8.0,
        )
        assert (grow.mean_cumulative >= base.mean_cumulative - 1e-12).all()
        assert grow.mean_cumulative[-1] > base.mean_cumulative[-1]

    def test_non_psd_covariance_projected_with_warning(self):
        cov = np.diag(np.full(self.k, 0.01))
        cov[0, 1] = cov[1, 0] = 0.5  # forces a negative eigenvalue
        with pytest.warns(NonPsdCovarianceWarning):
            res = bootstrap_forecast(
                PARAMS, cov, self.persons, self.net, [base_scenario(3)], 8, 1,
                dc_params=DC, start_month=9, y_start=8.0,
            )[0]
        assert np.isfinite(res.mean_cumulative).all()

    def test_wild_nonadopter_variance_stays_finite(self):
        cov = np.zeros((self.k, self.k))
        i = AdoptionParams.param_names().index("non_asc")
        cov[i, i] = 1e4
        res = bootstrap_forecast(
            PARAMS, cov, self.persons, self.net, [base_scenario(3)], 64, 2,
            dc_params=DC, start_month=9, y_start=8.0,
        )[0]
        assert np.isfinite(res.mean_cumulative).all()
        assert np.isfinite(res.q975).all()

    def test_small_draw_quantiles_match_large_draw_reference(self):
        # two persons keep each draw cheap; only a couple of coefficients
        # vary so the reference run stays honest
        persons = [p for p in toy_persons(8, seed=41) if p.adoption_month is None][:2]
        cov = np.zeros((self.k, self.k))
        names = AdoptionParams.param_names()
        for nm in ("inn_asc", "imi_asc"):
            i = names.index(nm)
            cov[i, i] = 0.09
        kw = dict(dc_params=DC, start_month=9, y_start=0.0)
        small = bootstrap_forecast(PARAMS, cov, persons, self.net,
                                   [base_scenario(3)], 600, 10, **kw)[0]
        big = bootstrap_forecast(PARAMS, cov, persons, self.net,
                                 [base_scenario(3)], 40000, 999, **kw)[0]
        spread = big.q975 - big.q025
        for q in ("q025", "q25", "q50", "q75", "q975"):
            err = np.abs(getattr(small, q) - getattr(big, q))
            assert (err < 0.12 * spread + 1e-6).all(), q

    def test_simulated_feedback_mode(self):
        cov = np.diag(np.full(self.k, 0.01))
        kw = dict(dc_params=DC, start_month=9, y_start=8.0)
        a = bootstrap_forecast(PARAMS, cov, self.persons, self.net,
                               [base_scenario(3)], 16, 4, feedback="simulated",
                               **kw)[0]
        b = bootstrap_forecast(PARAMS, cov, self.persons, self.net,
                               [base_scenario(3)], 16, 4, feedback="simulated",
                               **kw)[0]
        c = bootstrap_forecast(PARAMS, cov, self.persons, self.net,
                               [base_scenario(3)], 16, 4, **kw)[0]
        assert a.mean_cumulative.tobytes() == b.mean_cumulative.tobytes()
        assert not np.allclose(a.mean_cumulative, c.mean_cumulative)

    def test_argument_validation(self):
        cov = np.zeros((self.k, self.k))
        kw = dict(dc_params=DC, start_month=9, y_start=0.0)
        with pytest.raises(InvalidInputError):
            bootstrap_forecast(PARAMS, cov, self.persons, self.net,
                               [base_scenario(3)], 0, 1, **kw)
        with pytest.raises(InvalidInputError):
            bootstrap_forecast(PARAMS, cov, self.persons, self.net, [], 4, 1, **kw)
        with pytest.raises(InvalidInputError):
            bootstrap_forecast(PARAMS, cov, self.persons, self.net,
                               [base_scenario(3)], 4, 1, feedback="psychic", **kw)
        with pytest.raises(InvalidInputError):
            bootstrap_forecast(PARAMS, cov[:3, :3], self.persons, self.net,
                               [base_scenario(3)], 4, 1, **kw)

    def test_resample_mode_runs_deterministically(self):
        persons = toy_persons(16, seed=43)
        cfg = EmConfig(n_restarts=1, max_iter=60, tol=1e-5)
        kw = dict(dc_params=DC, start_month=9, y_start=5.0, mode="resample",
                  em_config=cfg)
        a = bootstrap_forecast(PARAMS, np.zeros((self.k, self.k)), persons,
                               self.net, [base_scenario(3)], 2, 8, **kw)[0]
        b = bootstrap_forecast(PARAMS, np.zeros((self.k, self.k)), persons,
                               self.net, [base_scenario(3)], 2, 8, **kw)[0]
        assert a.mean_cumulative.tobytes() == b.mean_cumulative.tobytes()
        assert np.isfinite(a.mean_cumulative).all()
        assert (np.diff(a.q50) >= -1e-12).all()


class TestHoldoutValidate:
    def make_data(self, seed=3):
        cfg = SynthConfig(seed=seed, n_zones=6, n_persons=900, horizon=14,
                          trips_per_member_month=0.0)
        return cfg, generate(cfg)

    def test_windows_validated(self):
        cfg, data = self.make_data()
        w = SamplingWeights.uniform()
        with pytest.raises(InvalidInputError):
            holdout_validate(list(data.sample), data.network, w, 11, 11, 14,
                             dc_params=cfg.dc, phi=1.0, draws=2)
        with pytest.raises(InvalidInputError):
            holdout_validate(list(data.sample), data.network, w, 10, 11, 15,
                             dc_params=cfg.dc, phi=1.0, draws=2)
        with pytest.raises(InvalidInputError, match="exactly one"):
            holdout_validate(list(data.sample), data.network, w, 10, 11, 14,
                             dc_params=cfg.dc, phi=1.0, phi_grid=[1.0], draws=2)

    def test_full_workflow_and_determinism(self):
        cfg, data = self.make_data(seed=5)
        w = SamplingWeights.uniform()
        em_cfg = EmConfig(n_restarts=2, max_iter=250, seed=1)
        kw = dict(dc_params=cfg.dc, phi=1.0, draws=120, seed=9,
                  em_config=em_cfg)
        res = holdout_validate(list(data.sample), data.network, w, 10, 11, 14,
                               **kw)
        assert res.months == (12, 13, 14)
        y = observed_cumulative_adopters(list(data.sample), 14)
        assert_allclose(res.actual_cumulative, y[12:], rtol=0)
        assert res.coverage_iqr == sum(res.in_iqr) / 3
        assert res.coverage_whiskers >= res.coverage_iqr
        assert abs(res.calibration.predicted - res.calibration.target) < 0.5
        assert (np.diff(res.forecast.q975 - res.forecast.q025) >= -1e-9).any()

        res2 = holdout_validate(list(data.sample), data.network, w, 10, 11, 14,
                                **kw)
        assert res.forecast.q50.tobytes() == res2.forecast.q50.tobytes()
        assert res.calibration.shift == res2.calibration.shift

    def test_single_step_bands_contain_truth_expectation(self):
        cfg, data = self.make_data(seed=7)
        w = SamplingWeights.uniform()
        persons = list(data.sample)
        res = holdout_validate(
            persons, data.network, w, 12, 13, 14,
            dc_params=cfg.dc, phi=1.0, draws=200, seed=4,
            em_config=EmConfig(n_restarts=2, max_iter=250, seed=2),
        )
        y = observed_cumulative_adopters(persons, 14)
        truth_point = enumerate_forecast(
            cfg.adoption, persons, data.network, 14, 1, float(y[13]),
            dc_params=cfg.dc,
        )
        assert res.forecast.q025[0] <= truth_point.cumulative[0] <= res.forecast.q975[0]

    def test_phi_grid_branch(self):
        cfg, data = self.make_data(seed=11)
        w = SamplingWeights.uniform()
        res = holdout_validate(
            list(data.sample), data.network, w, 10, 11, 14,
            dc_params=cfg.dc, phi_grid=[1.0], draws=20, seed=2,
            em_config=EmConfig(n_restarts=1, max_iter=150, seed=3),
        )
        assert res.phi == 1.0
        assert np.isfinite(res.forecast.mean_cumulative).all()
