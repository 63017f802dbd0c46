import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from adoptnet import io
from adoptnet.destination import accessibility_field
from adoptnet.lccm import (
    CLASS_NAMES,
    AdoptionParams,
    adoption_prob,
    adoption_utility,
)
from adoptnet.model import (
    InvalidInputError,
    STRATUM_ADOPTER,
    STRATUM_POPULATION,
    expand_panel,
    observed_cumulative_adopters,
    weights_from_persons,
)
from adoptnet.synthgen import (
    DEFAULT_DC,
    DEFAULT_TRUTH,
    FeasibilityWarning,
    SynthConfig,
    generate,
    generate_to_dir,
)

# published three-class point, used where the generator should mimic the
# real service's qualitative behavior
TABLE3 = AdoptionParams(
    mem_asc_imitator=7.00, mem_income_imitator=-0.23, mem_male_imitator=-0.77,
    mem_asc_nonadopter=7.51, mem_income_nonadopter=-0.04, mem_male_nonadopter=-1.72,
    inn_asc=-7.88, inn_tech=1.33, inn_station=1.38, inn_onstreet=1.18,
    inn_access_covered=0.44, inn_access_uncovered=0.91,
    imi_asc=-14.71, imi_tech=7.10, imi_access_covered=0.68, imi_access_uncovered=0.59,
    imi_social_per100=0.14, non_asc=-23.46, phi=1.0,
)

FLAT_TRUTH = AdoptionParams(
    inn_asc=-30.0, imi_asc=-30.0, non_asc=-30.0, phi=1.0
)


def small_config(seed=3, **kw):
    defaults = dict(
        seed=seed, n_zones=6, n_persons=1500, horizon=10,
        trips_per_member_month=1.0,
    )
    defaults.update(kw)
    return SynthConfig(**defaults)


class TestConfigValidation:
    def test_rejects_single_zone(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, n_zones=1)

    def test_rejects_undersampling_factor(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, adopter_oversample=0.5)

    def test_rejects_bad_shares(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, male_share=1.2)
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, tech_share=-0.1)

    def test_rejects_bad_income(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, income_median_k=0.0)

    def test_rejects_bad_income_mode(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, income_mode="household")

    def test_rejects_wrong_length_zone_weights(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(seed=0, n_zones=4, home_zone_weights=(1.0, 1.0))


class TestDeterminism:
    def test_same_seed_same_files(self, tmp_path):
        cfg = small_config(seed=9)
        d1, d2 = str(tmp_path / "run1"), str(tmp_path / "run2")
        p1 = generate_to_dir(cfg, d1)
        p2 = generate_to_dir(cfg, d2)
        assert p1.keys() == p2.keys()
        for name in p1:
            with open(p1[name], "rb") as f1, open(p2[name], "rb") as f2:
                assert f1.read() == f2.read(), name

    def test_different_seed_different_data(self, tmp_path):
        a = generate(small_config(seed=1))
        b = generate(small_config(seed=2))
        assert a.truth["population"]["n_adopters"] != b.truth[
            "population"
        ]["n_adopters"] or a.sample != b.sample

    def test_outputs_parse_back(self, tmp_path):
        cfg = small_config(seed=5)
        paths = generate_to_dir(cfg, str(tmp_path))
        persons = io.read_persons_csv(paths["persons"])
        net = io.read_network(
            paths["zones"], paths["distances"], paths["supply"], cfg.horizon
        )
        trips = io.read_trips_csv(paths["trips"])
        truth = io.read_json(paths["truth"])
        assert len(persons) == len(generate(cfg).sample)
        assert net.ids == generate(cfg).network.ids
        assert len(trips) > 0
        assert io.adoption_params_from_blocks(truth["adoption"]) == cfg.adoption


class TestFeasibility:
    def test_dead_truth_warns_and_generates_no_adopters(self):
        cfg = small_config(seed=4, adoption=FLAT_TRUTH, trips_per_member_month=0.0)
        with pytest.warns(FeasibilityWarning, match="no adopters"):
            data = generate(cfg)
        assert all(p.adoption_month is None for p in data.population)
        assert all(p.stratum == STRATUM_POPULATION for p in data.sample)
        assert data.truth["population"]["n_adopters"] == 0

    def test_live_truth_does_not_warn(self):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error", FeasibilityWarning)
            generate(small_config(seed=6))


class TestPopulationInvariants:
    def setup_method(self):
        self.cfg = small_config(seed=11)
        self.data = generate(self.cfg)

    def test_adoption_months_within_horizon(self):
        for p in self.data.population:
            if p.adoption_month is not None:
                assert 1 <= p.adoption_month <= self.cfg.horizon

    def test_strata_match_adoption_status(self):
        for p in self.data.population:
            want = STRATUM_ADOPTER if p.adoption_month else STRATUM_POPULATION
            assert p.stratum == want

    def test_panel_expansion_valid_for_all_sampled(self):
        for p in self.data.sample:
            obs = expand_panel(p, self.cfg.horizon)
            want = p.adoption_month if p.adoption_month else self.cfg.horizon
            assert len(obs) == want

    def test_cumulative_series_integer_and_monotone(self):
        y = observed_cumulative_adopters(
            list(self.data.population), self.cfg.horizon
        )
        assert y[0] == 0.0
        assert (np.diff(y) >= 0).all()
        assert_allclose(y, np.round(y), rtol=0)

    def test_sample_contains_every_adopter(self):
        adopters = {p.id for p in self.data.population if p.adoption_month}
        sampled = {p.id for p in self.data.sample}
        assert adopters <= sampled

    def test_classes_align_with_population(self):
        assert self.data.classes.shape == (len(self.data.population),)
        assert set(np.unique(self.data.classes)) <= {0, 1, 2}


class TestTrips:
    def test_trip_invariants(self):
        cfg = small_config(seed=13, trips_per_member_month=1.5)
        data = generate(cfg)
        assert len(data.trips) > 0
        adopters = {p.id: p for p in data.population if p.adoption_month}
        for t in data.trips:
            p = adopters[t.person_id]
            assert t.month >= p.adoption_month
            assert data.network.zones[t.origin_zone].covered(t.month)
            assert data.network.zones[t.dest_zone].covered(t.month)
            if data.network.zones[p.home_zone].covered(t.month):
                assert t.origin_zone == p.home_zone

    def test_zero_rate_means_no_trips(self):
        data = generate(small_config(seed=13, trips_per_member_month=0.0))
        assert data.trips == ()


class TestSupplySchedule:
    def test_monotone_rollout_and_coverage_split(self):
        cfg = SynthConfig(seed=21, n_zones=12, n_persons=200, horizon=30,
                          trips_per_member_month=0.0)
        data = generate(cfg)
        net = data.network
        counts = [len(net.active_destinations(t)) for t in range(1, 31)]
        assert counts[0] >= 1
        assert all(b >= a for a, b in zip(counts, counts[1:]))
        n_cov = len(net.active_destinations(30))
        assert n_cov == round(cfg.covered_share * cfg.n_zones)
        assert n_cov < cfg.n_zones  # some zones stay on the imputation path
        last = max(
            z.station_month for z in net.zones.values() if z.station_month
        )
        assert last <= round(0.6 * cfg.horizon)

    def test_densest_zone_opens_first(self):
        data = generate(small_config(seed=22))
        net = data.network
        densest = max(net.zones.values(), key=lambda z: z.employment_density)
        assert densest.station_month == 1


class TestSampling:
    def test_oversample_keeps_adopters_thins_rest(self):
        cfg = small_config(seed=31, n_persons=4000, adopter_oversample=3.0,
                           trips_per_member_month=0.0)
        data = generate(cfg)
        n_adopt = sum(1 for p in data.population if p.adoption_month)
        n_non = len(data.population) - n_adopt
        kept_adopt = sum(1 for p in data.sample if p.stratum == STRATUM_ADOPTER)
        kept_non = sum(1 for p in data.sample if p.stratum == STRATUM_POPULATION)
        assert kept_adopt == n_adopt
        expect = n_non / 3.0
        sd = np.sqrt(n_non * (1 / 3) * (2 / 3))
        assert abs(kept_non - expect) < 4 * sd

    def test_truth_fractions_feed_weight_correction(self):
        cfg = small_config(seed=31, n_persons=4000, adopter_oversample=3.0,
                           trips_per_member_month=0.0)
        data = generate(cfg)
        fractions = data.truth["population"]["fractions"]
        assert abs(sum(fractions.values()) - 1.0) < 1e-12
        w = weights_from_persons(list(data.sample), fractions)
        # adopters are over-represented, so their weight corrects downward
        assert w.for_stratum(STRATUM_ADOPTER) < 1.0
        assert w.for_stratum(STRATUM_POPULATION) > 1.0

    def test_self_weighting_sample_is_population(self):
        data = generate(small_config(seed=33, adopter_oversample=1.0))
        assert len(data.sample) == len(data.population)


class TestIncomeModes:
    def test_zone_mode_shares_income_within_zone(self):
        data = generate(small_config(seed=41, income_mode="zone"))
        by_zone = {}
        for p in data.population:
            by_zone.setdefault(p.home_zone, set()).add(p.income_k)
        for zone, incomes in by_zone.items():
            assert len(incomes) == 1, zone

    def test_person_mode_varies_within_zone(self):
        data = generate(small_config(seed=41, income_mode="person"))
        by_zone = {}
        for p in data.population:
            by_zone.setdefault(p.home_zone, set()).add(p.income_k)
        assert max(len(v) for v in by_zone.values()) > 10


class TestClassShares:
    def test_empirical_matches_analytic_over_seeds(self):
        # the draw is multinomial given covariates, so pooled empirical
        # shares converge on the mean membership probability
        diff = np.zeros(3)
        for seed in range(10):
            cfg = SynthConfig(seed=seed, n_zones=6, n_persons=5000, horizon=4,
                              trips_per_member_month=0.0)
            data = generate(cfg)
            emp = np.array(
                [(data.classes == s).mean() for s in range(3)]
            )
            exp = np.array(
                [
                    data.truth["population"]["expected_class_shares"][name]
                    for name in CLASS_NAMES
                ]
            )
            diff += emp - exp
        assert np.abs(diff / 10).max() < 0.02


class TestHazardAgainstAnalytic:
    def test_event_counts_match_expected_within_binomial_error(self):
        cfg = SynthConfig(seed=51, n_zones=8, n_persons=4000, horizon=12,
                          trips_per_member_month=0.0)
        data = generate(cfg)
        persons = list(data.population)
        fld = accessibility_field(cfg.dc, persons, data.network, cfg.adoption.phi)
        y = observed_cumulative_adopters(persons, cfg.horizon)
        observed = np.zeros(3)
        expected = np.zeros(3)
        var = np.zeros(3)
        for p, s in zip(persons, data.classes):
            z = data.network.zones[p.home_zone]
            last = p.adoption_month if p.adoption_month else cfg.horizon
            for t in range(1, last + 1):
                v = adoption_utility(
                    cfg.adoption, p, fld.value(p.id, t), fld.covered(p.id, t),
                    float(y[t - 1]),
                    station_home=float(z.has_station(t)),
                    onstreet_home=float(z.has_onstreet(t)),
                )[s]
                prob = adoption_prob(v)
                expected[s] += prob
                var[s] += prob * (1 - prob)
            if p.adoption_month:
                observed[s] += 1
        for s in range(3):
            slack = 4 * np.sqrt(var[s]) + 1e-9
            assert abs(observed[s] - expected[s]) <= slack, CLASS_NAMES[s]


class TestPublishedPointBehavior:
    def test_nonzero_adopters_and_rising_imitator_share(self):
        # under the published parameter point the early market is seeded by
        # innovators; the cumulative-count feedback then tilts adoption
        # toward imitators, so their share of adopters grows
        early = np.zeros(2)  # innovator, imitator counts, months 1..15
        late = np.zeros(2)
        total = 0
        for seed in (1, 2, 3):
            cfg = SynthConfig(
                seed=seed, n_persons=50000, n_zones=12, horizon=30,
                adoption=TABLE3, dc=DEFAULT_DC, trips_per_member_month=0.0,
            )
            data = generate(cfg)
            for p, s in zip(data.population, data.classes):
                if p.adoption_month is None or s > 1:
                    continue
                total += 1
                bucket = early if p.adoption_month <= 15 else late
                bucket[s] += 1
        assert total > 0
        share_early = early[1] / early.sum()
        share_late = late[1] / late.sum()
        assert share_late > share_early


class TestTruthDocument:
    def test_truth_covers_sample_and_echoes_config(self):
        cfg = small_config(seed=61, adopter_oversample=2.0)
        data = generate(cfg)
        truth = data.truth
        assert set(truth["classes"]) == {p.id for p in data.sample}
        assert set(truth["classes"].values()) <= set(CLASS_NAMES)
        assert truth["seed"] == cfg.seed
        assert truth["phi"] == cfg.adoption.phi
        assert io.adoption_params_from_blocks(truth["adoption"]) == cfg.adoption
        shares = truth["population"]["expected_class_shares"]
        assert abs(sum(shares.values()) - 1.0) < 1e-9
        counts = truth["population"]["class_counts"]
        assert sum(counts.values()) == cfg.n_persons
        assert truth["sample"]["counts"][STRATUM_ADOPTER] == sum(
            1 for p in data.sample if p.stratum == STRATUM_ADOPTER
        )
