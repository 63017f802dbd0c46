import numpy as np
import pytest

from adoptnet.model import (
    STRATUM_ADOPTER,
    STRATUM_POPULATION,
    InvalidInputError,
    InvalidStateError,
    NetworkTimeline,
    Person,
    SamplingWeights,
    Zone,
    ZoneRoles,
    compute_weights,
    expand_panel,
    observed_cumulative_adopters,
    risk_months,
    weights_from_persons,
)


def make_zones():
    return [
        Zone("a", 10.0, station_month=1),
        Zone("b", 5.0, onstreet_month=3),
        Zone("c", 2.0),
    ]


def make_network(horizon=6):
    dist = np.array(
        [
            [0.0, 2.0, 5.0],
            [2.0, 0.0, 4.0],
            [5.0, 4.0, 0.0],
        ]
    )
    return NetworkTimeline(make_zones(), dist, horizon=horizon)


class TestZone:
    def test_coverage_is_permanent(self):
        z = Zone("a", 1.0, station_month=4)
        assert not z.covered(3)
        assert z.covered(4)
        assert z.covered(40)

    def test_never_activated(self):
        z = Zone("a", 1.0)
        assert not z.covered(1000)

    def test_either_facility_covers(self):
        z = Zone("a", 1.0, onstreet_month=2)
        assert not z.has_station(5)
        assert z.has_onstreet(5)
        assert z.covered(2)

    def test_rejects_negative_density(self):
        with pytest.raises(InvalidInputError):
            Zone("a", -1.0)

    def test_rejects_month_zero(self):
        with pytest.raises(InvalidInputError):
            Zone("a", 1.0, station_month=0)


class TestNetworkTimeline:
    def test_active_destinations_grow(self):
        net = make_network()
        assert net.active_destinations(1) == ("a",)
        assert net.active_destinations(2) == ("a",)
        assert net.active_destinations(3) == ("a", "b")
        # never shrinks
        prev = set()
        for t in range(1, 7):
            cur = set(net.active_destinations(t))
            assert prev <= cur
            prev = cur

    def test_distance_lookup_symmetric(self):
        net = make_network()
        assert net.distance("a", "c") == 5.0
        assert net.distance("c", "a") == 5.0
        assert net.distance("b", "b") == 0.0

    def test_mapping_distances(self):
        net = NetworkTimeline(
            make_zones(),
            {("a", "b"): 2.0, ("a", "c"): 5.0, ("b", "c"): 4.0},
            horizon=6,
        )
        assert net.distance("c", "b") == 4.0

    def test_missing_pair_rejected(self):
        with pytest.raises(InvalidInputError):
            NetworkTimeline(make_zones(), {("a", "b"): 2.0}, horizon=6)

    def test_asymmetric_matrix_rejected(self):
        bad = np.array([[0.0, 1.0, 2.0], [1.5, 0.0, 3.0], [2.0, 3.0, 0.0]])
        with pytest.raises(InvalidInputError):
            NetworkTimeline(make_zones(), bad, horizon=6)

    def test_nonzero_diagonal_rejected(self):
        bad = np.array([[0.1, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]])
        with pytest.raises(InvalidInputError):
            NetworkTimeline(make_zones(), bad, horizon=6)

    def test_nearest_covered(self):
        net = make_network()
        # month 1: only a is covered
        assert net.nearest_covered("c", 1) == ("a", 5.0)
        # month 3: b activates and is nearer to c
        assert net.nearest_covered("c", 3) == ("b", 4.0)

    def test_nearest_covered_tie_lowest_id(self):
        zones = [
            Zone("p", 1.0, station_month=1),
            Zone("q", 1.0, station_month=1),
            Zone("r", 1.0),
        ]
        dist = np.array([[0.0, 2.0, 3.0], [2.0, 0.0, 3.0], [3.0, 3.0, 0.0]])
        net = NetworkTimeline(zones, dist, horizon=2)
        assert net.nearest_covered("r", 1) == ("p", 3.0)

    def test_nearest_covered_no_supply(self):
        zones = [Zone("a", 1.0, station_month=5), Zone("b", 1.0)]
        dist = np.array([[0.0, 1.0], [1.0, 0.0]])
        net = NetworkTimeline(zones, dist, horizon=6)
        with pytest.raises(InvalidStateError):
            net.nearest_covered("b", 4)

    def test_unknown_role_zone_rejected(self):
        with pytest.raises(InvalidInputError):
            NetworkTimeline(
                make_zones(),
                np.zeros((3, 3)),
                horizon=6,
                roles=ZoneRoles(tech_firm="nope"),
            )

    def test_with_additional_supply(self):
        net = make_network(horizon=6)
        out = net.with_additional_supply([("c", "station", 8)], horizon=12)
        assert out.horizon == 12
        assert "c" in out.active_destinations(8)
        assert "c" not in out.active_destinations(7)
        # original untouched
        assert "c" not in net.active_destinations(8)

    def test_with_additional_supply_keeps_earlier_activation(self):
        net = make_network(horizon=6)
        out = net.with_additional_supply([("a", "station", 9)], horizon=12)
        assert out.zones["a"].station_month == 1


class TestPerson:
    def test_valid_adopter(self):
        p = Person("n1", "a", 6.5, 1, 0, STRATUM_ADOPTER, adoption_month=4)
        assert p.adoption_month == 4

    def test_population_with_adoption_rejected(self):
        with pytest.raises(InvalidInputError):
            Person("n1", "a", 6.5, 1, 0, STRATUM_POPULATION, adoption_month=4)

    def test_unknown_stratum_rejected(self):
        with pytest.raises(InvalidInputError):
            Person("n1", "a", 6.5, 1, 0, "census")

    def test_bad_dummy_rejected(self):
        with pytest.raises(InvalidInputError):
            Person("n1", "a", 6.5, 2, 0, STRATUM_ADOPTER)


class TestExpandPanel:
    def test_adopter_absorbing(self):
        p = Person("n1", "a", 6.5, 1, 0, STRATUM_ADOPTER, adoption_month=3)
        obs = expand_panel(p, horizon=6)
        assert [(o.month, o.adopt) for o in obs] == [
            (1, False),
            (2, False),
            (3, True),
        ]

    def test_never_adopter_full_horizon(self):
        p = Person("n1", "a", 6.5, 1, 0, STRATUM_POPULATION)
        obs = expand_panel(p, horizon=4)
        assert len(obs) == 4
        assert not any(o.adopt for o in obs)

    def test_month_one_adopter(self):
        p = Person("n1", "a", 6.5, 1, 0, STRATUM_ADOPTER, adoption_month=1)
        obs = expand_panel(p, horizon=6)
        assert [(o.month, o.adopt) for o in obs] == [(1, True)]

    def test_adoption_beyond_horizon_rejected(self):
        p = Person("n1", "a", 6.5, 1, 0, STRATUM_ADOPTER, adoption_month=7)
        with pytest.raises(InvalidInputError):
            expand_panel(p, horizon=6)

    def test_exactly_one_adoption_row(self):
        # property: any adopter contributes exactly one adopt=True row, at
        # their adoption month, and it is the last row
        rng = np.random.default_rng(0)
        for _ in range(50):
            h = int(rng.integers(1, 40))
            m = int(rng.integers(1, h + 1))
            p = Person("n", "a", 1.0, 0, 0, STRATUM_ADOPTER, adoption_month=m)
            obs = expand_panel(p, h)
            assert len(obs) == m == risk_months(p, h)
            assert sum(o.adopt for o in obs) == 1
            assert obs[-1].adopt and obs[-1].month == m


class TestWeights:
    def test_matches_stratified_design(self):
        # 1847 adopters + 2724 population persons; adopters are 0.03% of the
        # region's population
        w = compute_weights(
            {STRATUM_ADOPTER: 1847, STRATUM_POPULATION: 2724},
            {STRATUM_ADOPTER: 0.0003, STRATUM_POPULATION: 0.9997},
        )
        n = 1847 + 2724
        np.testing.assert_allclose(
            w.for_stratum(STRATUM_ADOPTER), 0.0003 / (1847 / n)
        )
        np.testing.assert_allclose(
            w.for_stratum(STRATUM_POPULATION), 0.9997 / (2724 / n)
        )
        # adopters are oversampled, so their weight must shrink them
        assert w.for_stratum(STRATUM_ADOPTER) < 1.0
        assert w.for_stratum(STRATUM_POPULATION) > 1.0

    def test_self_weighting_sample(self):
        # when sample fractions equal population fractions everything is 1
        w = compute_weights(
            {STRATUM_ADOPTER: 30, STRATUM_POPULATION: 70},
            {STRATUM_ADOPTER: 0.3, STRATUM_POPULATION: 0.7},
        )
        np.testing.assert_allclose(w.for_stratum(STRATUM_ADOPTER), 1.0)
        np.testing.assert_allclose(w.for_stratum(STRATUM_POPULATION), 1.0)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(InvalidInputError):
            compute_weights(
                {STRATUM_ADOPTER: 10, STRATUM_POPULATION: 10},
                {STRATUM_ADOPTER: 0.3, STRATUM_POPULATION: 0.6},
            )

    def test_zero_count_rejected(self):
        with pytest.raises(InvalidInputError):
            compute_weights(
                {STRATUM_ADOPTER: 0, STRATUM_POPULATION: 10},
                {STRATUM_ADOPTER: 0.5, STRATUM_POPULATION: 0.5},
            )

    def test_for_person_dispatch(self):
        w = SamplingWeights({STRATUM_ADOPTER: 0.5, STRATUM_POPULATION: 2.0})
        p = Person("n1", "a", 1.0, 0, 0, STRATUM_ADOPTER, adoption_month=1)
        assert w.for_person(p) == 0.5

    def test_weights_from_persons(self):
        persons = [
            Person("n1", "a", 1.0, 0, 0, STRATUM_ADOPTER, adoption_month=1),
            Person("n2", "a", 1.0, 0, 0, STRATUM_POPULATION),
            Person("n3", "a", 1.0, 0, 0, STRATUM_POPULATION),
        ]
        w = weights_from_persons(
            persons, {STRATUM_ADOPTER: 0.1, STRATUM_POPULATION: 0.9}
        )
        np.testing.assert_allclose(
            w.for_stratum(STRATUM_ADOPTER), 0.1 / (1 / 3)
        )


class TestObservedCumulative:
    def test_counts(self):
        persons = [
            Person("n1", "a", 1.0, 0, 0, STRATUM_ADOPTER, adoption_month=1),
            Person("n2", "a", 1.0, 0, 0, STRATUM_ADOPTER, adoption_month=1),
            Person("n3", "a", 1.0, 0, 0, STRATUM_ADOPTER, adoption_month=3),
            Person("n4", "a", 1.0, 0, 0, STRATUM_POPULATION),
        ]
        y = observed_cumulative_adopters(persons, horizon=4)
        np.testing.assert_array_equal(y, [0.0, 2.0, 2.0, 3.0, 3.0])

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(1)
        persons = []
        for i in range(200):
            m = int(rng.integers(1, 25)) if rng.random() < 0.4 else None
            persons.append(
                Person(
                    f"n{i}",
                    "a",
                    1.0,
                    0,
                    0,
                    STRATUM_ADOPTER if m is not None else STRATUM_POPULATION,
                    adoption_month=m,
                )
            )
        y = observed_cumulative_adopters(persons, horizon=24)
        assert y[0] == 0.0
        assert (np.diff(y) >= 0).all()
