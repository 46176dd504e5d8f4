import numpy as np
import pytest

from conftest import random_ama_menu, random_rochet_menu, simplex_points
from mechanism_engine import ama_mechanism as ama
from mechanism_engine.connectivity import (
    INFLATED_PRICE,
    Bijection,
    ReductionSet,
    ama_grid,
    build_bijection,
    connect_epsilon_reducible,
    connect_large,
    connect_zero_reducible,
    discretize,
    discretize_ama,
    discretize_rochet,
    distinct_allocations,
    large_menu_threshold,
    reduce_by_boost_deflation,
    reduce_by_price_inflation,
    reduce_menu,
    reduction_set_of_discretized,
    replicate_menu,
    rochet_grid,
)
from mechanism_engine.errors import CongruenceError, InvariantViolation, PreconditionError, SizeError
from mechanism_engine.menu_core import AmaMenu, RochetMenu, interpolate, path_point, validate
from mechanism_engine.rochet_mechanism import active_option, revenue_sample

LAMBDAS = np.linspace(0.0, 1.0, 11)


def random_profiles(rng, count, num_buyers, num_items):
    return np.stack([simplex_points(rng, count, num_items) for _ in range(num_buyers)], axis=1)


@pytest.fixture
def four_option_menu():
    return RochetMenu.with_default([[0.2], [0.5], [0.9]], [0.1, 0.3, 0.6])


class TestReductionSet:
    def test_requires_default_option(self):
        with pytest.raises(PreconditionError):
            ReductionSet.of([1, 2])

    def test_sorted_and_deduplicated(self):
        assert ReductionSet.of([3, 0, 3, 1]).indices == (0, 1, 3)

    def test_cap(self):
        assert [ReductionSet.cap(size) for size in (4, 9, 10, 15, 16)] == [2, 3, 3, 3, 4]
        assert ReductionSet.of([0, 1, 2]).fits(9)
        assert not ReductionSet.of([0, 1, 2, 3]).fits(9)

    def test_extended_uses_smallest_unused(self):
        assert ReductionSet.of([0, 2]).extended(4, 9).indices == (0, 1, 2, 3)

    def test_extended_beyond_size(self):
        with pytest.raises(SizeError):
            ReductionSet.of([0]).extended(5, 4)


class TestBijection:
    def test_shared_default(self):
        bijection = build_bijection(4, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))
        assert bijection.forward == ((0, 0), (1, 0), (0, 2), (1, 2))

    def test_disjoint_sets(self):
        bijection = build_bijection(4, [0, 1], [2, 3])
        assert bijection.forward == ((0, 2), (1, 3), (1, 2), (0, 3))

    def test_identical_sets_are_diagonal_on_the_set(self):
        keep = ReductionSet.of([0, 2, 5])
        bijection = build_bijection(9, keep, keep)
        for k in keep:
            assert bijection(k) == (k, k)

    def test_inverse(self):
        bijection = build_bijection(4, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))
        assert [bijection.inverse(bijection(k)) for k in range(4)] == [0, 1, 2, 3]

    @pytest.mark.parametrize("root", [2, 3, 4, 5])
    def test_random_sets_satisfy_constraints(self, rng, root):
        size = root * root
        for _ in range(25):
            first = ReductionSet.of([0, *rng.choice(np.arange(1, size), root - 1, replace=False)])
            second = ReductionSet.of([0, *rng.choice(np.arange(1, size), root - 1, replace=False)])
            bijection = build_bijection(size, first, second)
            assert len(set(bijection.forward)) == size
            bijection.verify(first, second)

    def test_non_square_size(self):
        with pytest.raises(SizeError):
            build_bijection(5, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))

    def test_wrong_set_size(self):
        with pytest.raises(SizeError):
            build_bijection(4, ReductionSet.of([0, 1, 2]), ReductionSet.of([0, 2]))

    def test_verify_rejects_broken_map(self):
        broken = Bijection(((0, 0), (0, 0), (1, 0), (1, 1)))
        with pytest.raises(InvariantViolation):
            broken.verify([0, 1], [0, 1])


class TestReplicate:
    def test_first_component(self, four_option_menu):
        bijection = build_bijection(4, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))
        replicated = replicate_menu(four_option_menu, bijection, 1)
        assert replicated.allclose(four_option_menu.take([0, 1, 0, 1]))

    def test_second_component(self, four_option_menu):
        bijection = build_bijection(4, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))
        replicated = replicate_menu(four_option_menu, bijection, 2)
        assert replicated.allclose(four_option_menu.take([0, 0, 2, 2]))

    def test_bad_component(self, four_option_menu):
        bijection = build_bijection(4, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))
        with pytest.raises(PreconditionError):
            replicate_menu(four_option_menu, bijection, 3)

    def test_size_mismatch(self, rng):
        bijection = build_bijection(4, ReductionSet.of([0, 1]), ReductionSet.of([0, 2]))
        with pytest.raises(CongruenceError):
            replicate_menu(random_rochet_menu(rng, 8, 1), bijection, 1)


class TestReductions:
    def test_keep_everything_is_identity(self, rng):
        menu = random_rochet_menu(rng, 5, 2)
        assert reduce_by_price_inflation(menu, ReductionSet.everything(menu.size)).allclose(menu)
        ama_menu = random_ama_menu(rng, 5, 2, 1)
        assert reduce_by_boost_deflation(ama_menu, ReductionSet.everything(ama_menu.size)).allclose(ama_menu)

    def test_inflated_option_never_bought(self):
        menu = RochetMenu.with_default([[1.0], [1.0]], [0.36, 0.9])
        reduced = reduce_by_price_inflation(menu, ReductionSet.of([0, 1]))
        np.testing.assert_array_equal(reduced.prices, [0.0, 0.36, INFLATED_PRICE])
        grid = np.linspace(0.0, 1.0, 1001)[:, None]
        assert not np.any(active_option(reduced, grid) == 2)

    def test_deflated_option_never_wins(self, rng):
        menu = random_ama_menu(rng, 6, 2, 2)
        reduced = reduce_by_boost_deflation(menu, ReductionSet.of([0, 1]))
        np.testing.assert_array_equal(reduced.boosts[2:], -3.0)
        np.testing.assert_array_equal(reduced.boosts[:2], menu.boosts[:2])
        winners = ama.winner(reduced, random_profiles(rng, 2000, 2, 2))
        assert set(np.unique(winners)) <= {0, 1}

    def test_inflation_segment_keeps_revenue_on_kept_events(self, rng):
        menu = random_rochet_menu(rng, 8, 2)
        keep = ReductionSet.of([0, 1, 3])
        reduced = reduce_by_price_inflation(menu, keep)
        points = simplex_points(rng, 5000, 2)
        base = revenue_sample(menu, points)
        kept = np.isin(active_option(menu, points), keep.indices)
        assert kept.any()
        for lam in LAMBDAS:
            along = revenue_sample(interpolate(menu, reduced, lam), points)
            assert np.all(along[kept] >= base[kept] - 1e-12)
            # outside the kept event the loss is at most one price
            assert np.all(along >= base - 1.0)

    def test_deflation_segment_keeps_payment_on_kept_events(self, rng):
        menu = random_ama_menu(rng, 8, 2, 1)
        keep = ReductionSet.of([0, 1, 2, 3, 4])
        reduced = reduce_by_boost_deflation(menu, keep)
        profiles = random_profiles(rng, 3000, 2, 1)
        batch = ama.vcg_payments(menu, profiles)
        kept = np.isin(batch.winners, keep.indices) & np.all(np.isin(batch.winners_without, keep.indices), axis=1)
        assert kept.any()
        for lam in LAMBDAS:
            along = ama.total_payment(interpolate(menu, reduced, lam), profiles)
            np.testing.assert_allclose(along[kept], batch.total_payments[kept], atol=1e-12)

    def test_reduce_menu_dispatches_on_kind(self, rng):
        keep = ReductionSet.of([0, 1])
        assert reduce_menu(random_rochet_menu(rng, 3, 1), keep).prices[2] == INFLATED_PRICE
        assert reduce_menu(random_ama_menu(rng, 3, 3, 1), keep).boosts[2] == -4.0


class TestZeroReduciblePaths:
    def test_three_pieces(self, rng):
        a, b = random_rochet_menu(rng, 8, 2), random_rochet_menu(rng, 8, 2)
        path = connect_zero_reducible(a, ReductionSet.of([0, 2, 5]), b, ReductionSet.of([0, 1, 7]))
        assert path.num_pieces == 3
        assert path.start is a and path.end is b

    def test_identical_reducible_endpoints(self, rng):
        keep = ReductionSet.of([0, 2])
        menu = reduce_by_price_inflation(random_rochet_menu(rng, 3, 1), keep)
        path = connect_zero_reducible(menu, keep, menu, keep)
        points = simplex_points(rng, 500, 1)
        base = revenue_sample(menu, points)
        for t in np.linspace(0.0, 1.0, 13):
            np.testing.assert_allclose(revenue_sample(path_point(path, t), points), base, atol=1e-12)

    def test_pads_non_square_menus(self, rng):
        a, b = random_ama_menu(rng, 4, 2, 1), random_ama_menu(rng, 4, 2, 1)
        path = connect_zero_reducible(a, ReductionSet.of([0, 1]), b, ReductionSet.of([0, 2]))
        assert [menu.size for menu in path.breakpoints] == [9, 9, 9, 9]
        assert all(validate(menu) == [] for menu in path.breakpoints)

    def test_first_piece_never_loses_on_kept_events(self, rng):
        a, b = random_rochet_menu(rng, 8, 2), random_rochet_menu(rng, 8, 2)
        keep = ReductionSet.of([0, 2, 5])
        path = connect_zero_reducible(a, keep, b, ReductionSet.of([0, 1, 7]))
        start, hat = path.breakpoints[:2]
        points = simplex_points(rng, 10_000, 2)
        base = revenue_sample(start, points)
        kept = np.isin(active_option(start, points), keep.indices)
        for lam in LAMBDAS:
            along = revenue_sample(interpolate(start, hat, lam), points)
            assert np.all(along[kept] >= base[kept] - 1e-12)

    def test_middle_piece_dominates_mixture(self, rng):
        a, b = random_rochet_menu(rng, 8, 2), random_rochet_menu(rng, 8, 2)
        path = connect_zero_reducible(a, ReductionSet.of([0, 2, 5]), b, ReductionSet.of([0, 1, 7]))
        hat_a, hat_b = path.breakpoints[1:3]
        points = simplex_points(rng, 10_000, 2)
        rev_a, rev_b = revenue_sample(hat_a, points), revenue_sample(hat_b, points)
        for lam in LAMBDAS:
            along = revenue_sample(interpolate(hat_a, hat_b, lam), points)
            assert np.all(along >= lam * rev_a + (1 - lam) * rev_b - 1e-12)


def random_keep(rng, size):
    """Option 0 plus up to sqrt(size) - 1 random regular options"""
    count = int(rng.integers(1, ReductionSet.cap(size) + 1))
    return ReductionSet.of([0, *rng.choice(np.arange(1, size), count - 1, replace=False)])


def worst_path_slack(path, payments, samples):
    """Smallest payment along every piece (11 points each) minus the per-sample endpoint minimum"""
    floor = np.minimum(payments(path.start, samples), payments(path.end, samples))
    worst = np.inf
    for start, end in path.pieces():
        for lam in LAMBDAS:
            worst = min(worst, float(np.min(payments(interpolate(end, start, lam), samples) - floor)))
    return worst


class TestZeroReduciblePointwise:
    @pytest.mark.parametrize("size", [4, 9, 16])
    @pytest.mark.parametrize("num_items", [1, 2, 3])
    def test_rochet_pairs(self, size, num_items):
        rng = np.random.default_rng(1000 * size + num_items)
        points = simplex_points(rng, 10_000, num_items)
        for _ in range(23):
            keep_a, keep_b = random_keep(rng, size), random_keep(rng, size)
            menu_a = reduce_by_price_inflation(random_rochet_menu(rng, size - 1, num_items), keep_a)
            menu_b = reduce_by_price_inflation(random_rochet_menu(rng, size - 1, num_items), keep_b)
            path = connect_zero_reducible(menu_a, keep_a, menu_b, keep_b)
            assert path.num_pieces == 3
            assert worst_path_slack(path, revenue_sample, points) >= -1e-9

    @pytest.mark.parametrize("size", [4, 9])
    @pytest.mark.parametrize("num_buyers, num_items", [(2, 1), (2, 2), (3, 1)])
    def test_ama_pairs(self, size, num_buyers, num_items):
        rng = np.random.default_rng(100 * size + 10 * num_buyers + num_items)
        profiles = random_profiles(rng, 2000, num_buyers, num_items)
        for _ in range(10):
            keep_a, keep_b = random_keep(rng, size), random_keep(rng, size)
            menu_a = reduce_by_boost_deflation(random_ama_menu(rng, size - 1, num_buyers, num_items), keep_a)
            menu_b = reduce_by_boost_deflation(random_ama_menu(rng, size - 1, num_buyers, num_items), keep_b)
            path = connect_zero_reducible(menu_a, keep_a, menu_b, keep_b)
            assert worst_path_slack(path, ama.total_payment, profiles) >= -1e-9


class TestEpsilonReduciblePaths:
    def test_five_pieces(self, rng):
        a, b = random_rochet_menu(rng, 8, 1), random_rochet_menu(rng, 8, 1)
        keep_a, keep_b = ReductionSet.of([0, 4, 6]), ReductionSet.of([0, 1, 2])
        path = connect_epsilon_reducible(a, keep_a, b, keep_b, mode="rochet")
        assert path.num_pieces == 5
        assert path.breakpoints[1].allclose(reduce_by_price_inflation(a, keep_a))
        assert path.breakpoints[4].allclose(reduce_by_price_inflation(b, keep_b))

    def test_ama_reductions(self, rng):
        a, b = random_ama_menu(rng, 3, 2, 2), random_ama_menu(rng, 3, 2, 2)
        path = connect_epsilon_reducible(a, ReductionSet.of([0, 1]), b, ReductionSet.of([0, 3]))
        assert path.num_pieces == 5
        np.testing.assert_array_equal(path.breakpoints[1].boosts[2:], -3.0)
        assert all(validate(menu) == [] for menu in path.breakpoints)

    def test_mode_mismatch(self, rng):
        a, b = random_rochet_menu(rng, 3, 1), random_rochet_menu(rng, 3, 1)
        with pytest.raises(PreconditionError):
            connect_epsilon_reducible(a, ReductionSet.of([0, 1]), b, ReductionSet.of([0, 1]), mode="ama")

    def test_mixed_kinds(self, rng):
        with pytest.raises(CongruenceError):
            connect_epsilon_reducible(
                random_rochet_menu(rng, 3, 1), ReductionSet.of([0, 1]),
                random_ama_menu(rng, 3, 1, 1), ReductionSet.of([0, 1]),
            )

    def test_identical_endpoints_lose_nothing_on_kept_events(self, rng):
        menu = random_rochet_menu(rng, 8, 2)
        keep = ReductionSet.of([0, 3, 6])
        path = connect_epsilon_reducible(menu, keep, menu, keep)
        points = simplex_points(rng, 5000, 2)
        base = revenue_sample(menu, points)
        kept = np.isin(active_option(menu, points), keep.indices)
        for t in np.linspace(0.0, 1.0, 21):
            along = revenue_sample(path_point(path, t), points)
            assert np.all(along[kept] >= base[kept] - 1e-12)


class TestDiscretization:
    def test_rochet_grid_arithmetic(self):
        menu = RochetMenu.with_default([[0.537]], [0.5])
        rounded = discretize_rochet(menu, 0.2)
        assert rounded.allocations[1, 0] == pytest.approx(0.53)
        assert rounded.prices[1] == pytest.approx(0.45)
        grid = rochet_grid(0.2)
        assert grid.step == pytest.approx(0.01)
        assert grid.loss_bound() == pytest.approx(0.2)

    def test_grid_values_stay_put(self):
        menu = RochetMenu.with_default([[0.25, 0.5], [0.75, 0.0]], [0.0, 0.0])
        assert discretize_rochet(menu, 1.0).allclose(menu, atol=1e-15)

    def test_ama_grid_arithmetic(self):
        grid = ama_grid(0.2, 2)
        assert grid.fine_epsilon == pytest.approx(0.000625)
        assert grid.discount == pytest.approx(0.0125)
        assert grid.step == pytest.approx(0.0003125)
        assert grid.loss_bound() <= 0.2

        menu = AmaMenu.with_default([[[0.5], [0.3]]], [-0.4])
        rounded = discretize_ama(menu, 0.2)
        np.testing.assert_allclose(rounded.allocations[1, :, 0], [0.5, 0.3], atol=1e-12)
        assert rounded.boosts[1] == pytest.approx(-0.395)

    def test_all_zero_ama_menu_unchanged(self):
        menu = AmaMenu.with_default(np.zeros((3, 2, 2)), np.zeros(3))
        assert discretize_ama(menu, 0.25).allclose(menu)

    @pytest.mark.parametrize("epsilon", [0.0, -0.1, 1.5])
    def test_rochet_epsilon_range(self, single_item_menu, epsilon):
        with pytest.raises(PreconditionError):
            discretize_rochet(single_item_menu, epsilon)

    def test_ama_epsilon_range(self, second_price_menu):
        with pytest.raises(PreconditionError):
            discretize_ama(second_price_menu, 0.3)

    def test_discretized_menus_stay_valid(self, rng):
        for _ in range(20):
            assert validate(discretize(random_ama_menu(rng, 6, 3, 2), 0.25)) == []
            assert validate(discretize(random_rochet_menu(rng, 6, 3), 0.5)) == []

    def test_distinct_allocation_count(self, rng):
        menu = discretize_rochet(random_rochet_menu(rng, 200, 2), 1.0)
        assert distinct_allocations(menu) <= 4 ** 2

    def test_rochet_segment_loss(self, rng):
        epsilon = 0.2
        points = simplex_points(rng, 5000, 2)
        for _ in range(5):
            menu = random_rochet_menu(rng, 20, 2)
            rounded = discretize_rochet(menu, epsilon)
            base = revenue_sample(menu, points)
            for lam in LAMBDAS:
                along = revenue_sample(interpolate(menu, rounded, lam), points)
                assert np.all(along >= base - rochet_grid(epsilon).loss_bound() - 1e-9)

    @pytest.mark.parametrize("epsilon", [0.1, 0.25])
    def test_ama_segment_loss(self, rng, epsilon):
        profiles = random_profiles(rng, 10_000, 2, 2)
        for _ in range(10):
            menu = random_ama_menu(rng, 8, 2, 2)
            rounded = discretize_ama(menu, epsilon)
            base = ama.total_payment(menu, profiles)
            for lam in LAMBDAS:
                along = ama.total_payment(interpolate(menu, rounded, lam), profiles)
                assert np.all(along >= base - epsilon - 1e-9)


class TestReductionSetOfDiscretized:
    def test_cheapest_copy_represents_allocation(self):
        menu = RochetMenu.with_default([[0.5], [0.5]], [0.3, 0.2])
        assert reduction_set_of_discretized(menu).indices == (0, 2)

    def test_largest_boost_represents_allocation(self):
        menu = AmaMenu.with_default([[[0.5], [0.5]], [[0.5], [0.5]]], [0.1, 0.3])
        assert reduction_set_of_discretized(menu).indices == (0, 2)

    def test_equal_copies_go_to_lowest_index(self):
        menu = RochetMenu.with_default([[0.5], [0.5], [0.5]], [0.2, 0.2, 0.2])
        assert reduction_set_of_discretized(menu).indices == (0, 1)

    def test_all_distinct(self, four_option_menu):
        assert reduction_set_of_discretized(four_option_menu).indices == (0, 1, 2, 3)

    def test_representative_is_the_active_copy(self, rng):
        menu = discretize_rochet(random_rochet_menu(rng, 100, 1), 0.5)
        keep = reduction_set_of_discretized(menu)
        points = simplex_points(rng, 5000, 1)
        assert np.all(np.isin(active_option(menu, points), keep.indices))

    def test_size_fits_at_threshold(self, rng):
        for _ in range(5):
            menu = discretize_rochet(random_rochet_menu(rng, 255, 1), 0.5)
            assert reduction_set_of_discretized(menu).fits(menu.size)


class TestLargeMenus:
    @pytest.mark.parametrize(
        "kind, epsilon, num_items, num_buyers, expected",
        [
            ("rochet", 1.0, 1, 1, 16),
            ("rochet", 0.5, 1, 1, 256),
            ("rochet", 0.5, 2, 1, 256 ** 2),
            ("ama", 0.25, 1, 2, 2048 ** 4),
        ],
    )
    def test_threshold(self, kind, epsilon, num_items, num_buyers, expected):
        assert large_menu_threshold(kind, epsilon, num_items, num_buyers) == expected

    def test_below_threshold(self, rng):
        a, b = random_rochet_menu(rng, 9, 1), random_rochet_menu(rng, 9, 1)
        with pytest.raises(PreconditionError, match="256"):
            connect_large(a, b, 0.5)

    def test_unenforced_threshold_still_builds(self, rng):
        a, b = random_ama_menu(rng, 4, 2, 1), random_ama_menu(rng, 4, 2, 1)
        path = connect_large(a, b, 0.25, mode="ama", enforce_threshold=False)
        assert path.num_pieces == 5
        assert all(validate(menu) == [] for menu in path.breakpoints)

    def test_pointwise_guarantee(self, rng):
        epsilon = 0.5
        a, b = random_rochet_menu(rng, 255, 1), random_rochet_menu(rng, 255, 1)
        path = connect_large(a, b, epsilon, mode="rochet")
        assert path.num_pieces == 5 and path.start.size == 256
        points = simplex_points(rng, 10_000, 1)
        floor = np.minimum(revenue_sample(a, points), revenue_sample(b, points)) - epsilon
        for t in np.linspace(0.0, 1.0, 41):
            assert np.all(revenue_sample(path_point(path, t), points) >= floor - 1e-9)

    def test_outer_pieces_lose_at_most_the_grid_bound(self, rng):
        epsilon = 0.5
        bound = rochet_grid(epsilon).loss_bound()
        points = simplex_points(rng, 10_000, 1)
        for _ in range(3):
            a, b = random_rochet_menu(rng, 255, 1), random_rochet_menu(rng, 255, 1)
            path = connect_large(a, b, epsilon, mode="rochet")
            (first, fine_first), (fine_last, last) = path.pieces()[0], path.pieces()[-1]
            base_a, base_b = revenue_sample(first, points), revenue_sample(last, points)
            for lam in LAMBDAS:
                assert np.all(revenue_sample(interpolate(fine_first, first, lam), points) >= base_a - bound - 1e-9)
                assert np.all(revenue_sample(interpolate(fine_last, last, lam), points) >= base_b - bound - 1e-9)
