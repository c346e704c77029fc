"""Tests for metrics.py (l^MG, per-episode metrics, aggregation, tables)."""

import itertools
from dataclasses import replace

import numpy as np
import pytest
from scenes import center, episode_in, from_rows

from sdmnav.audio import default_library
from sdmnav.episode import generate_episode
from sdmnav.errors import DatasetFormatError, MetricsError
from sdmnav.metrics import (
    EpisodeResult,
    aggregate,
    episode_metrics,
    l_mg,
    metrics_rows,
    n_goals_label,
    reachability_by_set,
)
from sdmnav.scene import geodesic_distance


def result(episode, reached_order=(), path_length=0.0, outcome=None):
    n_reached = len(reached_order)
    success = int(n_reached == episode.n_goals)
    return EpisodeResult(
        episode=episode,
        success=success,
        n_reached=n_reached,
        reached_order=tuple(reached_order),
        path_length=path_length,
        outcome=outcome or ("AllReached" if success else "WrongFound"),
    )


class TestLmg:
    def test_two_goals_on_a_corridor(self, corridor9):
        assert l_mg(corridor9, center(0), [center(4), center(8)]) == 2.0
        assert l_mg(corridor9, center(0), [center(8), center(4)]) == 2.0

    def test_single_goal(self, rooms):
        assert l_mg(rooms, center(0, 0), [center(12, 5)]) == geodesic_distance(rooms, center(0, 0), center(12, 5))

    def test_empty(self, corridor9):
        assert l_mg(corridor9, center(3), []) == 0.0

    def test_never_exceeds_an_explicit_order(self, lscene):
        rng = np.random.default_rng(4)
        cells = lscene.navigable_cells()
        for _ in range(20):
            points = [lscene.cell_center(cells[k]) for k in rng.choice(len(cells), size=6, replace=False)]
            start, reached = points[0], points[1:]
            best = l_mg(lscene, start, reached)
            for order in itertools.permutations(reached):
                length = geodesic_distance(lscene, start, order[0])
                length += sum(geodesic_distance(lscene, a, b) for a, b in zip(order, order[1:]))
                assert best <= length + 1e-12

    def test_unreachable(self):
        grid = from_rows(["..#.."])
        with pytest.raises(MetricsError):
            l_mg(grid, center(0), [center(4)])


class TestEpisodeMetrics:
    def test_spl_and_ppl_of_a_success(self, corridor9):
        m = episode_metrics(corridor9, result(episode_in(corridor9, 0, [8]), (0,), 2.5))
        assert m.success == 1.0
        assert m.spl == pytest.approx(0.8)
        assert m.progress == 1.0
        assert m.ppl == pytest.approx(0.8)

    def test_ppl_with_both_goals(self, corridor9):
        m = episode_metrics(corridor9, result(episode_in(corridor9, 0, [4, 8]), (0, 1), 2.5))
        assert m.ppl == pytest.approx(0.8)

    def test_partial_progress(self, corridor9):
        m = episode_metrics(corridor9, result(episode_in(corridor9, 0, [4, 8]), (0,), 1.5))
        assert m.success == 0.0
        assert m.spl == 0.0
        assert m.progress == 0.5
        assert m.ppl == pytest.approx(0.5 * 1.0 / 1.5)

    def test_nothing_reached(self, corridor9):
        m = episode_metrics(corridor9, result(episode_in(corridor9, 0, [4, 8]), (), 3.0))
        assert m.progress == 0.0
        assert m.ppl == 0.0

    def test_failure_short_path(self, corridor9):
        m = episode_metrics(corridor9, result(episode_in(corridor9, 0, [4, 8]), (1,), 0.5))
        assert m.spl == 0.0
        assert 0.0 <= m.ppl <= m.progress

    def test_optimal_success_is_perfect(self, corridor9):
        m = episode_metrics(corridor9, result(episode_in(corridor9, 0, [8]), (0,), 2.0))
        assert tuple(m) == (1.0, 1.0, 1.0, 1.0)

    def test_scene_mismatch(self, corridor9, rooms):
        with pytest.raises(MetricsError, match="evaluated on"):
            episode_metrics(rooms, result(episode_in(corridor9, 0, [8]), (0,), 2.0))


class TestAggregate:
    def test_means(self, corridor9):
        episode = episode_in(corridor9, 0, [8])
        report = aggregate({"corridor-9": corridor9}, [result(episode, (0,), 2.5), result(episode, (0,), 5.0)])
        assert report.n == 2
        assert report.spl == pytest.approx(0.6)
        assert report.success == 1.0

    def test_empty(self, corridor9):
        with pytest.raises(MetricsError, match="empty"):
            aggregate({"corridor-9": corridor9}, [])

    def test_unknown_scene(self, corridor9):
        with pytest.raises(MetricsError, match="no scene"):
            aggregate({}, [result(episode_in(corridor9, 0, [8]), (0,), 2.0)])

    def test_spl_equals_ppl_for_successes(self, rooms):
        rng = np.random.default_rng(12)
        results = []
        for n in (1, 2, 3):
            episode = generate_episode(rooms, n, rng)
            results.append(result(episode, tuple(range(n)), 30.0))
        for r in results:
            m = episode_metrics(rooms, r)
            assert m.spl == pytest.approx(m.ppl)


class TestEpisodeResult:
    def test_inconsistent_success(self, corridor9):
        with pytest.raises(MetricsError, match="success"):
            EpisodeResult(episode_in(corridor9, 0, [8]), 0, 1, (0,), 2.0, "AllReached")

    def test_reached_twice(self, corridor9):
        with pytest.raises(MetricsError, match="twice"):
            EpisodeResult(episode_in(corridor9, 0, [4, 8]), 1, 2, (0, 0), 2.0, "AllReached")

    def test_goal_out_of_range(self, corridor9):
        with pytest.raises(MetricsError, match="outside"):
            EpisodeResult(episode_in(corridor9, 0, [8]), 1, 1, (1,), 2.0, "AllReached")

    def test_count_mismatch(self, corridor9):
        with pytest.raises(MetricsError, match="n_reached"):
            EpisodeResult(episode_in(corridor9, 0, [8]), 1, 2, (0,), 2.0, "AllReached")

    def test_record(self, corridor9):
        r = result(episode_in(corridor9, 0, [4, 8]), (1,), 1.75)
        assert EpisodeResult.from_record(r.to_record()) == r

    def test_malformed_record(self):
        with pytest.raises(DatasetFormatError, match="malformed result"):
            EpisodeResult.from_record({"success": 1})


class TestTables:
    def test_n_goals_label(self, corridor9):
        one = result(episode_in(corridor9, 0, [8]))
        three = result(episode_in(corridor9, 0, [4, 6, 8]))
        assert n_goals_label([one, one]) == "1"
        assert n_goals_label([one, three]) == "1-3"

    def test_rows_are_formatted(self, corridor9):
        report = aggregate({"corridor-9": corridor9}, [result(episode_in(corridor9, 0, [8]), (0,), 2.5)])
        assert metrics_rows([("privileged", "1", report)]) == [
            ["privileged", "1", "1.000000", "0.800000", "1.000000", "0.800000", "1"]
        ]

    def test_reachability_by_set(self, corridor9):
        library = default_library()
        # category 0 is loud and long, category 3 is quiet and short
        episode = episode_in(corridor9, 0, [4, 8])
        episode = replace(episode, goals=(episode.goals[0], replace(episode.goals[1], category=3)))
        fractions = reachability_by_set([result(episode, (0,), 1.0)], library, ["loud", "quiet", "all"])
        assert fractions == {"loud": 1.0, "quiet": 0.0, "all": 0.5}


@pytest.mark.slow
class TestMetricsProperties:
    def test_ten_thousand_random_cases(self, lscene, rooms):
        rng = np.random.default_rng(2024)
        grids = [lscene, rooms]
        for case in range(10_000):
            grid = grids[case % 2]
            cells = grid.navigable_cells()
            n = int(rng.integers(1, 6))
            picks = rng.choice(len(cells), size=n + 1, replace=False)
            start, *goals = [cells[k] for k in picks]
            episode = episode_in(grid, start, goals)
            reached = tuple(int(k) for k in rng.permutation(n)[: int(rng.integers(0, n + 1))])
            r = result(episode, reached, float(rng.uniform(0.0, 20.0)))
            m = episode_metrics(grid, r)

            assert 0.0 <= m.spl <= m.success
            assert 0.0 <= m.ppl <= m.progress <= 1.0
            points = [episode.goals[k].position for k in reached]
            best = l_mg(grid, episode.start_pos, points)
            shuffled = [points[k] for k in rng.permutation(len(points))]
            assert l_mg(grid, episode.start_pos, shuffled) == best
            if points:
                length = geodesic_distance(grid, episode.start_pos, shuffled[0])
                length += sum(geodesic_distance(grid, a, b) for a, b in zip(shuffled, shuffled[1:]))
                assert best <= length
