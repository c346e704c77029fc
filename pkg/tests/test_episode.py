"""Tests for episode.py (tours, generator, JSON Lines dataset)."""

import json

import numpy as np
import pytest
from scenes import center, from_rows, open_hall

from sdmnav.episode import (
    HEADINGS,
    Episode,
    Goal,
    best_tour,
    bucket_accepts,
    check_episode,
    generate_episode,
    min_tour_length,
    pair_is_valid,
    pair_thresholds,
    parse_dataset,
    rejection_probability,
    write_dataset,
)
from sdmnav.errors import DatasetFormatError, EpisodeError, SamplingBudgetExhausted
from sdmnav.scene import UNREACHABLE, Point


def make_episode(scene_id="corridor-7", start=(0, 0), goals=((3, 0),), heading=0):
    return Episode(
        scene_id=scene_id,
        start_pos=center(*start),
        start_heading=heading,
        goals=tuple(Goal(center(*g), 0) for g in goals),
        playback_offsets=(0.0,) * len(goals),
        seed=7,
    )


# ---------------------------------------------------------------------------
# Tours
# ---------------------------------------------------------------------------

class TestMinTourLength:
    def test_corridor_from_the_end(self, corridor7):
        assert min_tour_length(corridor7, center(0), [center(3), center(6)]) == 1.5

    def test_corridor_from_the_middle(self, corridor7):
        assert min_tour_length(corridor7, center(3), [center(0), center(6)]) == 2.25

    def test_empty_goal_set(self, corridor7):
        assert min_tour_length(corridor7, center(3), []) == 0.0

    def test_best_order(self, corridor7):
        length, order = best_tour(corridor7, center(0), [center(6), center(3)])
        assert length == 1.5
        assert order == (1, 0)

    def test_permutation_invariance(self, rooms):
        goals = [center(12, 5), center(2, 4), center(8, 0)]
        start = center(0, 0)
        assert min_tour_length(rooms, start, goals) == min_tour_length(rooms, start, goals[::-1])

    def test_bellman_consistency(self, rooms):
        start = center(0, 0)
        goals = [center(12, 5), center(2, 4), center(8, 0)]
        total = min_tour_length(rooms, start, goals)
        candidates = []
        for k, g in enumerate(goals):
            rest = goals[:k] + goals[k + 1:]
            candidates.append(min_tour_length(rooms, start, [g]) + min_tour_length(rooms, g, rest))
        assert all(total <= c for c in candidates)
        assert total in candidates

    def test_unreachable_goal(self):
        grid = from_rows(["..#.."])
        assert min_tour_length(grid, center(0), [center(4)]) == UNREACHABLE

    def test_too_many_goals(self, hall):
        with pytest.raises(EpisodeError, match="at most 8"):
            min_tour_length(hall, center(0, 0), [center(k, 1) for k in range(9)])


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

class TestRejection:
    @pytest.mark.parametrize(
        "distance, prob",
        [(1.0, 0.0), (3.0, 0.0), (3.25, 0.4), (4.0, 0.4), (4.5, 0.5), (5.5, 0.6), (6.0, 0.6), (7.0, 0.7),
         (10.0, 0.7), (10.25, 1.0)],
    )
    def test_bands(self, distance, prob):
        assert rejection_probability(distance) == prob

    def test_acceptance_frequency_in_six_to_ten_band(self):
        rng = np.random.default_rng(11)
        accepted = sum(bucket_accepts(7.0, rng) for _ in range(10_000))
        assert abs(accepted / 10_000 - 0.3) < 0.05

    def test_short_pairs_never_rejected(self):
        rng = np.random.default_rng(0)
        assert all(bucket_accepts(2.0, rng) for _ in range(100))


class TestPairConstraints:
    def test_thresholds(self, corridor7, lscene):
        assert pair_thresholds(corridor7) == (0.6, 1.001)
        assert pair_thresholds(lscene) == (1.0, 1.1)

    def test_diagonal_pair_in_l_scene(self, lscene):
        # geodesic 2.0 m against a Euclidean sqrt(2) m
        assert pair_is_valid(lscene, (0, 0), (4, 4))

    def test_collinear_pair_fails_ratio(self, corridor7):
        assert not pair_is_valid(corridor7, (0, 0), (6, 0))

    def test_too_close(self, lscene):
        assert not pair_is_valid(lscene, (0, 0), (1, 1))

    def test_same_cell(self, lscene):
        assert not pair_is_valid(lscene, (2, 2), (2, 2))


class TestGenerateEpisode:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_constraints_hold(self, rooms, n):
        episode = generate_episode(rooms, n, np.random.default_rng(n))
        assert episode.n_goals == n
        assert check_episode(rooms, episode) == []
        assert episode.start_heading in HEADINGS
        assert all(0.0 <= o < 1.0 for o in episode.playback_offsets)

    def test_deterministic_per_seed(self, lscene):
        a = generate_episode(lscene, 2, np.random.default_rng(42), seed=42)
        b = generate_episode(lscene, 2, np.random.default_rng(42), seed=42)
        assert a == b
        assert a.seed == 42

    def test_straight_corridor_exhausts_budget(self, corridor7):
        with pytest.raises(SamplingBudgetExhausted) as exc_info:
            generate_episode(corridor7, 1, np.random.default_rng(0), budget=50)
        assert exc_info.value.attempts == 50
        assert exc_info.value.scene_id == "corridor-7"

    def test_zero_goals(self, lscene):
        with pytest.raises(EpisodeError):
            generate_episode(lscene, 0, np.random.default_rng(0))

    def test_unknown_pairing(self, lscene):
        with pytest.raises(EpisodeError, match="pairing"):
            generate_episode(lscene, 1, np.random.default_rng(0), pairing="mixed")

    def test_same_pairing(self, rooms):
        episode = generate_episode(rooms, 3, np.random.default_rng(1), categories=range(12), pairing="same")
        assert len({g.category for g in episode.goals}) == 1

    def test_different_pairing(self, rooms):
        episode = generate_episode(rooms, 3, np.random.default_rng(1), categories=range(12), pairing="different")
        assert len({g.category for g in episode.goals}) == 3

    def test_different_pairing_impossible(self, rooms):
        with pytest.raises(EpisodeError, match="pairing"):
            generate_episode(rooms, 2, np.random.default_rng(1), categories=(0,), pairing="different")

    def test_per_goal_pools(self, rooms):
        episode = generate_episode(rooms, 3, np.random.default_rng(2), category_pools=[[4], [9]])
        assert [g.category for g in episode.goals] == [4, 9, 4]

    def test_offsets_disabled(self, rooms):
        episode = generate_episode(rooms, 2, np.random.default_rng(3), random_offsets=False)
        assert episode.playback_offsets == (0.0, 0.0)

    def test_wide_scene(self):
        hall = open_hall(40)
        episode = generate_episode(hall, 2, np.random.default_rng(5))
        assert check_episode(hall, episode) == []


class TestEpisodeValidation:
    def test_heading_multiple_of_ten(self):
        with pytest.raises(EpisodeError, match="heading"):
            make_episode(heading=15)

    def test_needs_goals(self):
        with pytest.raises(EpisodeError):
            make_episode(goals=())

    def test_offset_range(self):
        with pytest.raises(EpisodeError, match="offset"):
            Episode("s", center(0), 0, (Goal(center(3), 0),), (1.0,), 0)

    def test_check_reports_off_center(self, lscene):
        episode = Episode("l-scene", Point(0.1, 0.1), 0, (Goal(center(4, 4), 0),), (0.0,), 0)
        assert any("cell center" in v for v in check_episode(lscene, episode))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class TestDataset:
    def test_round_trip(self, rooms):
        episodes = [generate_episode(rooms, n, np.random.default_rng(n), seed=n) for n in (1, 2, 3)]
        assert parse_dataset(write_dataset(episodes)) == episodes

    def test_record_layout(self):
        line = write_dataset([make_episode()]).decode("utf-8").strip()
        record = json.loads(line)
        assert record == {
            "scene_id": "corridor-7",
            "start": [0.125, 0.125],
            "heading_deg": 0,
            "goals": [{"pos": [0.875, 0.125], "category": 0, "offset_s": 0.0}],
            "seed": 7,
        }

    def test_empty(self):
        assert parse_dataset(b"") == []

    def test_header_and_blank_lines_skipped(self):
        data = b'# {"tool": "sdmnav"}\n\n' + write_dataset([make_episode()])
        assert len(parse_dataset(data)) == 1

    def test_goal_off_cell_center(self):
        record = json.loads(write_dataset([make_episode()]))
        record["goals"][0]["pos"] = [0.9, 0.125]
        with pytest.raises(DatasetFormatError, match="cell center"):
            parse_dataset(json.dumps(record).encode())

    def test_unknown_scene(self, corridor9):
        with pytest.raises(DatasetFormatError, match="unknown scene_id"):
            parse_dataset(write_dataset([make_episode()]), {"corridor-9": corridor9})

    def test_not_navigable(self, corridor7):
        episode = make_episode(goals=((3, 1),))
        with pytest.raises(DatasetFormatError, match="not navigable"):
            parse_dataset(write_dataset([episode]), {"corridor-7": corridor7})

    def test_malformed_json(self):
        with pytest.raises(DatasetFormatError, match="line 1"):
            parse_dataset(b"{not json\n")

    def test_missing_field(self):
        with pytest.raises(DatasetFormatError, match="missing"):
            parse_dataset(b'{"scene_id": "x"}\n')

    @pytest.mark.parametrize(
        "path, value",
        [(("goals", 0, "offset_s"), "soon"), (("goals", 0, "category"), "dog"), (("seed",), "abc")],
    )
    def test_unparsable_number(self, path, value):
        record = json.loads(write_dataset([make_episode()]))
        target = record
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
        with pytest.raises(DatasetFormatError, match="line 1: missing or mistyped"):
            parse_dataset(json.dumps(record).encode())

    def test_not_utf8(self):
        with pytest.raises(DatasetFormatError, match="UTF-8"):
            parse_dataset(b"\xff\xfe\n")


@pytest.mark.slow
class TestGeneratorAcceptance:
    def test_five_hundred_episodes_pass_rechecks(self, lscene, rooms):
        grids = [lscene, rooms, open_hall(40)]
        for i in range(500):
            grid = grids[i % 3]
            episode = generate_episode(grid, 1 + i % 3, np.random.default_rng(i))
            assert check_episode(grid, episode) == []
