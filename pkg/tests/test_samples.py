"""Tests for samples.py (built-in sample scenes)."""

import numpy as np
import pytest

from sdmnav.episode import check_episode, generate_episode
from sdmnav.samples import SAMPLE_SCENES, sample_scenes, write_sample_scenes
from sdmnav.scene import load_scene


@pytest.mark.parametrize("name", list(SAMPLE_SCENES))
def test_scene_is_connected(name):
    grid = SAMPLE_SCENES[name]()
    cells = grid.navigable_cells()
    field = grid.distance_field(cells[0])
    assert all(np.isfinite(field[j, i]) for i, j in cells)


@pytest.mark.parametrize("name", list(SAMPLE_SCENES))
def test_scene_hosts_three_goal_episodes(name):
    grid = SAMPLE_SCENES[name]()
    rng = np.random.default_rng(0)
    for _ in range(3):
        episode = generate_episode(grid, 3, rng)
        assert check_episode(grid, episode) == []


def test_scene_flags():
    flags = {g.scene_id: (g.small_scene, g.wide_scene) for g in sample_scenes()}
    assert flags == {
        "corridor": (True, False),
        "l-shape": (False, False),
        "two-rooms": (False, False),
        "open-hall": (False, True),
    }


def test_scenes_are_walled():
    for grid in sample_scenes():
        nav = grid.navigable
        assert not nav[0].any() and not nav[-1].any()
        assert not nav[:, 0].any() and not nav[:, -1].any()


def test_written_files_load_back(tmp_path):
    created = write_sample_scenes(tmp_path, verbose=False)
    assert len(created) == len(SAMPLE_SCENES)
    for path, grid in zip(created, sample_scenes()):
        assert np.array_equal(load_scene(path).navigable, grid.navigable)


def test_existing_files_are_kept(tmp_path, capsys):
    (tmp_path / "corridor.scene").write_text("mine", encoding="utf-8")
    created = write_sample_scenes(tmp_path)
    assert len(created) == len(SAMPLE_SCENES) - 1
    assert "Skipped" in capsys.readouterr().out
    assert (tmp_path / "corridor.scene").read_text(encoding="utf-8") == "mine"
