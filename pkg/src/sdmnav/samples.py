"""Built-in sample scenes so a fresh checkout can run end to end."""

from pathlib import Path

import numpy as np

from sdmnav.scene import SceneGrid, format_scene

SCENE_SUFFIX = ".scene"


def _walled(navigable: np.ndarray) -> np.ndarray:
    """Surround an occupancy block with a one-cell wall."""
    return np.pad(navigable, 1, constant_values=False)


def corridor_scene() -> SceneGrid:
    """A 4-cell-wide, 24-cell-long corridor (a small scene)."""
    return SceneGrid("corridor", _walled(np.ones((4, 24), dtype=bool)), small_scene=True)


def l_shaped_scene() -> SceneGrid:
    """Two 4-cell-wide arms meeting at a corner."""
    nav = np.zeros((20, 20), dtype=bool)
    nav[:4, :] = True
    nav[:, :4] = True
    return SceneGrid("l-shape", _walled(nav))


def two_room_scene() -> SceneGrid:
    """Two 12×10 rooms joined by a 2-cell door in the middle of the shared wall."""
    nav = np.zeros((12, 21), dtype=bool)
    nav[:, :10] = True
    nav[:, 11:] = True
    nav[5:7, 10] = True
    return SceneGrid("two-rooms", _walled(nav))


def open_hall_scene() -> SceneGrid:
    """An empty 40×40 hall (a wide scene, with distance-bucket rejection)."""
    return SceneGrid("open-hall", _walled(np.ones((40, 40), dtype=bool)), wide_scene=True)


SAMPLE_SCENES = {
    "corridor": corridor_scene,
    "l-shape": l_shaped_scene,
    "two-rooms": two_room_scene,
    "open-hall": open_hall_scene,
}


def sample_scenes() -> list[SceneGrid]:
    return [build() for build in SAMPLE_SCENES.values()]


def write_sample_scenes(directory: Path, verbose: bool = True) -> list[Path]:
    """Write the sample scenes into *directory*; existing files are never overwritten.

    Returns:
        Paths of the files actually created.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    created = []
    for grid in sample_scenes():
        path = directory / f"{grid.scene_id}{SCENE_SUFFIX}"
        if path.exists():
            if verbose:
                print(f"  Skipped {path} (exists)")
            continue
        path.write_text(format_scene(grid), encoding="utf-8")
        created.append(path)
        if verbose:
            print(f"  Created {path}")
    return created
