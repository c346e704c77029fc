"""Ground-truth Sound Direction Map (SDM).

The SDM is an egocentric ring of 8 nodes, one per 45° sector with sector 0
centred dead ahead and indices increasing counterclockwise. A node holds the
reciprocal geodesic distance to the closest active source in its sector,
clipped to 1 for sources closer than 1 m, and 0 for an empty sector.
"""

import math
from typing import Sequence

import numpy as np

from sdmnav.errors import SdmError
from sdmnav.scene import Point, Pose, SceneGrid, cell_distance, snap_to_cell

N_NODES = 8
SECTOR_WIDTH = 360.0 / N_NODES
DROPOUT_PROBABILITY = 0.2
# Largest value an unclipped node takes under strict clipping.
UNCLIPPED_MAX = float(np.nextafter(1.0, 0.0))


def wrap_degrees(angle: float) -> float:
    """Wrap an angle to [-180, 180)."""
    return (angle + 180.0) % 360.0 - 180.0


def sector_of_bearing(bearing_deg: float) -> int:
    """Sector of a relative bearing: k iff β ∈ [45k − 22.5, 45k + 22.5), mod 8."""
    beta = wrap_degrees(bearing_deg)
    return int(math.floor((beta + SECTOR_WIDTH / 2) / SECTOR_WIDTH)) % N_NODES


def relative_bearing(pose: Pose, source: Point) -> float:
    """Bearing of *source* relative to the agent heading, degrees in [-180, 180), CCW positive."""
    ahead, left = pose.to_local(source)
    if ahead == 0.0 and left == 0.0:
        raise SdmError(f"source ({source.x}, {source.y}) coincides with the agent position")
    return wrap_degrees(math.degrees(math.atan2(left, ahead)))


def sector_index(pose: Pose, source: Point) -> int:
    """SDM node index (0..7) of *source* as seen from *pose*."""
    return sector_of_bearing(relative_bearing(pose, source))


def true_sdm(
    grid: SceneGrid,
    pose: Pose,
    active_sources: Sequence[Point],
    strict_clip: bool = False,
) -> np.ndarray:
    """Ground-truth SDM at *pose* for the given active source positions.

    A source on the agent's exact position counts as dead ahead at distance 0.
    Unreachable sources leave their sector untouched. With *strict_clip*, a
    source at 1 m or more stays strictly below 1.0, so a node equals 1.0 only
    when its source is closer than 1 m.
    """
    nodes = np.zeros(N_NODES)
    agent_cell = snap_to_cell(grid, pose.position)
    for source in active_sources:
        d = cell_distance(grid, agent_cell, snap_to_cell(grid, source))
        if math.isinf(d):
            continue
        ahead, left = pose.to_local(source)
        k = 0 if ahead == 0.0 and left == 0.0 else sector_index(pose, source)
        if d < 1.0:
            value = 1.0
        else:
            value = min(1.0 / d, UNCLIPPED_MAX) if strict_clip else 1.0 / d
        nodes[k] = max(nodes[k], value)
    return nodes


def validate_sdm(values: np.ndarray) -> np.ndarray:
    """Check an SDM vector (or batch of them): last axis 8, entries in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[-1:] != (N_NODES,):
        raise SdmError(f"SDM vectors need {N_NODES} nodes, got shape {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise SdmError("SDM node values must lie in [0, 1]")
    return arr


def apply_dropout(prev_sdm: np.ndarray, rng: np.random.Generator, p: float = DROPOUT_PROBABILITY) -> np.ndarray:
    """Zero each node independently with probability *p*; survivors keep their value."""
    if not 0.0 <= p <= 1.0:
        raise SdmError(f"dropout probability must lie in [0, 1], got {p}")
    prev_sdm = np.asarray(prev_sdm, dtype=np.float64)
    keep = rng.random(prev_sdm.shape) >= p
    return np.where(keep, prev_sdm, 0.0)
