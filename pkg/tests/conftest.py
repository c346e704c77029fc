"""Shared fixtures for the sdmnav test suite."""

import pytest

from scenes import corridor, l_scene, open_hall, two_rooms
from sdmnav.audio import default_library


@pytest.fixture
def corridor7():
    return corridor(7)


@pytest.fixture
def corridor9():
    return corridor(9)


@pytest.fixture
def lscene():
    return l_scene()


@pytest.fixture
def rooms():
    return two_rooms()


@pytest.fixture
def hall():
    return open_hall(40)


@pytest.fixture
def library():
    return {c.id: c for c in default_library()}
