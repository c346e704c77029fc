"""SDMNAV: multi-goal audio navigation simulator with Sound Direction Map tooling.

Grid-world scenes, binaural audio observations, reward and metrics for
multi-goal audio navigation, plus a ground-truth and learned Sound Direction Map.
"""

__version__ = "0.1.0"
__author__ = "sdmnav contributors"
__license__ = "MIT"
