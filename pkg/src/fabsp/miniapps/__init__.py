"""The seven Bale-style mini-applications with their checkers and serial oracles."""
from __future__ import annotations

from typing import Callable

from .common import APP_NAMES, AppConfig, AppReport
from .histogram import histogram_run
from .index_gather import index_gather_run
from .permute import permute_run
from .randperm import random_permutation_run
from .toposort import topological_sort_run
from .transpose import transpose_run
from .triangles import triangle_count_run

# also the key order for ``--app all``
APPS: dict[str, Callable[[AppConfig], AppReport]] = {
    "histogram": histogram_run,
    "ig": index_gather_run,
    "permute": permute_run,
    "randperm": random_permutation_run,
    "toposort": topological_sort_run,
    "transpose": transpose_run,
    "triangles": triangle_count_run,
}
assert tuple(APPS) == APP_NAMES


def run_app(cfg: AppConfig) -> AppReport:
    return APPS[cfg.app](cfg)


__all__ = ["APPS", "APP_NAMES", "AppConfig", "AppReport", "run_app", "histogram_run", "index_gather_run",
           "permute_run", "random_permutation_run", "topological_sort_run", "transpose_run",
           "triangle_count_run"]
