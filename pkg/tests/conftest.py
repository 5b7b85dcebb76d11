import os
import time
from pathlib import Path

import numpy as np
import pytest

from cmreg.geometry import builtin_pair
from cmreg.manifold import SamplerConfig, load_manifold, sample_manifold, save_manifold

GEOMETRIES = ("cross", "gear", "extrusion")

# criterion lines collected by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _artifact_dir(request) -> Path:
    env = os.environ.get("CMREG_TEST_CACHE")
    if env:
        p = Path(env)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return Path(request.config.cache.mkdir("cmreg_artifacts"))


@pytest.fixture(scope="session")
def artifact_dir(request) -> Path:
    return _artifact_dir(request)


def cached_manifold(directory: Path, name: str, samples: int, log: dict | None = None):
    """Sample (or reload) a default-config manifold of ``samples`` poses."""
    path = directory / f"{name}_{samples}.csv"
    pair = builtin_pair(name)
    if path.exists():
        return load_manifold(path, pair)
    t0 = time.perf_counter()
    m = sample_manifold(pair, SamplerConfig(samples_target=samples))
    if log is not None:
        log[(name, samples)] = time.perf_counter() - t0
    save_manifold(m, path)
    return m


@pytest.fixture(scope="session")
def generation_log() -> dict:
    return {}


@pytest.fixture(scope="session")
def small_manifolds(artifact_dir, generation_log):
    """5k-pose manifolds per builtin geometry for the quicker module tests."""
    return {g: cached_manifold(artifact_dir, g, 5000, generation_log) for g in GEOMETRIES}


@pytest.fixture(scope="session")
def full_manifolds(artifact_dir, generation_log):
    """Default 50k-pose manifolds per builtin geometry."""
    return {g: cached_manifold(artifact_dir, g, 50_000, generation_log) for g in GEOMETRIES}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
