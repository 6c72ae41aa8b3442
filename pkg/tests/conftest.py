import math

import numpy as np
import pytest

from houghvote.votefield import VoteFieldConfig, build_field

# every vote field the ablations use: (angle bins, ring extents)
PUBLISHED = [
    (6, (2, 8, 16)),
    (4, (2, 8, 16, 32, 64)),
    (4, (2, 8, 16, 32)),
    (4, (2, 8, 16)),
    (2, (2, 8, 16, 32, 64)),
    (1, (2, 8, 16, 32, 64)),
]


def classify(dy, dx, bins, extents):
    """Independent region classifier (floating point hypot/atan2), 0 = outside."""
    d = math.hypot(dy, dx)
    radii = [e / 2 for e in extents]
    if d > radii[-1] + 1e-12:
        return 0
    if d <= radii[0] + 1e-12:
        return 1
    ring = next(k for k in range(1, len(radii)) if radii[k - 1] + 1e-12 < d <= radii[k] + 1e-12)
    theta = math.atan2(-dy, dx)
    if theta < 0:
        theta += 2 * math.pi
    width = 2 * math.pi / bins
    sector = int(round(theta / width, 9) // 1) % bins
    return 2 + (ring - 1) * bins + sector


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=PUBLISHED, ids=lambda p: f"a{p[0]}-r{len(p[1])}")
def field(request):
    bins, ext = request.param
    return build_field(VoteFieldConfig(bins, ext))


@pytest.fixture
def small_field():
    return build_field(VoteFieldConfig(4, (2, 8, 16)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
