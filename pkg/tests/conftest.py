"""Shared fixtures for the test suite.

The expensive pipeline stages (cell correctors, strip layers) are solved
once per session and reused wherever a test only needs their results, so
the suite spends its time on the checks rather than on re-solving the
same problems.
"""

from __future__ import annotations

import pytest

from perfhom import (
    HoleSpec,
    build_strip_mesh,
    solve_cell,
    solve_layer,
    source_fields,
)

# Fine-mesh tile resolution; solving the cell and strip correctors at the
# same spacing keeps the composite approximations and the direct solver on
# the same discrete microstructure (see perfhom.cli.StudyConfig).
MATCHED_H = 0.125


@pytest.fixture(scope="session")
def hole() -> HoleSpec:
    """Default perforation: 32-gon inscribed in the r=0.25 disk."""
    return HoleSpec()


@pytest.fixture(scope="session")
def solid_hole() -> HoleSpec:
    """No perforation at all (degenerate limit)."""
    return HoleSpec(kind="none")


@pytest.fixture(scope="session")
def cell_matched(hole):
    """Cell correctors at the fine-mesh tile resolution."""
    return solve_cell(hole, h_target=MATCHED_H, second_order=True)


@pytest.fixture(scope="session")
def cell_fine(hole):
    """Cell correctors at the best-accuracy default resolution."""
    return solve_cell(hole, h_target=0.05, second_order=True)


@pytest.fixture(scope="session")
def flat_strip_layers(hole, cell_fine):
    """Both boundary-layer correctors on a flat strip of half-length 6."""
    strip = build_strip_mesh(6, 6, hole, h_target=0.05)
    lay1 = solve_layer(cell_fine, strip, 1)
    lay2 = solve_layer(cell_fine, strip, 2)
    return lay1, lay2


@pytest.fixture(scope="session")
def sources():
    """Interface-avoiding bump sources used by the convergence studies."""
    return source_fields(rho=0.3, amplitude=1.0)
