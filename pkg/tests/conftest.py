import os
import sys
import warnings

import pytest

sys.path.insert(0, os.path.dirname(__file__))
warnings.filterwarnings("ignore", message=".*TBB.*")

from tenderrisk.domain import SegmentKey  # noqa: E402
from tenderrisk.labeling import derive_labels  # noqa: E402
from tenderrisk.synthgen import GeneratorConfig, SegmentSpec, generate_portfolio  # noqa: E402

SKEWED_MIX = (0.68, 0.21, 0.08, 0.03)


def small_config(seed=11, count=250, quarters=8, **kw):
    return GeneratorConfig(
        seed=seed,
        segments=(SegmentSpec(SegmentKey("BU2", "GEO4"), count, SKEWED_MIX),),
        quarters_span=quarters,
        **kw,
    )


@pytest.fixture(scope="session")
def small_snapshots():
    return generate_portfolio(small_config())


@pytest.fixture(scope="session")
def small_labeled(small_snapshots):
    return derive_labels(small_snapshots).labeled


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
