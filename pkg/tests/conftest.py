import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

FAST_CFG = """
topology.num_rus = 2
topology.num_embb = 2
topology.num_urllc = 1
radio.bandwidth = 5e6
predictor.trace_frames = 200
predictor.epochs = 1
predictor.hidden = 8
sim.frames = 1
solver.coherence_windows = 40
"""


@pytest.fixture
def fast_cfg_text():
    return FAST_CFG


@pytest.fixture
def fast_cfg_file(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST_CFG)
    return p


# acceptance lines are collected here and printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
