import time

import pytest
import torch

from fairdg import harness, synth
from fairdg.data import SplitPlan, split
from fairdg.transform import train_transform

torch.set_num_threads(1)


class ToyTransform:
    """Trained once per session; ``seconds`` is the wall-clock training time."""

    def __init__(self):
        self.data = synth.gen_benchmark(n_per_domain=2000, seed=0)
        parts = [split(d, SplitPlan(0.7, 0.15, 0)) for d in self.data]
        self.train = [p[0] for p in parts]
        self.heldout = [p[2] for p in parts]
        self.config = harness.TOY_TRANSFORM
        start = time.perf_counter()
        self.model = train_transform(self.train, self.config)
        self.seconds = time.perf_counter() - start


@pytest.fixture(scope="session")
def toy_transform():
    """Transformation model trained once on the default synthetic benchmark."""
    return ToyTransform()


@pytest.fixture(scope="session")
def acceptance(request):
    """Dict criterion -> (passed, detail); printed in the terminal summary."""
    if not hasattr(request.config, "_acceptance"):
        request.config._acceptance = {}
    return request.config._acceptance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda k: int(k[1:])):
        passed, detail = results[name]
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}  {detail}")
