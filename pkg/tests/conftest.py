"""Shared search runs for the acceptance suite, computed once per session."""

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from discretenas.config import GroupSection, RegularizerSection, ScheduleSection, toy_config  # noqa: E402
from discretenas.data import SplitSpec, split  # noqa: E402
from discretenas.discretize import derive_genotype, gap_probe  # noqa: E402
from discretenas.regularizers import group_preset  # noqa: E402
from discretenas.search import run_search  # noqa: E402

SEEDS = (0, 1, 2)
IMBALANCED = ("imbalanced-3", "imbalanced-4", "imbalanced-5", "imbalanced-6")


def drive_regularizers(enabled=True):
    """lambda_c linear, lambda_1 const, lambda_2 const."""
    return RegularizerSection(enabled=enabled, lambda_c=ScheduleSection("linear"),
                              lambda_1=ScheduleSection("const"), lambda_2=ScheduleSection("const"))


def entropy_config(seed=0):
    """1 cell, width 4, 4-class 16x16 synthetic task, 30 epochs."""
    return toy_config(seed=seed, search__epochs=30, search__beta_init_offset=1.0,
                      regularizers=drive_regularizers(), groups=GroupSection(preset="balanced-8"))


def paired_config(seed, preset, enabled):
    """2 cells, width 4, 8x8 task, 30 epochs; ``enabled=False`` is the lambda_c = 0 baseline."""
    return toy_config(seed=seed, network__cells=2, task__height=8, task__width=8, search__epochs=30,
                      search__beta_init_offset=1.0, regularizers=drive_regularizers(enabled),
                      groups=GroupSection(preset=preset), retrain__channels=4, retrain__cells=2,
                      retrain__epochs=10)


def probe(result, preset):
    """Gap report on the test set, statistics from the weight split."""
    cfg = result.config
    data_w, _ = split(result.data.train, SplitSpec(cfg.search.split_fraction, cfg.seed))
    genotype = derive_genotype(result.arch, group_preset(preset))
    return gap_probe(result.net, result.arch, genotype, result.data.test.images, result.data.test.labels,
                     stats_images=data_w.images)


class RunCache:
    def __init__(self):
        self._runs = {}
        self.seconds = {}

    def get(self, key, make_config):
        if key not in self._runs:
            start = time.perf_counter()
            result = run_search(make_config(), probe=False)
            self._runs[key] = result
            self.seconds[key] = time.perf_counter() - start
        return self._runs[key]

    def entropy(self):
        return self.get(("entropy", 0), entropy_config)

    def paired(self, seed, preset, enabled):
        # the baseline ignores the groups while searching, so one baseline run serves every preset
        key = ("paired", seed, preset if enabled else None, enabled)
        return self.get(key, lambda: paired_config(seed, preset, enabled))


@pytest.fixture(scope="session")
def runs():
    return RunCache()


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Store one pass/fail line; printed at the end of the session."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
