"""Acceptance criteria 1-10; each prints one PASS/FAIL line, even under output capture."""
from __future__ import annotations

import time

import pytest

from shardbench import acceptance


@pytest.fixture(scope="session")
def sweep():
    start = time.perf_counter()
    reports = acceptance.sweep_reports()
    return reports, time.perf_counter() - start


@pytest.fixture
def check(capsys):
    def run(result: acceptance.CriterionResult) -> None:
        with capsys.disabled():
            print("\n" + result.line())
        assert result.passed, result.line()

    return run


def test_criterion_01_mvcc_oracle(check):
    check(acceptance.criterion_1())


def test_criterion_02_contention(check):
    check(acceptance.criterion_2())


def test_criterion_03_tsr_trend(check, sweep):
    check(acceptance.criterion_3(*sweep))


def test_criterion_04_throughput(check, sweep):
    check(acceptance.criterion_4(*sweep))


def test_criterion_05_he_accuracy(check):
    check(acceptance.criterion_5())


def test_criterion_06_conservation(check):
    check(acceptance.criterion_6())


def test_criterion_07_double_spend(check):
    check(acceptance.criterion_7())


def test_criterion_08_reuse(check):
    check(acceptance.criterion_8())


def test_criterion_09_confidentiality(check):
    check(acceptance.criterion_9())


def test_criterion_10_determinism(check, sweep):
    check(acceptance.criterion_10(sweep[0]))
