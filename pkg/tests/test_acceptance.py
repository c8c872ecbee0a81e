"""Acceptance criteria, one test and one PASS/FAIL line each.

The lines are collected in ``LINES`` and printed in the pytest terminal
summary (and directly when this file is run as a script). Criteria 9-13
share two long sampler runs; deselect them with ``-m "not slow"``.
"""
import pytest

from tiltlab import experiments as E

LINES: list[str] = []


def record(number: int, title: str, result: E.ExperimentResult, budget: float,
           extra_seconds: float = 0.0) -> bool:
    seconds = result.seconds + extra_seconds
    ok = result.passed and seconds <= budget
    detail = result.line().split(": ", 1)[1]
    LINES.append(f"{'PASS' if ok else 'FAIL'} {number:2d} {title}: {detail}; "
                 f"time={seconds:.1f}s (limit {budget:.0f}s)")
    print(LINES[-1])
    return ok


def test_01_gibbs_consistency():
    r = E.gibbs_experiment(E.gibbs_instance(), cap=6, tol=1e-10)
    assert record(1, "exact Gibbs consistency", r, 10)


def test_02_reversibility():
    r = E.balance_experiment(E.balance_instance(), cap=3, tol=1e-12)
    assert record(2, "detailed balance", r, 5)


def test_03_ballot_sandwich():
    r = E.ballot_experiment("lazy-srw", E.BALLOT_GRID, max_spread=10.0)
    assert r.metrics["spot_exact"]
    assert record(3, "ballot sandwich", r, 30)


def test_04_tilt_invariance():
    r = E.tilt_experiment("srw", y=2, steps=4, tol=1e-12)
    assert record(4, "tilt invariance", r, 5)


def test_05_monotone_coupling():
    r = E.monotone_experiment(seed=0, pairs=20, steps=100_000)
    assert record(5, "monotone coupling", r, 120)


def test_06_fosd():
    r = E.fosd_experiment(seed=0, pairs=10)
    assert record(6, "stochastic domination", r, 60)


def test_07_sampler_vs_oracle():
    r = E.sampler_oracle_experiment(E.sampler_oracle_instance(), seed=0, sweeps=1_000_000, tol=0.02)
    assert record(7, "sampler vs oracle", r, 300)


def test_08_shift_invariance():
    r = E.shift_experiment(seed=0, pairs=100, zetas=range(-3, 4), tol=1e-12)
    assert record(8, "shift invariance", r, 5)


@pytest.fixture(scope="module")
def tail_run():
    return E.tail_run(seed=0)


@pytest.fixture(scope="module")
def scaling_run():
    return E.scaling_run(seed=0)


@pytest.mark.slow
def test_09_tail_exponent(tail_run):
    r = E.tail_experiment(tail_run, window=(1.2, 1.8), max_stderr=0.15)
    assert record(9, "tail exponent", r, 900, tail_run.seconds)


@pytest.mark.slow
def test_10_dropping(tail_run):
    r = E.drop_experiment(tail_run, eps=0.25, A=4.0, min_freq=0.99)
    assert record(10, "dropping", r, 900, tail_run.seconds)


@pytest.mark.slow
def test_11_curve_scales(scaling_run):
    r = E.scaling_experiment(scaling_run, max_ratio=3.0)
    assert record(11, "geometric curve scales", r, 1200, scaling_run.seconds)


@pytest.mark.slow
def test_12_stationarity(scaling_run):
    r = E.stationarity_experiment(scaling_run, max_variation=0.10)
    assert record(12, "bulk stationarity", r, 1200, scaling_run.seconds)


@pytest.mark.slow
def test_13_envelope(scaling_run):
    r = E.envelope_experiment(scaling_run, Ks=(6, 8, 10), T=10.0, max_freq=0.05)
    assert record(13, "envelope", r, 1200, scaling_run.seconds)


def test_14_concentration():
    r = E.concentration_experiment(seed=0, sizes=(256, 1024))
    assert record(14, "concentration of maxima", r, 300)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", *sys.argv[1:]]))
