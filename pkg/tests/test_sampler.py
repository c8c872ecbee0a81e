import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from tiltlab import oracle, sampler
from tiltlab.ensemble import (
    EnsembleState,
    config_hash,
    log_weight,
    make_config,
    state_violations,
)
from tiltlab.experiments import random_ordered_pair
from tiltlab.sampler import HypothesisError, MoveProposal


def small_config(**kw):
    args = dict(n=2, interval=(0, 6), tilt_normalizer=10.0, a=1.0, b=2.0, u=[3, 1], v=[2, 0])
    args.update(kw)
    return make_config(args["n"], args["interval"], args["tilt_normalizer"], args["a"], args["b"],
                       args["u"], args["v"], floor=kw.get("floor", 0.0), ceiling=kw.get("ceiling"))


# -- proposals ----------------------------------------------------------------------

def test_no_interior_sites():
    cfg = make_config(1, (0, 1), 1, 1, 1, [0], [0])
    with pytest.raises(ValueError):
        sampler.new_chain(cfg, 0)


def test_proposals_uniform():
    cfg = small_config()
    chain = sampler.new_chain(cfg, 7)
    codes, us = chain.stream.draw(100_000, 2 * cfg.n * (cfg.length - 1))
    counts = np.bincount(codes, minlength=2 * 2 * 5)
    assert sps.chisquare(counts).pvalue > 1e-3
    assert sps.kstest(us, "uniform").pvalue > 1e-3
    moves = [sampler._decode(c, cfg) for c in range(20)]
    assert {m[0] for m in moves} == {1, 2}
    assert {m[1] for m in moves} == {1, 2, 3, 4, 5}
    assert {m[2] for m in moves} == {-1, 1}


def test_proposal_streams_deterministic():
    cfg = small_config()
    a, b = sampler.new_chain(cfg, 3), sampler.new_chain(cfg, 3)
    pa = [sampler.propose(a) for _ in range(50)]
    pb = [sampler.propose(b) for _ in range(50)]
    assert pa == pb
    c = sampler.new_chain(cfg, 3, chain_id=1)
    assert [sampler.propose(c) for _ in range(50)] != pa


def test_encode_decode_round_trip():
    cfg = small_config()
    for code in range(2 * cfg.n * (cfg.length - 1)):
        K, X, s = sampler._decode(code, cfg)
        assert sampler._encode(MoveProposal(K, X, s, 0.5), cfg) == code


# -- acceptance ratio ------------------------------------------------------------

def test_acceptance_ratio_flat_site():
    cfg = make_config(1, (0, 2), 10.0, 1.0, 1.0, [1], [1])
    s = EnsembleState([[1, 1, 1]])
    up = sampler.log_acceptance_ratio(cfg, s, MoveProposal(1, 1, +1, 0.5))
    down = sampler.log_acceptance_ratio(cfg, s, MoveProposal(1, 1, -1, 0.5))
    assert math.exp(up) == pytest.approx(0.25 * math.exp(-0.1), rel=1e-14)
    assert math.exp(down) == pytest.approx(0.25 * math.exp(0.1), rel=1e-14)


def test_acceptance_ratio_outside_support():
    cfg = make_config(1, (0, 2), 10.0, 1.0, 1.0, [0], [2])
    s = EnsembleState([[0, 1, 2]])
    assert sampler.log_acceptance_ratio(cfg, s, MoveProposal(1, 1, +1, 0.5)) == -math.inf


def test_acceptance_ratio_equals_weight_difference():
    cfg = make_config(2, (0, 4), 4.0, 1.3, 2.0, [2, 1], [2, 0], floor=0.0, ceiling=3.0)
    states, _ = oracle.enumerate_trajectories(cfg, cap=3)[:2]
    checked = 0
    for X in states:
        s = EnsembleState(X)
        for K in (1, 2):
            for x in (1, 2, 3):
                for sig in (1, -1):
                    t = s.copy()
                    t.heights[K - 1, x] += sig
                    lw_t = log_weight(cfg, t)
                    if not lw_t.valid:
                        continue
                    r = sampler.log_acceptance_ratio(cfg, s, MoveProposal(K, x, sig, 0.5))
                    assert r == pytest.approx(lw_t.value - log_weight(cfg, s).value, abs=1e-12)
                    checked += 1
    assert checked > 100


# -- step ---------------------------------------------------------------------------

def test_step_rejects_crossing_move():
    cfg = make_config(2, (0, 2), 10.0, 0.0, 1.0, [1, 1], [1, 1])
    chain = sampler.new_chain(cfg, 0, state=EnsembleState([[1, 1, 1], [1, 1, 1]]))
    sampler.step(chain, MoveProposal(2, 1, +1, 0.0))
    assert chain.state == EnsembleState([[1, 1, 1], [1, 1, 1]])
    assert chain.step_count == 1 and chain.accept_count == 0


def test_step_accepts_when_u_is_zero():
    cfg = make_config(1, (0, 2), 10.0, 5.0, 1.0, [1], [1])
    chain = sampler.new_chain(cfg, 0, state=EnsembleState([[1, 1, 1]]))
    sampler.step(chain, MoveProposal(1, 1, +1, 0.0))
    assert chain.state.heights.tolist() == [[1, 2, 1]] and chain.accept_count == 1


def test_step_accepts_when_ratio_at_least_one():
    # from the peak (0, 1, 0) moving down has R = 4 e^{+a/N} > 1
    cfg = make_config(1, (0, 2), 10.0, 1.0, 1.0, [0], [0])
    chain = sampler.new_chain(cfg, 0, state=EnsembleState([[0, 1, 0]]))
    sampler.step(chain, MoveProposal(1, 1, -1, 1.0))
    assert chain.state.heights.tolist() == [[0, 0, 0]]


def test_step_respects_floor_and_ceiling():
    cfg = make_config(1, (0, 2), 10.0, 0.0, 1.0, [1], [1], floor=[0, 1, 0], ceiling=[2, 1, 2])
    chain = sampler.new_chain(cfg, 0)
    for sig in (1, -1):
        sampler.step(chain, MoveProposal(1, 1, sig, 0.0))
    assert chain.state.heights.tolist() == [[1, 1, 1]] and chain.accept_count == 0


@given(st.integers(0, 2**32 - 1))
def test_state_valid_after_every_step(seed):
    rng = np.random.default_rng(seed)
    up, _ = random_ordered_pair(rng, max_n=3, lengths=(3, 8))
    chain = sampler.new_chain(up, seed)
    for _ in range(300):
        sampler.step(chain)
        assert not state_violations(up, chain.state)
    assert chain.accept_count <= chain.step_count


def test_incremental_log_weight_matches_recomputation():
    cfg = make_config(3, (0, 30), 30.0, 0.7, 2.5, [6, 3, 1], [5, 2, 0], floor=0.0, ceiling=12.0)
    chain = sampler.new_chain(cfg, 11)
    start = chain.log_weight
    sampler.advance(chain, 1_000_000)
    assert chain.step_count == 1_000_000
    assert chain.log_weight != start
    assert abs(chain.log_weight - log_weight(cfg, chain.state).value) < 1e-9


# -- initial states ---------------------------------------------------------------

def test_initial_state_valid_with_ceiling_and_floor():
    cfg = make_config(3, (0, 9), 9, 1, 2, [4, 2, 2], [3, 3, 0], floor=[0, 0, 1, 1, 1, 1, 1, 0, 0, 0],
                      ceiling=5.0)
    assert not state_violations(cfg, sampler.initial_state(cfg))
    g = sampler.greatest_state(cfg)
    assert not state_violations(cfg, g)
    assert np.all(g.heights >= sampler.initial_state(cfg).heights)


# -- run ----------------------------------------------------------------------------

def test_run_one_sample_per_sweep():
    cfg = small_config()
    chain = sampler.new_chain(cfg, 5)
    s = sampler.run(chain, 40, 0, 1)
    assert len(s) == 40
    assert s.sweep.tolist() == list(range(1, 41))
    assert chain.step_count == 40 * cfg.n * (cfg.length - 1)


def test_run_thinning_and_burnin():
    cfg = small_config()
    s = sampler.run(sampler.new_chain(cfg, 5), 100, 20, 7)
    assert len(s) == (100 - 20) // 7
    assert s.sweep[0] == 27


def test_run_deterministic():
    cfg = small_config()
    a = sampler.run(sampler.new_chain(cfg, 9), 200, 10, 3)
    b = sampler.run(sampler.new_chain(cfg, 9), 200, 10, 3)
    np.testing.assert_array_equal(a.heights, b.heights)
    assert a.steps == b.steps and a.accepted == b.accepted


def test_run_rejects_burnin_beyond_sweeps():
    with pytest.raises(ValueError):
        sampler.run(sampler.new_chain(small_config(), 0), 10, 20)
    with pytest.raises(ValueError):
        sampler.run(sampler.new_chain(small_config(), 0), 10, 0, 0)


def test_run_chains_independent_of_worker_count():
    cfg = small_config()
    a = sampler.run_chains(cfg, 4, chains=4, sweeps=300, workers=1)
    b = sampler.run_chains(cfg, 4, chains=4, sweeps=300, workers=4)
    np.testing.assert_array_equal(a.heights, b.heights)
    np.testing.assert_array_equal(a.chain, b.chain)
    assert len(a) == 4 * (300 - 60)


def test_run_matches_oracle_marginal():
    cfg = make_config(1, (0, 6), 6.0, 2.0, 1.0, [1], [1])
    s = sampler.run(sampler.new_chain(cfg, 2), 60_000, 600)
    m = oracle.marginal(cfg, 1, 3)
    emp = np.array([np.mean(s.values(1, 3) == h) for h in m.heights])
    assert 0.5 * np.abs(emp - m.probs).sum() < 0.02


def test_sample_set_csv_round_trip(tmp_path):
    cfg = small_config()
    s = sampler.run_chains(cfg, 1, chains=2, sweeps=20, burnin=0, thin=5)
    path = tmp_path / "samples.csv"
    s.to_csv(path)
    back = sampler.SampleSet.from_csv(path)
    order = np.lexsort((s.sweep, s.chain))
    np.testing.assert_array_equal(back.heights, s.heights[order])
    assert path.read_text().splitlines()[0] == "chain,sweep,curve,site,height"
    assert s.manifest()["config_hash"] == config_hash(cfg)
    sampler.dump_manifest(s, cfg, tmp_path / "m.json")
    assert (tmp_path / "m.json").read_text().startswith("{")


# -- coupling -----------------------------------------------------------------------

def test_coupled_identical_configs():
    cfg = small_config()
    res = sampler.coupled_run(cfg, cfg, 200, 3)
    np.testing.assert_array_equal(res.traj_up, res.traj_down)
    assert res.violation_count == 0


@pytest.mark.parametrize("seed", range(4))
def test_coupled_ordered_configs(seed):
    rng = np.random.default_rng(seed)
    up, down = random_ordered_pair(rng)
    res = sampler.coupled_run(up, down, 0, seed, steps=100_000, record=False)
    assert res.violation_count == 0


def test_coupled_hypothesis_violation():
    up = small_config(a=2.0)
    down = small_config(a=1.0)
    with pytest.raises(HypothesisError):
        sampler.coupled_run(up, down, 10, 0)


def test_coupled_default_start_is_ordered():
    up = small_config(a=0.5, u=[4, 2], v=[3, 1])
    down = small_config(a=1.0)
    res = sampler.coupled_run(up, down, 1, 0)
    assert np.all(res.traj_up[0] >= res.traj_down[0])


# -- remove_top_curves ---------------------------------------------------------------

def test_remove_top_curves():
    cfg = make_config(3, (0, 6), 6, 0.5, 3.0, [3, 2, 1], [3, 1, 0], floor=0.0, ceiling=5.0)
    assert config_hash(sampler.remove_top_curves(cfg, 1)) == config_hash(cfg)
    last = sampler.remove_top_curves(cfg, 3)
    assert last.n == 1 and last.a == pytest.approx(0.5 * 9) and last.u == (1,) and last.v == (0,)
    np.testing.assert_array_equal(last.floor, cfg.floor)
    with pytest.raises(ValueError):
        sampler.remove_top_curves(cfg, 4)


def test_removed_top_curve_dominates():
    cfg = make_config(2, (0, 6), 6, 0.5, 2.0, [2, 1], [2, 1])
    reduced = sampler.remove_top_curves(cfg, 2)
    for x in range(7):
        p = oracle.marginal(cfg, 2, x)
        q = oracle.marginal(reduced, 1, x)
        grid = np.union1d(p.heights, q.heights)
        cdf_p = np.array([p.probs[p.heights <= t].sum() for t in grid])
        cdf_q = np.array([q.probs[q.heights <= t].sum() for t in grid])
        assert np.all(cdf_p - cdf_q >= -1e-12)


# -- diagnostics ---------------------------------------------------------------------

def test_constant_series_flagged():
    tau, se, ok = sampler.integrated_autocorr_time(np.ones((2, 500)))
    assert not ok and tau == math.inf


def test_white_noise_tau_near_one(rng):
    tau, se, ok = sampler.integrated_autocorr_time(rng.normal(size=(4, 20_000)))
    assert ok
    assert abs(tau - 1.0) <= 3 * se + 0.02


def test_ar1_tau(rng):
    phi, T = 0.8, 200_000
    x = np.empty(T)
    x[0] = 0
    e = rng.normal(size=T)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + e[t]
    tau, se, ok = sampler.integrated_autocorr_time(x[None, :])
    assert ok and tau == pytest.approx((1 + phi) / (1 - phi), rel=0.1)


def test_diagnostics_fields():
    s = sampler.run(sampler.new_chain(small_config(), 1), 500)
    d = sampler.diagnostics(s)
    assert 0.0 <= d.acceptance_rate <= 1.0
    assert d.effective_sample_size <= len(s) * 1.5
    with pytest.raises(ValueError):
        sampler.diagnostics(sampler.run(sampler.new_chain(small_config(), 1), 1))
