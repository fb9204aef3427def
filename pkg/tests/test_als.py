import numpy as np
import pytest

from helpers import naive_full, random_rep
from ttcomplete.experiments import ExperimentSpec, run_experiment
from ttcomplete.generators import tt_oracle
from ttcomplete.sampling import SampleSet, attach_values, draw_sample_set, generate_index_set
from ttcomplete.solvers import SolverConfig, als_solve, rank_increase
from ttcomplete.solvers.als import als_microstep, als_sweep
from ttcomplete.solvers.common import (
    SampleFrame,
    check_problem,
    mean_reduction_converged,
    relative_residual,
    sweep_positions,
)
from ttcomplete.tt_core import evaluate, full_tensor, orthogonalize, uniform_rank_one


def full_samples(a: np.ndarray) -> SampleSet:
    idx = np.indices(a.shape).reshape(a.ndim, -1).T
    return SampleSet(a.shape, idx, a.ravel())


def sampled_problem(rng, d=4, n=5, r=2, csd=3, seed=0):
    target = random_rep(rng, d, n, r)
    samples = draw_sample_set((n,) * d, r, csd, seed, tt_oracle(target))
    return target, samples


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(r_final=0)
        with pytest.raises(ValueError):
            SolverConfig(eps_stop=1.5)
        with pytest.raises(ValueError):
            SolverConfig(iter_max=4)

    def test_sweep_orders(self):
        assert sweep_positions(2, "half_alternating") == [0, 1]
        assert sweep_positions(5, "half_alternating") == [0, 1, 4, 3, 2]
        assert sweep_positions(6, "half_alternating") == [0, 1, 2, 5, 4, 3]
        assert sweep_positions(4, "forward") == [0, 1, 2, 3]

    def test_problem_size_precondition(self):
        ss = SampleSet((4, 4), [[0, 0], [1, 1]], [1.0, 2.0])
        with pytest.raises(ValueError, match="below"):
            check_problem(ss)


class TestStoppingRule:
    def test_needs_five_sweeps(self):
        assert not mean_reduction_converged([1.0] * 5, 0.1)
        assert mean_reduction_converged([1.0] * 6, 0.1)

    def test_mean_of_last_five(self):
        history = [1.0, 0.5, 0.25, 0.25 * 0.999, 0.25 * 0.999**2, 0.25 * 0.999**3, 0.25 * 0.999**4]
        # factors 0.5, 0.999, 0.999, 0.999, 0.999 enter; the first 0.5 does not
        mean = (0.5 + 4 * 0.999) / 5
        assert mean_reduction_converged(history, abs(1 - mean) * 1.01)
        assert not mean_reduction_converged(history, abs(1 - mean) * 0.99)

    def test_zero_previous_counts_as_one(self):
        assert mean_reduction_converged([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-3)


class TestRankIncrease:
    def test_uniform_doubles(self):
        g = rank_increase(uniform_rank_one([4, 4]))
        np.testing.assert_allclose(full_tensor(g), 0.5, rtol=1e-15)

    def test_adds_uniform_rank_one(self, rng):
        g = random_rep(rng, 3, 4, 2)
        h = rank_increase(g)
        np.testing.assert_allclose(naive_full(h), naive_full(g) + 4.0**-1.5, atol=1e-13)
        assert h.ranks == (1, 3, 3, 1)


class TestMicrostep:
    def test_single_slice_sampled(self, rng):
        g = random_rep(rng, 3, 4, 2)
        idx = np.array([[1, a, b] for a in range(4) for b in range(4)])
        ss = SampleSet(g.mode_sizes, idx, rng.standard_normal(len(idx)))
        frame = SampleFrame(g, ss, core=0)
        before = g.cores[0].copy()
        _, empty = als_microstep(frame, ss.values)
        assert empty == 3
        for j in (0, 2, 3):
            np.testing.assert_array_equal(g.cores[0][j], before[j])
        assert not np.allclose(g.cores[0][1], before[1])

    def test_local_optimality(self, rng):
        target, ss = sampled_problem(rng)
        g = random_rep(rng, 4, 5, 2)
        frame = SampleFrame(g, ss, core=2)
        res_before = np.linalg.norm(ss.values - frame.predict())
        pred, _ = als_microstep(frame, ss.values)
        res_after = np.linalg.norm(ss.values - pred)
        assert res_after <= res_before
        assert np.linalg.norm(ss.values - frame.predict()) == pytest.approx(res_after, rel=1e-12)
        core = g.cores[2].copy()
        scale = np.linalg.norm(core)
        for k in range(100):
            e = rng.standard_normal(core.shape)
            g.cores[2] = core + (10.0 ** rng.uniform(-6, 0)) * scale * e / np.linalg.norm(e)
            assert np.linalg.norm(ss.values - frame.predict()) >= res_after * (1 - 1e-12)
        g.cores[2] = core

    def test_slice_decoupling(self, rng):
        _, ss = sampled_problem(rng)
        g = random_rep(rng, 4, 5, 2)
        perm = rng.permutation(len(ss))
        shuffled = SampleSet(ss.mode_sizes, ss.indices[perm], ss.values[perm])
        outs = []
        for sample_set in (ss, shuffled):
            work = g.copy()
            frame = SampleFrame(work, sample_set, core=1)
            als_microstep(frame, sample_set.values)
            outs.append(work.cores[1])
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)

    def test_full_matrix_rank_two(self, rng):
        m = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))
        g, report = als_solve(full_samples(m), cfg=SolverConfig(r_final=2, eps_stop=1e-14, iter_max=500))
        assert np.linalg.norm(full_tensor(g) - m) <= 1e-8 * np.linalg.norm(m)
        assert report.final.rank == 2


class TestSweep:
    def test_monotone_within_sweep(self, rng):
        target = random_rep(rng, 3, 4, 2)
        ss = full_samples(full_tensor(target))
        g = rank_increase(uniform_rank_one(ss.mode_sizes))
        frame = SampleFrame(g, ss, core=0)
        trace = [np.linalg.norm(ss.values - frame.predict())]
        for _ in range(3):
            als_sweep(frame, ss.values, sweep_positions(3, "half_alternating"), trace)
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_orthogonalizes_before_each_step(self, rng):
        _, ss = sampled_problem(rng)
        g = random_rep(rng, 4, 5, 2)
        frame = SampleFrame(g, ss, core=0)
        for s in [0, 1, 3, 2]:
            frame.move_to(s)
            assert g.core_position == s
            ref = orthogonalize(g.copy(), s)
            np.testing.assert_allclose(frame.predict(), evaluate(ref, ss.indices), atol=1e-12)


class TestSolve:
    def test_rank_one_target_is_exact(self):
        sizes = (5, 5, 5)
        ss = draw_sample_set(sizes, 1, 3, 0, tt_oracle(uniform_rank_one(sizes)))
        g, report = als_solve(ss)
        assert report.termination == "exact"
        assert report.final.res_p < 1e-12

    def test_report_invariants(self, rng):
        target, ss = sampled_problem(rng, csd=5)
        control = draw_sample_set(ss.mode_sizes, 2, 5, 1, tt_oracle(target), label="C")
        g, report = als_solve(ss, control, SolverConfig(r_final=2, eps_stop=1e-4))
        ranks = [s.rank for s in report.sweeps]
        assert ranks == sorted(ranks) and ranks[-1] == 2
        assert all(s.res_p >= 0 and s.res_c >= 0 for s in report.sweeps)
        assert [e[1] for e in report.rank_events] == [2]
        assert report.final.res_p == pytest.approx(relative_residual(g, ss), rel=1e-10)
        assert report.final.res_c == pytest.approx(relative_residual(g, control), rel=1e-10)

    def test_gauge_invariance(self, rng):
        _, ss = sampled_problem(rng, csd=5)
        init = random_rep(rng, 4, 5, 2)
        cfg = SolverConfig(r_final=2, iter_max=6, eps_stop=1e-12)
        _, rep_a = als_solve(ss, cfg=cfg, init=init)
        _, rep_b = als_solve(ss, cfg=cfg, init=orthogonalize(init.copy(), 3))
        np.testing.assert_allclose([s.res_p for s in rep_a.sweeps], [s.res_p for s in rep_b.sweeps],
                                   rtol=1e-10)

    def test_microstep_trace_is_monotone(self, rng):
        _, ss = sampled_problem(rng, csd=4)
        _, report = als_solve(ss, cfg=SolverConfig(r_final=3, record_microsteps=True))
        assert len(report.microstep_residuals) == 3
        for stage in report.microstep_residuals:
            assert all(b <= a + 1e-12 for a, b in zip(stage, stage[1:]))

    def test_sweep_cost_grows_with_rank(self):
        # fixed sample set; the local solves scale like r^4, so doubling the rank
        # must at least double the sweep time even with per-slice overhead
        import time

        sizes = (10,) * 5
        idx = generate_index_set(sizes, 8, 10, seed=0)
        ss = attach_values(idx, lambda x: np.sin(x.sum(axis=1)), sizes)
        times = {}
        for r in (4, 8):
            g = random_rep(np.random.default_rng(r), 5, 10, r)
            frame = SampleFrame(g, ss, core=0)
            best = np.inf
            for _ in range(5):
                t0 = time.perf_counter()
                als_sweep(frame, ss.values, sweep_positions(5, "half_alternating"))
                best = min(best, time.perf_counter() - t0)
            times[r] = best
        assert times[8] >= 2 * times[4]

    def test_exact_rank_three_recovery(self):
        spec = ExperimentSpec(generator="random", d=4, n=12, r_final=3, csd=64, trials=20, base_seed=7)
        assert run_experiment(spec).summary.successes >= 18
