import dataclasses

import numpy as np
import pytest

from drqn_backdoor import poison as P, triggers as T
from drqn_backdoor.agent import AgentConfig, run_clean_training
from drqn_backdoor.config import make_rngs
from drqn_backdoor.env import EnvConfig, channel_series, generate_jobs

SIMPLE = T.parse("trigger t(window=2,duration=3) { d[1]-d[0] > 500 }")


def tau1(trigger_dir):
    return T.parse_file(trigger_dir / "tau1.trig")


class TestMakeSchedule:
    def test_budget_arithmetic(self):
        # floor(0.05*1000/4) = 12 sites, 48 poisoned steps, 0.048 < 0.05
        s = P.make_schedule(SIMPLE, 3, 0.05, 1000, np.random.default_rng(0))
        # window 2 here: floor(50/2)=25, 50 >= 50 so one is dropped
        assert len(s.sites) == 24

    def test_budget_strict_inequality(self, trigger_dir):
        f = tau1(trigger_dir)
        s = P.make_schedule(f, 7, 0.05, 1000, np.random.default_rng(1))
        assert len(s.sites) == 12
        assert len(s.sites) * f.window_len < 0.05 * 1000

    def test_exact_boundary_drops_site(self, trigger_dir):
        # floor lands exactly on the budget: 1 site * 4 steps == 0.05*80
        with pytest.raises(P.BudgetError):
            P.make_schedule(tau1(trigger_dir), 7, 0.05, 80,
                            np.random.default_rng(2))

    def test_rate_out_of_range(self, trigger_dir):
        for rate in (0.0, -0.1, 1.0, 2.0):
            with pytest.raises(ValueError):
                P.make_schedule(tau1(trigger_dir), 7, rate, 1000,
                                np.random.default_rng(3))

    def test_poisoned_fraction_below_rate(self, trigger_dir):
        f = tau1(trigger_dir)
        rng = np.random.default_rng(4)
        for n in (200, 500, 1000, 3333):
            for rate in (0.02, 0.05, 0.1):
                try:
                    s = P.make_schedule(f, 7, rate, n, rng)
                except P.BudgetError:
                    continue
                assert len(s.sites) * f.window_len / n < rate


class TestPlaceSites:
    def test_gap_and_fit_property(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n_sites = int(rng.integers(1, 8))
            nt = int(rng.integers(2, 7))
            dur = int(rng.integers(0, 10))
            episode_len = int(rng.integers(50, 400))
            gap = nt + dur
            try:
                sites = P.place_sites(n_sites, episode_len, nt, dur, rng)
            except P.BudgetError:
                assert episode_len - gap < (n_sites - 1) * (gap - 1) + n_sites - 1 \
                    or episode_len < gap
                continue
            assert len(sites) == n_sites
            assert all(b - a >= gap for a, b in zip(sites, sites[1:]))
            assert sites[-1] + gap <= episode_len

    def test_too_short_episode(self):
        with pytest.raises(P.BudgetError):
            P.place_sites(1, 5, 4, 7, np.random.default_rng(6))

    def test_tight_packing(self):
        # exactly enough room: sites are forced but still valid
        sites = P.place_sites(3, 21, 4, 3, np.random.default_rng(7))
        assert all(b - a >= 7 for a, b in zip(sites, sites[1:]))


class TestPoisonEpisode:
    def test_ground_truth_windows_satisfy_formula(self, trigger_dir):
        f = tau1(trigger_dir)
        cfg = EnvConfig(job_count=1000)
        jobs = generate_jobs(cfg, np.random.default_rng(8))
        schedule = P.make_schedule(f, 7, 0.05, len(jobs), np.random.default_rng(9))
        out = P.poison_episode(jobs, schedule, np.random.default_rng(10),
                               bounds=(1.0, 500.0))
        assert len(out.ground_truth) == len(schedule.sites)
        for occ in out.ground_truth:
            assert T.evaluate(f, occ.window)

    def test_only_size_changes_and_only_at_sites(self, trigger_dir):
        f = tau1(trigger_dir)
        cfg = EnvConfig(job_count=500)
        jobs = generate_jobs(cfg, np.random.default_rng(11))
        schedule = P.make_schedule(f, 7, 0.05, len(jobs), np.random.default_rng(12))
        out = P.poison_episode(jobs, schedule, np.random.default_rng(13),
                               bounds=(1.0, 500.0))
        touched = {s + k for s in schedule.sites for k in range(f.window_len)}
        for i, (a, b) in enumerate(zip(jobs, out.jobs)):
            assert a.arrival_time == b.arrival_time
            assert a.job_type == b.job_type
            assert a.id == b.id
            if i not in touched:
                assert a.size == b.size

    def test_scan_recovers_all_injected_sites(self, trigger_dir):
        f = tau1(trigger_dir)
        cfg = EnvConfig(job_count=1000)
        jobs = generate_jobs(cfg, np.random.default_rng(14))
        schedule = P.make_schedule(f, 7, 0.05, len(jobs), np.random.default_rng(15))
        out = P.poison_episode(jobs, schedule, np.random.default_rng(16),
                               bounds=(1.0, 500.0))
        found = {o.end_index for o in T.scan(f, channel_series(out.jobs, "size"))}
        assert {o.end_index for o in out.ground_truth} <= found

    def test_unknown_channel(self, trigger_dir):
        f = tau1(trigger_dir)
        jobs = generate_jobs(EnvConfig(job_count=500), np.random.default_rng(17))
        schedule = P.make_schedule(f, 7, 0.05, len(jobs), np.random.default_rng(18))
        with pytest.raises(NotImplementedError):
            P.poison_episode(jobs, schedule, np.random.default_rng(19),
                             channel="arrival")


class TestRewardGate:
    def test_unit_trace(self):
        gate = P.RewardGate(duration=3)
        ends = {10, 50}
        flipped = [t for t in range(60)
                   if gate.apply(t, 0.25, ends) != 0.25]
        assert flipped == [10, 11, 12, 50, 51, 52]
        assert gate.flipped_steps == 6

    def test_exact_flip_value(self):
        gate = P.RewardGate(duration=1)
        assert gate.apply(0, 0.25, {0}) == 0.75

    def test_flip_is_involution(self):
        for r in (0.0, 0.25, 0.5, 0.9, 1.0):
            g1, g2 = P.RewardGate(1), P.RewardGate(1)
            assert g2.apply(0, g1.apply(0, r, {0}), {0}) == r

    def test_timer_restart_on_overlap(self):
        gate = P.RewardGate(duration=3)
        ends = {10, 11}
        flipped = [t for t in range(20) if gate.apply(t, 0.25, ends) != 0.25]
        assert flipped == [10, 11, 12, 13]

    def test_zero_duration_never_flips(self):
        gate = P.RewardGate(duration=0)
        assert all(gate.apply(t, 0.25, {5}) == 0.25 for t in range(10))


class TestRunBackdoorTraining:
    def small_configs(self):
        env = EnvConfig(vm_count=4, compute_vm_count=2, io_vm_count=2,
                        job_count=120)
        agent = AgentConfig(batch_len=16, hidden_size=6, lstm_layers=1,
                            memory_capacity=500)
        return env, agent

    def test_rate_zero_matches_clean_bitwise(self):
        env, agent = self.small_configs()
        clean = run_clean_training(env, agent, make_rngs(7), episodes=2)
        poisoned = P.run_backdoor_training(env, agent, SIMPLE, 3, 0.0,
                                           make_rngs(7), episodes=2)
        assert poisoned.poison_rows == []
        assert poisoned.flipped_steps == 0
        for k in clean.params.arrays:
            assert np.array_equal(clean.params.arrays[k],
                                  poisoned.params.arrays[k])

    def test_smoke_run_counts(self):
        env, agent = self.small_configs()
        result = P.run_backdoor_training(env, agent, SIMPLE, 3, 0.05,
                                         make_rngs(8), episodes=2,
                                         synth_bounds=(1.0, 2000.0))
        # floor(0.05*120/2) = 3 sites minus boundary check = 2 per episode
        sites_per_ep = len([r for r in result.poison_rows if r[0] == 0])
        assert sites_per_ep == 2
        assert len(result.poison_rows) == 4
        assert result.flipped_steps >= 4 * 3  # every site flips L steps
        assert result.flipped_steps < result.total_steps

    def test_budget_error_propagates(self, trigger_dir):
        env, agent = self.small_configs()
        f = T.parse_file(trigger_dir / "tau1.trig")
        with pytest.raises(P.BudgetError):
            P.run_backdoor_training(env, agent, f, 7, 0.01, make_rngs(9),
                                    episodes=1)
