"""Acceptance gate: one test per release criterion.

Each test prints a single "criterion N: PASS/FAIL" line on the terminal
(bypassing capture) so the gate is readable from a plain pytest run.

Criteria 7 and 8 train real models: three seeds of clean and of backdoored
training at a desk scale chosen to fit a single CPU core well inside the
stated runtime budgets.  Trained artifacts are cached under tests/_cache
keyed by a hash of the training settings, so only the first run pays the
training cost.
"""

import hashlib
import json
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

from drqn_backdoor import metrics as M, nn, poison as P, triggers as T
from drqn_backdoor.agent import AgentConfig, run_clean_training, rollout_greedy
from drqn_backdoor.config import make_rngs, substream
from drqn_backdoor.env import CloudSchedulingEnv, EnvConfig, generate_jobs

from conftest import REPO_ROOT, random_formula
from test_env import event_list_response_times
from test_nn import grad_check

CACHE_DIR = Path(__file__).parent / "_cache"
TRIGGER_DIR = REPO_ROOT / "triggers"

# Desk-scale training setup shared by the stochastic criteria.  The shipped
# full-scale configuration lives in configs/tau1_rate20.cfg; the properties
# gated here are scale-free, so the smaller setup keeps a cold run of this
# module around an hour on one core.
DESK_ENV = EnvConfig(job_count=500)
DESK_AGENT = AgentConfig(batch_len=48, hidden_size=32, lstm_layers=1,
                         epsilon_decrement=0.0025, max_training_episodes=400)
SEEDS = (101, 202, 303)
TAU1_DURATION = 7
POISON_RATE = 0.05
SYNTH_BOUNDS = (1.0, 500.0)
EVAL_EPISODES = 20


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def tau(name):
    return T.parse_file(TRIGGER_DIR / f"{name}.trig")


# ---------------------------------------------------------------- training


def _settings_key(kind, seed):
    payload = json.dumps({"kind": kind, "seed": seed,
                          "env": asdict(DESK_ENV), "agent": asdict(DESK_AGENT),
                          "rate": POISON_RATE, "duration": TAU1_DURATION,
                          "bounds": SYNTH_BOUNDS, "v": 1}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _train_cached(kind, seed):
    CACHE_DIR.mkdir(exist_ok=True)
    key = _settings_key(kind, seed)
    ckpt = CACHE_DIR / f"{kind}-{seed}-{key}.ckpt"
    meta_path = CACHE_DIR / f"{kind}-{seed}-{key}.json"
    if ckpt.is_file() and meta_path.is_file():
        params, _ = nn.load_checkpoint(ckpt)
        return params, json.loads(meta_path.read_text())
    if kind == "clean":
        result = run_clean_training(DESK_ENV, DESK_AGENT, make_rngs(seed))
        meta = {"flipped": 0, "total": len(result.curve) * DESK_ENV.job_count}
    else:
        result = P.run_backdoor_training(DESK_ENV, DESK_AGENT, tau("tau1"),
                                         TAU1_DURATION, POISON_RATE,
                                         make_rngs(seed),
                                         synth_bounds=SYNTH_BOUNDS)
        meta = {"flipped": result.flipped_steps, "total": result.total_steps}
    nn.save_checkpoint(ckpt, result.params)
    meta_path.write_text(json.dumps(meta))
    return result.params, meta


@pytest.fixture(scope="session")
def clean_models():
    return {seed: _train_cached("clean", seed) for seed in SEEDS}


@pytest.fixture(scope="session")
def backdoor_models():
    return {seed: _train_cached("backdoor", seed) for seed in SEEDS}


def _eval_clean(params, seed, stream):
    return M.evaluate_checkpoint(params, DESK_ENV, substream(seed, stream),
                                 episodes=EVAL_EPISODES)


def _eval_attack(params, seed):
    return M.evaluate_checkpoint(params, DESK_ENV,
                                 substream(seed, "eval-attack"),
                                 episodes=EVAL_EPISODES, formula=tau("tau1"),
                                 duration=TAU1_DURATION,
                                 synth_bounds=SYNTH_BOUNDS)


# ---------------------------------------------------------------- criteria


def test_criterion_1_scan_oracle(capsys):
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    for _ in range(1000):
        f = random_formula(rng, max_window=5, max_atoms=6)
        series = list(rng.uniform(-10, 10, size=int(rng.integers(f.window_len,
                                                                 201))))
        got = [o.end_index for o in T.scan(f, series)]
        n = f.window_len
        want = [t for t in range(n - 1, len(series))
                if T.evaluate(f, series[t - n + 1:t + 1])]
        assert got == want
    elapsed = time.perf_counter() - start
    _report(capsys, 1, elapsed < 10.0,
            f"1000 scan cases match brute force in {elapsed:.1f}s")


def test_criterion_2_synthesis_soundness(capsys):
    rng = np.random.default_rng(1002)
    start = time.perf_counter()
    failures = 0
    for name in ("tau1", "tau2", "tau3", "tau4"):
        f = tau(name)
        base = [200.0] * f.window_len
        for _ in range(1000):
            w = T.synthesize_window(f, base, rng, bounds=(1.0, 500.0))
            if not T.evaluate(f, w):
                failures += 1
    elapsed = time.perf_counter() - start
    _report(capsys, 2, failures == 0 and elapsed < 10.0,
            f"4000 synthesized windows, {failures} unsound, {elapsed:.1f}s")


def test_criterion_3_gradient_correctness(capsys):
    rng = np.random.default_rng(1003)
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        layout = nn.NetLayout(obs_dim=int(rng.integers(2, 7)),
                              hidden=int(rng.integers(2, 9)),
                              lstm_layers=int(rng.integers(1, 3)),
                              actions=int(rng.integers(2, 5)))
        worst = max(worst, grad_check(layout, seed=2000 + i))
    elapsed = time.perf_counter() - start
    _report(capsys, 3, worst < 1e-4 and elapsed < 60.0,
            f"20 nets, worst relative error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_4_queue_oracle(capsys):
    cfg = EnvConfig(job_count=1000)
    env = CloudSchedulingEnv(cfg)
    jobs = generate_jobs(cfg, np.random.default_rng(1004))
    env.reset(jobs=jobs)
    rng = np.random.default_rng(1005)
    actions = [int(rng.integers(10)) for _ in jobs]
    got = {}
    for job, a in zip(jobs, actions):
        got[job.id] = env.step(a).info["response_time"]
    want = event_list_response_times(jobs, actions, env.vms, cfg.et_mode)
    worst = max(abs(got[j] - want[j]) for j in got)
    _report(capsys, 4, worst < 1e-9,
            f"1000-job response times match event list, max dev {worst:.1e}")


def test_criterion_5_reward_gate(capsys):
    gate = P.RewardGate(duration=3)
    ends = {10, 50}
    flipped = [t for t in range(60) if gate.apply(t, 0.25, ends) != 0.25]
    value = P.RewardGate(duration=1).apply(0, 0.25, {0})
    ok = flipped == [10, 11, 12, 50, 51, 52] and value == 0.75
    _report(capsys, 5, ok,
            f"flipped steps {flipped}, flip(0.25) = {value}")


def test_criterion_6_poisoning_budget(capsys, backdoor_models):
    f = tau("tau1")
    rng = np.random.default_rng(1006)
    fractions = []
    for _ in range(100):
        s = P.make_schedule(f, TAU1_DURATION, 0.05, 1000, rng)
        fractions.append(len(s.sites) * f.window_len / 1000)
    flip_bound = POISON_RATE * TAU1_DURATION / f.window_len
    flip_fracs = [meta["flipped"] / meta["total"]
                  for _, meta in backdoor_models.values()]
    ok = max(fractions) < 0.05 and max(flip_fracs) < flip_bound
    _report(capsys, 6, ok,
            f"poisoned fraction max {max(fractions):.3f} < 0.05; flipped "
            f"fraction max {max(flip_fracs):.4f} < {flip_bound:.4f}")


def _uniform_random_mean(seed):
    env = CloudSchedulingEnv(DESK_ENV)
    rng = substream(seed, "baseline")
    means = []
    for _ in range(EVAL_EPISODES):
        jobs = generate_jobs(DESK_ENV, rng)
        env.reset(jobs=jobs)
        total = 0.0
        while not env.done:
            total += env.step(int(rng.integers(DESK_ENV.vm_count))).reward
        means.append(total / len(jobs))
    return float(np.mean(means))


def _type_matching_mean(seed):
    """Greedy heuristic: least-loaded VM whose type matches the job."""
    env = CloudSchedulingEnv(DESK_ENV)
    rng = substream(seed, "baseline-heuristic")
    means = []
    for _ in range(EVAL_EPISODES):
        jobs = generate_jobs(DESK_ENV, rng)
        obs = env.reset(jobs=jobs)
        total = 0.0
        while not env.done:
            candidates = [v.id for v in env.vms
                          if v.vm_type == obs.job_type and v.id != 9]
            action = min(candidates, key=lambda i: obs.waiting_times[i])
            result = env.step(action)
            total += result.reward
            obs = result.next_observation
        means.append(total / len(jobs))
    return float(np.mean(means))


def test_criterion_7_clean_convergence(capsys, clean_models):
    trained = []
    for seed, (params, _) in clean_models.items():
        logs = _eval_clean(params, seed, "eval-clean")
        trained.append(np.mean([log.rewards.mean() for log in logs]))
    trained_mean = float(np.mean(trained))
    rand_mean = _uniform_random_mean(SEEDS[0])
    heur_mean = _type_matching_mean(SEEDS[0])
    ratio = trained_mean / rand_mean
    _report(capsys, 7, ratio >= 1.30,
            f"trained {trained_mean:.3f} vs random {rand_mean:.3f} "
            f"(ratio {ratio:.2f}, need >= 1.30); type-matching heuristic "
            f"{heur_mean:.3f} reported for reference")


def test_criterion_8_backdoor_reproduction(capsys, clean_models,
                                           backdoor_models):
    rows = []
    for seed in SEEDS:
        clean_params, _ = clean_models[seed]
        bd_params, _ = backdoor_models[seed]
        clean_logs = _eval_clean(clean_params, seed, "eval-clean")
        bd_clean_logs = _eval_clean(bd_params, seed, "eval-clean")
        attack_logs = _eval_attack(bd_params, seed)
        rows.append((seed, M.cda(clean_logs, bd_clean_logs),
                     M.asr(attack_logs, 0.3), M.apr(attack_logs, 0.3)))
    best = max(rows, key=lambda r: min(r[1] - 0.90, r[2] - 0.85, r[3] - 0.80))
    ok = best[1] >= 0.90 and best[2] >= 0.85 and best[3] >= 0.80
    detail = "; ".join(f"seed {s}: CDA {c:.3f} ASR {a:.3f} APR {p:.3f}"
                       for s, c, a, p in rows)
    _report(capsys, 8, ok, f"best of 3 seeds needs CDA>=0.90 ASR>=0.85 "
            f"APR>=0.80 -- {detail}")


def test_criterion_9_metric_fixtures(capsys):
    def log(rewards, ends=(), duration=0):
        n = len(rewards)
        return M.EpisodeLog(rewards=np.asarray(rewards, float),
                            actions=np.zeros(n, int),
                            response_times=np.zeros(n), sizes=np.zeros(n),
                            trigger_ends=tuple(ends), duration=duration)

    cda_val = M.cda([log([0.9] * 1000)], [log([0.88] * 1000)])

    asr_rewards = [0.8] * 100
    for end in (10, 30, 50):
        for t in range(end, end + 5):
            asr_rewards[t] = 0.1
    asr_val = M.asr([log(asr_rewards, (10, 30, 50, 70), 5)], 0.3)

    apr_rewards = [0.8] * 100
    for t in range(40, 45):
        apr_rewards[t] = 0.1
    apr_val = M.apr([log(apr_rewards, (40,), 7)], 0.3)

    ok = (cda_val == pytest.approx(880.0 / 900.0) and asr_val == 0.75
          and apr_val == pytest.approx(1.0 - 2.0 / 7.0))
    _report(capsys, 9, ok,
            f"cda {cda_val:.4f} (880/900), asr {asr_val} (3/4), "
            f"apr {apr_val:.4f} (1-2/7)")


def test_criterion_10_false_positive_control(capsys, clean_models):
    f = tau("tau1")
    params, _ = clean_models[SEEDS[0]]
    rng = substream(SEEDS[0], "fp-control")
    logs = M.evaluate_checkpoint(params, DESK_ENV, rng,
                                 episodes=EVAL_EPISODES)
    pseudo = []
    for log in logs:
        sites = P.place_sites(4, len(log.rewards), f.window_len,
                              TAU1_DURATION, rng)
        ends = tuple(s + f.window_len - 1 for s in sites)
        pseudo.append(M.EpisodeLog(rewards=log.rewards, actions=log.actions,
                                   response_times=log.response_times,
                                   sizes=log.sizes, trigger_ends=ends,
                                   duration=TAU1_DURATION))
    rate = M.asr(pseudo, 0.3)
    _report(capsys, 10, rate < 0.05,
            f"degradation test fires on {rate:.3f} of "
            f"{EVAL_EPISODES * 4} trigger-free pseudo-windows (< 0.05)")


def test_criterion_11_determinism(capsys, tmp_path):
    cfg = REPO_ROOT / "configs" / "smoke.cfg"
    exe = [sys.executable, "-m", "drqn_backdoor.cli"]

    def pipeline(out):
        for cmd in (
            exe + ["gen-data", "--config", str(cfg), "--poison",
                   "--out", str(out / "data")],
            exe + ["train", "--config", str(cfg), "--mode", "backdoor",
                   "--out", str(out / "bd")],
            exe + ["train", "--config", str(cfg), "--mode", "clean",
                   "--out", str(out / "clean")],
            exe + ["evaluate", "--config", str(cfg), "--episodes", "2",
                   "--clean-ckpt", str(out / "clean" / "checkpoint.txt"),
                   "--backdoor-ckpt", str(out / "bd" / "checkpoint.txt"),
                   "--out", str(out / "eval")],
        ):
            subprocess.run(cmd, check=True, cwd=REPO_ROOT,
                           capture_output=True)

    a, b = tmp_path / "a", tmp_path / "b"
    pipeline(a)
    pipeline(b)
    mismatches = []
    for path_a in sorted(a.rglob("*.csv")):
        path_b = b / path_a.relative_to(a)
        if path_a.read_bytes() != path_b.read_bytes():
            mismatches.append(str(path_a.relative_to(a)))
    n = len(list(a.rglob("*.csv")))
    _report(capsys, 11, n > 0 and not mismatches,
            f"{n} CSVs byte-identical across repeated seeded runs"
            + (f"; mismatches: {mismatches}" if mismatches else ""))
