"""Poisoned training: trigger injection sites under the poisoning-rate
budget, job-stream rewriting, and the reward-flip gate."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import triggers as tdsl
from .agent import AgentConfig, TrainingResult, run_clean_training
from .env import EnvConfig, JobSpec, channel_series


class BudgetError(ValueError):
    """The poisoning-rate budget does not admit a valid schedule."""


@dataclass(frozen=True)
class PoisonSchedule:
    formula: tdsl.TriggerFormula
    duration: int
    sites: tuple  # window-start timesteps, ascending
    poisoning_rate: float


@dataclass(frozen=True)
class PoisonedEpisode:
    jobs: list
    ground_truth: list  # TriggerOccurrence per injected site
    site_starts: tuple


def place_sites(n_sites: int, episode_len: int, window_len: int, duration: int,
                rng) -> tuple:
    """Uniformly choose n_sites window starts with pairwise gap of at least
    window_len + duration, leaving room for the attack window at the end."""
    gap = window_len + duration
    max_start = episode_len - gap
    if max_start < 0:
        raise BudgetError("episode too short for one trigger plus its attack window")
    slack = max_start - (n_sites - 1) * (gap - 1)
    if slack < 0 or slack + 1 < n_sites:
        raise BudgetError(
            f"cannot place {n_sites} sites with gap {gap} in {episode_len} steps")
    picks = np.sort(rng.choice(slack + 1, size=n_sites, replace=False))
    return tuple(int(p + i * (gap - 1)) for i, p in enumerate(picks))


def make_schedule(formula: tdsl.TriggerFormula, duration: int, rate: float,
                  episode_len: int, rng) -> PoisonSchedule:
    """Site count from the strict budget |N_t|*|sites|/N < rate."""
    nt = formula.window_len
    if rate <= 0 or rate >= 1:
        raise ValueError("poisoning rate must lie in (0, 1)")
    n_sites = math.floor(rate * episode_len / nt)
    if n_sites * nt >= rate * episode_len:
        n_sites -= 1  # flooring landed exactly on the budget; inequality is strict
    if n_sites < 1:
        raise BudgetError(
            f"budget rate={rate} admits no trigger site for window {nt} "
            f"in {episode_len} steps")
    sites = place_sites(n_sites, episode_len, nt, duration, rng)
    return PoisonSchedule(formula=formula, duration=duration, sites=sites,
                          poisoning_rate=rate)


def poison_episode(jobs: Sequence[JobSpec], schedule: PoisonSchedule, rng,
                   bounds: tuple = (1.0, 10000.0),
                   channel: str = "size") -> PoisonedEpisode:
    """Rewrite the trigger channel at each site via window synthesis.

    Only the job size field changes (the only channel supported for
    rewriting); arrival times and types are untouched.
    """
    if channel != "size":
        raise NotImplementedError("only the size channel can be rewritten")
    nt = schedule.formula.window_len
    if schedule.sites and schedule.sites[-1] + nt > len(jobs):
        raise ValueError("schedule does not fit the episode length")
    out = list(jobs)
    ground_truth = []
    for start in schedule.sites:
        base = [out[start + k].size for k in range(nt)]
        window = tdsl.synthesize_window(schedule.formula, base, rng, bounds=bounds)
        for k in range(nt):
            out[start + k] = replace(out[start + k], size=float(window[k]))
        ground_truth.append(tdsl.TriggerOccurrence(end_index=start + nt - 1,
                                                   window=tuple(window)))
    return PoisonedEpisode(jobs=out, ground_truth=ground_truth,
                           site_starts=tuple(schedule.sites))


class RewardGate:
    """Reward flip with a countdown timer.

    When t is a trigger end index the timer restarts at the attack duration;
    while the timer is positive the reward is flipped to 1 - r and the timer
    decrements.
    """

    def __init__(self, duration: int):
        self.duration = duration
        self.poison_dur = 0
        self.flipped_steps = 0

    def apply(self, t: int, reward: float, trigger_ends) -> float:
        if t in trigger_ends:
            self.poison_dur = self.duration
        if self.poison_dur > 0:
            reward = 1.0 - reward
            self.poison_dur -= 1
            self.flipped_steps += 1
        return reward


@dataclass
class BackdoorTrainingResult:
    params: object
    curve: list
    poison_rows: list   # (episode, site_start, trigger_end, duration)
    flipped_steps: int
    total_steps: int


def run_backdoor_training(env_config: EnvConfig, agent_config: AgentConfig,
                          formula: tdsl.TriggerFormula, duration: int,
                          rate: float, rngs: dict,
                          episodes: Optional[int] = None,
                          synth_bounds: tuple = (1.0, 10000.0)) -> BackdoorTrainingResult:
    """Alg-style poisoned training: per episode a fresh schedule, a poisoned
    job stream, and gated (flipped) rewards that are stored and trained on.

    Trigger detection uses the injected ground truth plus a scan of the
    realized channel, so accidental natural matches fire the gate too.
    """
    if rate == 0.0:
        # degenerate schedule: no sites, identical to clean training
        result = run_clean_training(env_config, agent_config, rngs,
                                    episodes=episodes)
        return BackdoorTrainingResult(params=result.params, curve=result.curve,
                                      poison_rows=[], flipped_steps=0,
                                      total_steps=len(result.curve) * env_config.job_count)

    poison_rows = []
    gates = []

    def episode_hook(episode, jobs):
        schedule = make_schedule(formula, duration, rate, len(jobs),
                                 rngs["schedule"])
        poisoned = poison_episode(jobs, schedule, rngs["synthesis"],
                                  bounds=synth_bounds,
                                  channel=env_config.trigger_channel)
        series = channel_series(poisoned.jobs, env_config.trigger_channel)
        ends = {occ.end_index for occ in tdsl.scan(formula, series)}
        ends.update(occ.end_index for occ in poisoned.ground_truth)
        for start, occ in zip(poisoned.site_starts, poisoned.ground_truth):
            poison_rows.append((episode, start, occ.end_index, duration))
        gate = RewardGate(duration)
        gates.append(gate)
        return poisoned.jobs, lambda t, r, info: gate.apply(t, r, ends)

    result = run_clean_training(env_config, agent_config, rngs,
                                episodes=episodes, episode_hook=episode_hook)
    flipped = sum(g.flipped_steps for g in gates)
    total = len(result.curve) * env_config.job_count
    return BackdoorTrainingResult(params=result.params, curve=result.curve,
                                  poison_rows=poison_rows,
                                  flipped_steps=flipped, total_steps=total)
