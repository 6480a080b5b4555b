"""CDA / ASR / APR computation and trace emission.

Degradation is operationalized against mu_clean, the model's own mean
per-step reward on the episode outside all attack windows: a window counts
as degraded when its mean reward drops at least a fraction delta below
mu_clean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn, triggers as tdsl
from .agent import rollout_greedy
from .env import EnvConfig, channel_series, generate_jobs
from .poison import PoisonSchedule, place_sites, poison_episode

DEFAULT_DELTA = 0.3


@dataclass
class EpisodeLog:
    rewards: np.ndarray          # true (unflipped) per-step rewards
    actions: np.ndarray
    response_times: np.ndarray
    sizes: np.ndarray
    trigger_ends: tuple          # ground-truth trigger end indices
    duration: int                # attack duration L
    model_id: str = ""
    config_id: str = ""

    def __post_init__(self):
        n = len(self.rewards)
        if not (len(self.actions) == len(self.response_times)
                == len(self.sizes) == n):
            raise ValueError("per-step arrays must have equal length")


def _attack_mask(log: EpisodeLog) -> np.ndarray:
    mask = np.zeros(len(log.rewards), dtype=bool)
    for end in log.trigger_ends:
        mask[end:end + log.duration] = True
    return mask


def _mu_clean(log: EpisodeLog) -> float:
    outside = log.rewards[~_attack_mask(log)]
    if outside.size == 0:
        raise ValueError("no steps outside attack windows")
    return float(outside.mean())


def cda(clean_logs: Sequence[EpisodeLog],
        backdoored_clean_logs: Sequence[EpisodeLog]) -> float:
    """Mean episode return of the backdoored model over the clean model's,
    both measured on trigger-free episodes."""
    if not clean_logs or not backdoored_clean_logs:
        raise ValueError("empty evaluation logs")
    r_normal = float(np.mean([log.rewards.sum() for log in clean_logs]))
    r_backdoored = float(np.mean([log.rewards.sum() for log in backdoored_clean_logs]))
    if r_normal == 0:
        raise ZeroDivisionError("clean model return is zero")
    return r_backdoored / r_normal


def asr(attack_logs: Sequence[EpisodeLog], delta: float = DEFAULT_DELTA) -> float:
    """Fraction of trigger occurrences whose attack window shows a mean
    reward at least delta below the episode's off-window mean."""
    n_true = 0
    n_present = 0
    for log in attack_logs:
        if not log.trigger_ends:
            continue
        mu = _mu_clean(log)
        threshold = (1.0 - delta) * mu
        for end in log.trigger_ends:
            window = log.rewards[end:end + log.duration]
            if window.size == 0:
                continue
            n_true += 1
            if window.mean() <= threshold:
                n_present += 1
    if n_true == 0:
        raise ValueError("attack logs contain no trigger occurrences")
    return n_present / n_true


def apr(attack_logs: Sequence[EpisodeLog], delta: float = DEFAULT_DELTA) -> float:
    """Agreement between the designed duration and the observed run of
    degraded steps starting at each trigger end, clamped at zero."""
    scores = []
    for log in attack_logs:
        if not log.trigger_ends:
            continue
        mu = _mu_clean(log)
        threshold = (1.0 - delta) * mu
        for end in log.trigger_ends:
            present = 0
            t = end
            while t < len(log.rewards) and log.rewards[t] < threshold:
                present += 1
                t += 1
            scores.append(max(0.0, 1.0 - abs(log.duration - present) / log.duration))
    if not scores:
        raise ValueError("attack logs contain no trigger occurrences")
    return float(np.mean(scores))


def evaluate_checkpoint(params: nn.NetworkParams, env_config: EnvConfig,
                        rng, episodes: int = 20,
                        formula: Optional[tdsl.TriggerFormula] = None,
                        duration: int = 0, triggers_per_episode: int = 4,
                        synth_bounds: tuple = (1.0, 10000.0),
                        model_id: str = "", config_id: str = "") -> list[EpisodeLog]:
    """Greedy rollouts; when a formula is given, triggers_per_episode trigger
    windows are injected per episode with the schedule spacing rules.
    Logged rewards are always the true environment rewards."""
    logs = []
    for _ in range(episodes):
        jobs = generate_jobs(env_config, rng)
        ends = ()
        dur = duration
        if formula is not None:
            sites = place_sites(triggers_per_episode, len(jobs),
                                formula.window_len, duration, rng)
            schedule = PoisonSchedule(formula=formula, duration=duration,
                                      sites=sites, poisoning_rate=0.0)
            poisoned = poison_episode(jobs, schedule, rng, bounds=synth_bounds,
                                      channel=env_config.trigger_channel)
            jobs = poisoned.jobs
            ends = tuple(occ.end_index for occ in poisoned.ground_truth)
        trace = rollout_greedy(params, env_config, jobs)
        logs.append(EpisodeLog(rewards=trace["rewards"], actions=trace["actions"],
                               response_times=trace["response_times"],
                               sizes=trace["sizes"], trigger_ends=ends,
                               duration=dur, model_id=model_id,
                               config_id=config_id))
    return logs


@dataclass(frozen=True)
class MetricReport:
    rate: float
    trigger: str
    asr: float
    apr: float
    cda: float


def write_trace_csv(log: EpisodeLog, path) -> None:
    mask = _attack_mask(log)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "reward", "response_time", "action",
                         "in_attack_window"])
        for t in range(len(log.rewards)):
            writer.writerow([t, f"{log.rewards[t]:.6f}",
                             f"{log.response_times[t]:.6f}",
                             int(log.actions[t]), int(mask[t])])


def read_trace_csv(path) -> dict:
    steps, rewards, rts, actions, mask = [], [], [], [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            rewards.append(float(row["reward"]))
            rts.append(float(row["response_time"]))
            actions.append(int(row["action"]))
            mask.append(bool(int(row["in_attack_window"])))
    return {"steps": np.array(steps), "rewards": np.array(rewards),
            "response_times": np.array(rts), "actions": np.array(actions),
            "in_attack_window": np.array(mask)}


def write_summary_csv(reports: Sequence[MetricReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rate", "trigger", "asr", "apr", "cda"])
        for r in reports:
            writer.writerow([f"{r.rate:g}", r.trigger, f"{r.asr:.4f}",
                             f"{r.apr:.4f}", f"{r.cda:.4f}"])


def read_summary_csv(path) -> list[MetricReport]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricReport(rate=float(row["rate"]), trigger=row["trigger"],
                                    asr=float(row["asr"]), apr=float(row["apr"]),
                                    cda=float(row["cda"])))
    return out


def format_summary_table(reports: Sequence[MetricReport]) -> str:
    lines = [f"{'rate':>6} {'trigger':>8} {'asr':>7} {'apr':>7} {'cda':>7}"]
    for r in reports:
        lines.append(f"{r.rate:>6g} {r.trigger:>8} {r.asr:>7.4f} "
                     f"{r.apr:>7.4f} {r.cda:>7.4f}")
    return "\n".join(lines)
