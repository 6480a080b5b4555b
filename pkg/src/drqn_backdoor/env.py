"""Partially observable cloud job-scheduling environment.

Jobs arrive as a Poisson stream and the agent assigns each one to one of M
VM FIFO queues.  The reward is based on the job's response time; the last
VM's waiting time is withheld from the observation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class JobSpec:
    id: int
    arrival_time: float
    job_type: int  # 0 = computing-intensive, 1 = I/O-intensive
    size: float    # instruction length, MI


@dataclass(frozen=True)
class VmSpec:
    id: int
    vm_type: int
    speed: float  # MIPS


@dataclass
class VmState:
    available_time: float = 0.0


@dataclass(frozen=True)
class EnvConfig:
    vm_count: int = 10
    compute_vm_count: int = 5
    io_vm_count: int = 5
    vm_speed: float = 2000.0
    job_count: int = 1000
    arrival_rate: float = 20.0
    size_mean: float = 200.0
    size_std: float = 20.0
    et_mode: str = "penalty_multiplier"  # or "literal"
    trigger_channel: str = "size"        # or "interarrival"
    unobservable_vm_index: int = -1      # -1 means the last VM

    def __post_init__(self):
        if self.compute_vm_count + self.io_vm_count != self.vm_count:
            raise ValueError("compute_vm_count + io_vm_count must equal vm_count")
        if self.vm_speed <= 0 or self.arrival_rate <= 0:
            raise ValueError("vm_speed and arrival_rate must be positive")
        if self.size_mean <= 0 or self.size_std < 0 or self.job_count < 1:
            raise ValueError("invalid job distribution parameters")
        if self.et_mode not in ("penalty_multiplier", "literal"):
            raise ValueError(f"unknown et_mode {self.et_mode!r}")
        if self.trigger_channel not in ("size", "interarrival"):
            raise ValueError(f"unknown trigger_channel {self.trigger_channel!r}")

    @property
    def hidden_vm(self) -> int:
        return self.unobservable_vm_index % self.vm_count

    @property
    def obs_dim(self) -> int:
        return 2 + self.vm_count - 1


@dataclass(frozen=True)
class Observation:
    job_type: int
    job_size: float
    waiting_times: tuple

    def as_vector(self, size_scale: float = 1.0) -> np.ndarray:
        return np.array([float(self.job_type), self.job_size / size_scale,
                         *self.waiting_times], dtype=float)


@dataclass(frozen=True)
class StepResult:
    reward: float
    next_observation: Optional[Observation]
    done: bool
    info: dict


def generate_jobs(config: EnvConfig, rng) -> list[JobSpec]:
    """Poisson arrivals, truncated-normal sizes, balanced Bernoulli types."""
    n = config.job_count
    arrivals = np.cumsum(rng.exponential(1.0 / config.arrival_rate, size=n))
    sizes = np.maximum(1.0, rng.normal(config.size_mean, config.size_std, size=n))
    types = rng.integers(0, 2, size=n)
    return [JobSpec(i, float(arrivals[i]), int(types[i]), float(sizes[i]))
            for i in range(n)]


def execution_time(job: JobSpec, vm: VmSpec, mode: str = "penalty_multiplier") -> float:
    mismatch = job.job_type ^ vm.vm_type
    if mode == "penalty_multiplier":
        return job.size * (mismatch + 1) / vm.speed
    if mode == "literal":
        return job.size / (vm.speed * (mismatch + 1))
    raise ValueError(f"unknown et_mode {mode!r}")


def waiting_time(vm_state: VmState, job: JobSpec) -> float:
    return max(0.0, vm_state.available_time - job.arrival_time)


def channel_series(jobs: Sequence[JobSpec], channel: str = "size") -> np.ndarray:
    """The scalar time series that triggers are scanned over."""
    if channel == "size":
        return np.array([j.size for j in jobs], dtype=float)
    if channel == "interarrival":
        arrivals = np.array([j.arrival_time for j in jobs], dtype=float)
        return np.diff(arrivals, prepend=0.0)
    raise ValueError(f"unknown trigger_channel {channel!r}")


class CloudSchedulingEnv:
    """One episode schedules config.job_count jobs; one decision per job."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.vms = [VmSpec(j, 0 if j < config.compute_vm_count else 1,
                           config.vm_speed)
                    for j in range(config.vm_count)]
        self.jobs: list[JobSpec] = []
        self.vm_states: list[VmState] = []
        self._index = 0
        self.done = True

    def reset(self, jobs: Optional[Sequence[JobSpec]] = None, rng=None) -> Observation:
        if jobs is None:
            if rng is None:
                raise ValueError("reset needs either a job sequence or an rng")
            jobs = generate_jobs(self.config, rng)
        if len(jobs) == 0:
            raise ValueError("empty job sequence")
        self.jobs = list(jobs)
        self.vm_states = [VmState() for _ in self.vms]
        self._index = 0
        self.done = False
        return self._observe(self.jobs[0])

    def _observe(self, job: JobSpec) -> Observation:
        hidden = self.config.hidden_vm
        wts = tuple(waiting_time(self.vm_states[j], job)
                    for j in range(self.config.vm_count) if j != hidden)
        return Observation(job.job_type, job.size, wts)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        if not (0 <= action < self.config.vm_count):
            raise ValueError(f"action {action} outside [0, {self.config.vm_count})")
        job = self.jobs[self._index]
        vm = self.vms[action]
        state = self.vm_states[action]
        et = execution_time(job, vm, self.config.et_mode)
        wt = waiting_time(state, job)
        state.available_time = max(state.available_time, job.arrival_time) + et
        rt = wt + et
        reward = min(1.0, max(0.0, job.size / (rt * vm.speed)))
        self._index += 1
        self.done = self._index >= len(self.jobs)
        next_obs = None if self.done else self._observe(self.jobs[self._index])
        info = {"response_time": rt, "waiting_time": wt, "execution_time": et,
                "job": job, "vm": vm.id}
        return StepResult(reward, next_obs, self.done, info)


def save_jobs_csv(jobs: Sequence[JobSpec], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "arrival_time", "type", "size"])
        for job in jobs:
            writer.writerow([job.id, f"{job.arrival_time:.6f}", job.job_type,
                             f"{job.size:.6f}"])


def load_jobs_csv(path) -> list[JobSpec]:
    jobs = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            jobs.append(JobSpec(int(row["id"]), float(row["arrival_time"]),
                                int(row["type"]), float(row["size"])))
    return jobs
