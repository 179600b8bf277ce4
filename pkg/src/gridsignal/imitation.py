"""Imitation pre-training against the queue-balance rule.

The learner acts in the simulator with its own sampled actions while every
visited state is stored in a trajectory pool. Training minibatches are
relabeled freshly by the rule applied to the stored observations, so labels
always reflect the expert's judgment of states the learner actually reaches;
this relabeling is what prevents compounding distribution drift.

Pool entries are self-contained: the packed occupancy tensor, the current
phase (from which the one-hot phase matrix is rebuilt), and the per-phase
low-speed groups the rule needs for labeling.
"""

from __future__ import annotations

import numpy as np

from .config import ImitationConfig, RuleParams
from .controllers import rule_expert
from .encoder import encode_phase, encode_state
from .microsim import SimState, grouped_low_speed, step
from .net.model import ParamStore, PolicyValueNet
from .net.optim import sgd_step


def sample_actions(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Independent Bernoulli draw per intersection; int8 0/1."""
    return (rng.random(probs.shape) < probs).astype(np.int8)


def imitation_loss(probs, labels, c: float, params: ParamStore | None = None) -> float:
    """Summed cross-entropy over the batch plus c times the squared weights."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    bce = -(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)).sum()
    penalty = c * params.l2() if params is not None and c else 0.0
    return float(bce + penalty)


def imitation_grad_probs(probs, labels) -> np.ndarray:
    """d(loss)/d(probs) for the summed cross-entropy term."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return (probs - labels) / (probs * (1.0 - probs))


def accuracy(actions, labels) -> float:
    """Match fraction 1 - sum|a - y| / (T * I)."""
    actions = np.asarray(actions)
    labels = np.asarray(labels)
    if actions.shape != labels.shape:
        raise ValueError(f"shape mismatch: {actions.shape} vs {labels.shape}")
    if actions.size == 0:
        raise ValueError("accuracy of an empty action set is undefined")
    mism = np.abs(actions.astype(np.int64) - labels.astype(np.int64)).sum()
    return 1.0 - mism / actions.size


class TrajectoryPool:
    """Fixed-capacity FIFO store of visited states, bit-packed."""

    def __init__(self, capacity: int, n_intersections: int, lane_cells: int):
        self.capacity = capacity
        self.n_intersections = n_intersections
        self.lane_cells = lane_cells
        self._bits = n_intersections * 24 * lane_cells
        self._tensors = np.zeros((capacity, (self._bits + 7) // 8), dtype=np.uint8)
        self._phases = np.zeros((capacity, n_intersections), dtype=np.int8)
        self._grouped = np.zeros((capacity, n_intersections, 4), dtype=np.int32)
        self._count = 0
        self._next = 0  # ring-buffer write position

    def __len__(self) -> int:
        return self._count

    def add(self, tensor: np.ndarray, phase: np.ndarray, grouped: np.ndarray) -> None:
        self._tensors[self._next] = np.packbits(
            np.asarray(tensor, dtype=np.uint8).reshape(-1)
        )
        self._phases[self._next] = phase
        self._grouped[self._next] = grouped
        self._next = (self._next + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        """Map oldest-first logical indices to ring positions."""
        start = (self._next - self._count) % self.capacity
        return (start + logical) % self.capacity

    def _gather(self, phys: np.ndarray):
        i, k = self.n_intersections, self.lane_cells
        bits = np.unpackbits(self._tensors[phys], axis=1, count=self._bits)
        x = bits.reshape(len(phys), i, 24, k).astype(np.float32)
        phase = self._phases[phys].astype(np.int64)
        h = np.zeros((len(phys), i, 4), dtype=np.float32)
        n_idx = np.arange(len(phys))[:, None]
        h[n_idx, np.arange(i)[None, :], phase] = 1.0
        return x, h, self._grouped[phys].copy(), phase

    def entry(self, logical: int):
        x, h, grouped, phase = self._gather(self._physical(np.array([logical])))
        return x[0].astype(np.uint8), h[0], grouped[0], phase[0]

    def sample(self, rng: np.random.Generator, batch: int):
        """Uniform with replacement: (x, h, grouped, phase) batches."""
        if self._count == 0:
            raise ValueError("cannot sample from an empty pool")
        logical = rng.integers(0, self._count, size=batch)
        return self._gather(self._physical(logical))


def _train_minibatches(
    model: PolicyValueNet,
    params: ParamStore,
    pool: TrajectoryPool,
    rule: RuleParams,
    cfg: ImitationConfig,
    rng: np.random.Generator,
) -> float:
    losses = []
    n_i = model.n_intersections
    for _ in range(cfg.m):
        x, h, grouped, phase = pool.sample(rng, cfg.batch)
        labels = rule_expert(
            grouped.reshape(-1, 4), phase.reshape(-1), rule.beta
        ).reshape(-1, n_i)
        probs, _, cache = model.forward(params, x, h)
        losses.append(imitation_loss(probs, labels, cfg.c, params))
        model.backward(
            params, cache, imitation_grad_probs(probs, labels), np.zeros(cfg.batch)
        )
        if cfg.c:
            for name in params.names:
                params.grads[name] += 2.0 * cfg.c * params.arrays[name]
        sgd_step(params, cfg.lr)
    return float(np.mean(losses))


def dagger_round(
    sim: SimState,
    model: PolicyValueNet,
    params: ParamStore,
    pool: TrajectoryPool,
    rule: RuleParams,
    cfg: ImitationConfig,
    rng: np.random.Generator,
    act_override=None,
) -> tuple[float, float]:
    """One acting episode plus m minibatch updates.

    Rolls the simulator for its full episode with actions sampled from the
    current policy (or act_override, e.g. the expert itself), storing every
    pre-step state in the pool, then runs cfg.m SGD minibatches with fresh
    expert labels. Returns (episode accuracy vs expert, mean minibatch loss).
    """
    n_i = model.n_intersections
    mismatches = 0
    steps = sim.episode_steps
    for _ in range(steps):
        tensor = encode_state(sim)
        grouped = grouped_low_speed(sim)
        labels = rule_expert(grouped, sim.phase, rule.beta)
        pool.add(tensor, phase=sim.phase.copy(), grouped=grouped)
        if act_override is not None:
            action = np.asarray(act_override(sim), dtype=np.int8)
        else:
            probs, _, _ = model.forward(
                params, tensor[None], encode_phase(sim)[None]
            )
            action = sample_actions(rng, probs[0])
        mismatches += int(np.abs(action - labels).sum())
        step(sim, action)
    acc = 1.0 - mismatches / (steps * n_i)
    mean_loss = _train_minibatches(model, params, pool, rule, cfg, rng)
    return acc, mean_loss
