"""On-policy actor-critic fine-tuning with a clipped probability ratio.

Every n_max steps the episode loop freezes a snapshot of the acting policy:
its switch probabilities on the buffered states and the n-step value targets
built from its own value estimates. Against that frozen snapshot it ascends

    L = surrogate - alpha1 * value_loss + alpha2 * entropy

where the surrogate is mean_t min(r_t * Abar_t, clip(r_t) * Abar_t), r_t the
joint Bernoulli likelihood ratio of the taken switch vector under current
versus frozen policy, and Abar_t the frozen per-step mean of the 1..n-step
advantages. Value targets stay frozen inside a cycle, so the value loss
gradient flows only through the current value estimate of each buffered
state; advantages act as constants in the surrogate. The frozen snapshot
makes the whole cycle objective a pure function of the parameters, which is
what the finite-difference gradient checks exercise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RlConfig, RuleParams
from .controllers import rule_expert
from .encoder import encode_phase, encode_state
from .imitation import sample_actions
from .microsim import SimState, grouped_low_speed, low_speed_counts, step
from .net.model import ParamStore, PolicyValueNet


def reward(prev_counts: np.ndarray, next_counts: np.ndarray) -> float:
    """Network-wide drop in the low-speed vehicle count over one step."""
    return float(prev_counts.sum() - next_counts.sum())


def n_step_targets(values: np.ndarray, rewards: np.ndarray, gamma: float):
    """Per buffered step t, the vector of n-step returns for n = 1..B-t.

    targets[t][n-1] = sum_{k<n} gamma^k * rewards[t+k] + gamma^n * values[t+n]
    """
    b = rewards.size
    out = []
    for t in range(b):
        horizon = b - t
        acc = 0.0
        row = np.empty(horizon, dtype=np.float64)
        for n in range(1, horizon + 1):
            acc += gamma ** (n - 1) * rewards[t + n - 1]
            row[n - 1] = acc + gamma**n * values[t + n]
        out.append(row)
    return tuple(out)


def advantages_from(targets, values: np.ndarray):
    """(per-step advantage sets, per-step means Abar, flattened sets)."""
    per_t = tuple(targets[t] - values[t] for t in range(len(targets)))
    abar = np.array([a.mean() for a in per_t])
    flat = np.concatenate(per_t) if per_t else np.empty(0)
    return per_t, abar, flat


def _log_ratio(probs_new, probs_old, actions):
    a = actions.astype(np.float64)
    return (
        a * (np.log(probs_new) - np.log(probs_old))
        + (1.0 - a) * (np.log1p(-probs_new) - np.log1p(-probs_old))
    ).sum(axis=1)


def ppo_surrogate(probs_new, probs_old, actions, abar, eps: float) -> float:
    """Mean over steps of min(r * Abar, clip(r, 1-eps, 1+eps) * Abar)."""
    probs_new = np.asarray(probs_new, dtype=np.float64)
    probs_old = np.asarray(probs_old, dtype=np.float64)
    r = np.exp(_log_ratio(probs_new, probs_old, np.asarray(actions)))
    abar = np.asarray(abar, dtype=np.float64)
    return float(np.minimum(r * abar, np.clip(r, 1.0 - eps, 1.0 + eps) * abar).mean())


def value_loss(flat_advantages: np.ndarray) -> float:
    """Mean squared advantage over every (t, n) pair of the cycle."""
    flat = np.asarray(flat_advantages, dtype=np.float64)
    return float((flat**2).mean()) if flat.size else 0.0


def entropy_bonus(probs) -> float:
    """Batch-mean total Bernoulli entropy of the switch distribution."""
    p = np.asarray(probs, dtype=np.float64)
    ent = -(p * np.log(p) + (1.0 - p) * np.log1p(-p))
    return float(ent.sum(axis=1).mean())


def total_objective(cfg: RlConfig, surrogate: float, vloss: float, entropy: float) -> float:
    return surrogate - cfg.alpha1 * vloss + cfg.alpha2 * entropy


@dataclass
class CycleBatch:
    """States s_0..s_B (the last is the bootstrap state), plus the B taken
    actions and the B rewards observed after them."""

    x: np.ndarray  # (B+1, I, 24, K)
    h: np.ndarray  # (B+1, I, 4)
    actions: np.ndarray  # (B, I)
    rewards: np.ndarray  # (B,)


@dataclass
class FrozenCycle:
    """Constants captured from the pre-update policy at the sync point."""

    probs_old: np.ndarray  # (B, I)
    values: np.ndarray  # (B+1,) value estimates used to build targets
    targets: tuple  # per-step n-step return vectors
    abar: np.ndarray  # (B,) mean advantages, surrogate coefficients


def freeze_cycle(
    model: PolicyValueNet, params: ParamStore, batch: CycleBatch, gamma: float
) -> FrozenCycle:
    probs, values, _ = model.forward(params, batch.x, batch.h)
    values = values.astype(np.float64)
    targets = n_step_targets(values, batch.rewards, gamma)
    _, abar, _ = advantages_from(targets, values)
    b = batch.actions.shape[0]
    return FrozenCycle(
        probs_old=probs[:b].astype(np.float64).copy(),
        values=values.copy(),
        targets=targets,
        abar=abar,
    )


def _cycle_parts(model, params, batch, frozen, cfg):
    probs, values, cache = model.forward(params, batch.x, batch.h)
    b = batch.actions.shape[0]
    pn = probs[:b].astype(np.float64)
    surr = ppo_surrogate(pn, frozen.probs_old, batch.actions, frozen.abar, cfg.eps_clip)
    flat = np.concatenate(
        [frozen.targets[t] - values[t] for t in range(b)]
    )
    vloss = value_loss(flat)
    ent = entropy_bonus(pn)
    return probs, values, cache, pn, surr, vloss, ent


def cycle_objective(model, params, batch, frozen, cfg) -> tuple[float, dict]:
    """The maximized objective as a pure function of params."""
    _, _, _, _, surr, vloss, ent = _cycle_parts(model, params, batch, frozen, cfg)
    parts = {"surrogate": surr, "value_loss": vloss, "entropy": ent}
    return total_objective(cfg, surr, vloss, ent), parts


def cycle_backward(model, params, batch, frozen, cfg) -> dict:
    """Fill params.grads with the gradient of the minimized -L objective."""
    probs, values, cache, pn, surr, vloss, ent = _cycle_parts(
        model, params, batch, frozen, cfg
    )
    b, n_i = batch.actions.shape
    a = batch.actions.astype(np.float64)
    r = np.exp(_log_ratio(pn, frozen.probs_old, batch.actions))
    clipped = np.clip(r, 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip)
    # The unclipped branch is active (and differentiable in r) when its value
    # is not above the clipped branch; the clipped branch, once active, is
    # saturated and contributes zero gradient.
    unclipped_active = (r * frozen.abar) <= (clipped * frozen.abar)
    dsurr_dr = np.where(unclipped_active, frozen.abar, 0.0) / b
    dlogr_dpn = a / pn - (1.0 - a) / (1.0 - pn)
    dsurr_dpn = dsurr_dr[:, None] * r[:, None] * dlogr_dpn
    dent_dpn = np.log1p(-pn) - np.log(pn)
    dent_dpn /= b

    m_total = sum(t.size for t in frozen.targets)
    dvloss_dv = np.zeros(values.size, dtype=np.float64)
    for t in range(b):
        a_set = frozen.targets[t] - values[t]
        dvloss_dv[t] = -(2.0 / m_total) * a_set.sum()

    dneg_dprobs = np.zeros_like(probs, dtype=np.float64)
    dneg_dprobs[:b] = -(dsurr_dpn + cfg.alpha2 * dent_dpn)
    dneg_dvalue = cfg.alpha1 * dvloss_dv
    model.backward(params, cache, dneg_dprobs, dneg_dvalue)
    return {"surrogate": surr, "value_loss": vloss, "entropy": ent}


@dataclass
class EpisodeMetrics:
    mean_queue_m: float
    cum_reward: float
    mean_entropy: float
    mean_value_loss: float
    acc_vs_expert: float
    n_cycles: int


def rl_episode(
    sim: SimState,
    model: PolicyValueNet,
    params: ParamStore,
    cfg: RlConfig,
    rng: np.random.Generator,
    optimizer,
    rule: RuleParams | None = None,
) -> EpisodeMetrics:
    """One acting episode with an update every n_max steps.

    Acts by Bernoulli sampling each step; at every cycle boundary freezes the
    current policy snapshot, applies cfg.epochs ascent steps on the cycle
    objective, and clears the buffer.
    """
    rule = rule or RuleParams()
    n_i = model.n_intersections
    steps = sim.episode_steps
    buf_x, buf_h, buf_a, buf_r = [], [], [], []
    x = encode_state(sim)
    h = encode_phase(sim)
    prev_counts = low_speed_counts(sim)
    queue_sum = 0.0
    cum_reward = 0.0
    entropy_sum = 0.0
    vloss_sum = 0.0
    mismatches = 0
    n_cycles = 0
    for t in range(steps):
        probs, _, _ = model.forward(params, x[None], h[None])
        action = sample_actions(rng, probs[0])
        labels = rule_expert(grouped_low_speed(sim), sim.phase, rule.beta)
        mismatches += int(np.abs(action - labels).sum())
        entropy_sum += entropy_bonus(probs)
        report = step(sim, action)
        counts = report.low_speed_lane
        r_t = reward(prev_counts, counts)
        prev_counts = counts
        buf_x.append(x)
        buf_h.append(h)
        buf_a.append(action)
        buf_r.append(r_t)
        x = encode_state(sim)
        h = encode_phase(sim)
        queue_sum += report.queue_m
        cum_reward += r_t
        if len(buf_a) == cfg.n_max or t == steps - 1:
            batch = CycleBatch(
                x=np.stack(buf_x + [x]).astype(np.float32),
                h=np.stack(buf_h + [h]).astype(np.float32),
                actions=np.stack(buf_a),
                rewards=np.array(buf_r, dtype=np.float64),
            )
            frozen = freeze_cycle(model, params, batch, cfg.gamma)
            for _ in range(cfg.epochs):
                parts = cycle_backward(model, params, batch, frozen, cfg)
                optimizer.step(params, cfg.lr)
            vloss_sum += parts["value_loss"]
            n_cycles += 1
            buf_x.clear()
            buf_h.clear()
            buf_a.clear()
            buf_r.clear()
    return EpisodeMetrics(
        mean_queue_m=queue_sum / steps,
        cum_reward=cum_reward,
        mean_entropy=entropy_sum / steps,
        mean_value_loss=vloss_sum / max(n_cycles, 1),
        acc_vs_expert=1.0 - mismatches / (steps * n_i),
        n_cycles=n_cycles,
    )
