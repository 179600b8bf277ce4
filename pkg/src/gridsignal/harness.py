"""Experiment orchestration: two-stage co-training, evaluation, run artifacts.

A run directory holds everything needed to reproduce and inspect a run:

    manifest.json    full resolved configuration (re-runnable key=value map)
    imitation.csv    per-round imitation loss and accuracy vs the expert rule
    rl.csv           per-episode reinforcement metrics
    checkpoint.ckpt  model parameters (written at stage boundaries and the end)
    stage.json       progress bookkeeping, enables resuming
    eval.csv         per-episode evaluation metrics
    summary.txt      aligned-text aggregate report

Reproducibility comes from keyed random streams: every generator is seeded
with [seed, stream, index, slot], so running the imitation stage in one
process and resuming the reinforcement stage in another consumes exactly the
same streams as a single joint run.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    TRAINABLE,
    ConfigError,
    ExperimentSpec,
    apply_config,
    flow_program,
    spec_to_flat_config,
)
from .controllers import FixedTimeController, RuleController
from .encoder import encode_phase, encode_state
from .imitation import TrajectoryPool, dagger_round, sample_actions
from .microsim import metrics_snapshot, reset, step
from .net import Adam, PolicyValueNet, load_params, save_params
from .network import build_network
from .rl import rl_episode

CSV_VERSION_LINE = "# gridsignal-csv v1"
IMITATION_COLUMNS = "round,imitation_loss,acc"
RL_COLUMNS = "episode,mean_queue_m,cum_reward,entropy,value_loss,acc_vs_expert"
EVAL_COLUMNS = (
    "episode,queue_m,awt_s,afc,n_exited,"
    "green_p0_s,green_p1_s,green_p2_s,green_p3_s"
)

# Random stream ids. Each (stream, index) pair feeds two generators: slot 0
# seeds the simulator (insertion offsets), slot 1 drives action sampling and
# minibatch selection.
STREAM_INIT = 0
STREAM_IMITATION = 1
STREAM_RL = 2
STREAM_EVAL = 3


def _fmt(x) -> str:
    return format(float(x), ".10g")


def _sim_seed(seed: int, stream: int, index: int) -> list[int]:
    return [seed, stream, index, 0]


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index, 1])


class _CsvLog:
    """Append-per-row CSV writer so partial logs survive an abort."""

    def __init__(self, path: Path, columns: str):
        self.path = Path(path)
        self.path.write_text(f"{CSV_VERSION_LINE}\n{columns}\n")

    def row(self, values) -> None:
        with self.path.open("a") as fh:
            fh.write(",".join(values) + "\n")


def write_manifest(spec: ExperimentSpec) -> Path:
    payload = {
        "format": "gridsignal-manifest v1",
        "version": __version__,
        "config": spec_to_flat_config(spec),
    }
    path = Path(spec.out) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def spec_from_manifest(out: Path | str) -> ExperimentSpec:
    out = Path(out)
    path = out / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    payload = json.loads(path.read_text())
    spec = apply_config(ExperimentSpec(), payload["config"])
    return replace(spec, out=out).resolved()


def _write_stage(out: Path, stage1_rounds: int, stage1_acc, rl_episodes: int):
    payload = {
        "stage1_rounds": stage1_rounds,
        "stage1_acc": stage1_acc,
        "rl_episodes": rl_episodes,
    }
    (out / "stage.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _build_model(spec: ExperimentSpec):
    net = build_network(spec.net)
    model = PolicyValueNet(net.n_intersections, spec.net.lane_cells)
    return net, model


def _validate_params(model: PolicyValueNet, params) -> None:
    fresh = model.init_params(np.random.default_rng(0))
    want = {name: fresh.arrays[name].shape for name in fresh.names}
    got = {name: params.arrays[name].shape for name in params.names}
    if want != got:
        raise RuntimeError(
            "checkpoint does not match the configured grid and lane length: "
            f"expected {want}, found {got}"
        )


def _stage1(spec, net, model, params, log) -> tuple[int, float | None]:
    """DAGGER rounds until accuracy beats the threshold or rounds run out."""
    icfg = spec.imitation
    pool = TrajectoryPool(
        icfg.pool_capacity, net.n_intersections, spec.net.lane_cells
    )
    flow = flow_program(spec.flow)
    rounds, last_acc = 0, None
    for r in range(icfg.max_rounds):
        sim = reset(
            net, flow, _sim_seed(spec.seed, STREAM_IMITATION, r),
            spec.episode_s, spec.rule,
        )
        rng = _rng(spec.seed, STREAM_IMITATION, r)
        acc, loss = dagger_round(sim, model, params, pool, spec.rule, icfg, rng)
        log.row([str(r), _fmt(loss), _fmt(acc)])
        rounds, last_acc = r + 1, acc
        if acc > icfg.xi:
            break
    return rounds, last_acc


def _stage2(spec, net, model, params, log, episodes: int) -> int:
    """Actor-critic episodes with an update every n_max steps."""
    flow = flow_program(spec.flow)
    optimizer = Adam()
    done = 0
    for n in range(episodes):
        sim = reset(
            net, flow, _sim_seed(spec.seed, STREAM_RL, n),
            spec.episode_s, spec.rule,
        )
        rng = _rng(spec.seed, STREAM_RL, n)
        m = rl_episode(sim, model, params, spec.rl, rng, optimizer, spec.rule)
        log.row([
            str(n), _fmt(m.mean_queue_m), _fmt(m.cum_reward),
            _fmt(m.mean_entropy), _fmt(m.mean_value_loss),
            _fmt(m.acc_vs_expert),
        ])
        done = n + 1
    return done


def _train(spec: ExperimentSpec, do_stage1: bool, do_stage2: bool) -> dict:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(spec)
    net, model = _build_model(spec)
    params = model.init_params(np.random.default_rng([spec.seed, STREAM_INIT]))
    ckpt = out / "checkpoint.ckpt"

    stage1_rounds, stage1_acc = 0, None
    if do_stage1:
        log = _CsvLog(out / "imitation.csv", IMITATION_COLUMNS)
        stage1_rounds, stage1_acc = _stage1(spec, net, model, params, log)
        save_params(ckpt, params)
        _write_stage(out, stage1_rounds, stage1_acc, 0)

    rl_done = 0
    if do_stage2:
        log = _CsvLog(out / "rl.csv", RL_COLUMNS)
        try:
            rl_done = _stage2(spec, net, model, params, log, spec.rl.episodes)
        except BaseException:
            save_params(ckpt, params)
            raise
    save_params(ckpt, params)
    _write_stage(out, stage1_rounds, stage1_acc, rl_done)
    return {
        "stage1_rounds": stage1_rounds,
        "stage1_acc": stage1_acc,
        "rl_episodes": rl_done,
        "checkpoint": ckpt,
    }


def co_train(spec: ExperimentSpec) -> dict:
    """Run the full pipeline for a trainable controller.

    dri: imitation stage then reinforcement stage under one seed;
    il-only: imitation stage alone; dr: reinforcement stage alone.
    """
    spec = spec.resolved()
    if spec.controller not in TRAINABLE:
        raise ConfigError(
            f"controller {spec.controller!r} is not trainable; "
            f"choose from {TRAINABLE}"
        )
    do_stage1 = spec.controller in ("dri", "il-only")
    do_stage2 = spec.controller in ("dri", "dr")
    return _train(spec, do_stage1, do_stage2)


def imitate_only(spec: ExperimentSpec) -> dict:
    """Run just the imitation stage, leaving a run directory ready to resume."""
    spec = spec.resolved()
    if spec.controller not in ("dri", "il-only"):
        raise ConfigError(
            f"controller {spec.controller!r} has no imitation stage"
        )
    return _train(spec, do_stage1=True, do_stage2=False)


def resume_train(out: Path | str, episodes: int | None = None) -> dict:
    """Continue a run from its directory: reinforcement stage only.

    The saved manifest, checkpoint, and stage bookkeeping pin the state, and
    the keyed streams make imitate-then-resume identical to a joint run.
    """
    out = Path(out)
    spec = spec_from_manifest(out)
    if episodes is not None:
        spec = replace(spec, rl=replace(spec.rl, episodes=episodes))
    ckpt = out / "checkpoint.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"no checkpoint to resume from at {ckpt}")
    stage_path = out / "stage.json"
    if not stage_path.exists():
        raise RuntimeError(f"no stage bookkeeping at {stage_path}")
    stage = json.loads(stage_path.read_text())
    if spec.controller == "il-only":
        raise ConfigError("controller 'il-only' has no reinforcement stage")

    net, model = _build_model(spec)
    params = load_params(ckpt)
    _validate_params(model, params)
    write_manifest(spec)
    log = _CsvLog(out / "rl.csv", RL_COLUMNS)
    try:
        rl_done = _stage2(spec, net, model, params, log, spec.rl.episodes)
    except BaseException:
        save_params(ckpt, params)
        raise
    save_params(ckpt, params)
    _write_stage(out, stage["stage1_rounds"], stage["stage1_acc"], rl_done)
    return {
        "stage1_rounds": stage["stage1_rounds"],
        "stage1_acc": stage["stage1_acc"],
        "rl_episodes": rl_done,
        "checkpoint": ckpt,
    }


def _make_actor(spec: ExperimentSpec, model=None, params=None):
    """Return act(sim, rng) -> (I,) switch decisions for the controller."""
    name = spec.controller
    if name == "fixed20":
        ctrl = FixedTimeController(20.0)
        return lambda sim, rng: ctrl.act(sim)
    if name == "fixed40":
        ctrl = FixedTimeController(40.0)
        return lambda sim, rng: ctrl.act(sim)
    if name == "rule":
        ctrl = RuleController(spec.rule)
        return lambda sim, rng: ctrl.act(sim)

    def act(sim, rng):
        probs, _, _ = model.forward(
            params, encode_state(sim)[None], encode_phase(sim)[None]
        )
        return sample_actions(rng, probs[0])

    return act


def _run_eval_episode(sim, actor, rng) -> dict:
    queue_sum = 0.0
    for _ in range(sim.episode_steps):
        report = step(sim, actor(sim, rng))
        queue_sum += report.queue_m
    snap = metrics_snapshot(sim)
    green_sum = sim.green_sum.sum(axis=0)
    green_count = sim.green_count.sum(axis=0)
    green = green_sum / np.maximum(green_count, 1)
    return {
        "queue_m": queue_sum / sim.episode_steps,
        "awt_s": snap.awt_s,
        "afc": snap.afc,
        "n_exited": snap.n_exited,
        "green": green,
    }


def _mean_sd(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


def _summary_text(spec: ExperimentSpec, rows) -> str:
    lines = [
        "gridsignal evaluation",
        f"controller : {spec.controller}",
        f"flow       : {spec.flow}",
        f"grid       : {spec.net.rows}x{spec.net.cols}",
        f"episodes   : {len(rows)}",
        f"seed       : {spec.seed}",
        "",
        f"{'metric':<10}{'mean':>14}{'sd':>14}",
    ]
    for key in ("queue_m", "awt_s", "afc"):
        mean, sd = _mean_sd([r[key] for r in rows])
        lines.append(f"{key:<10}{mean:>14.4f}{sd:>14.4f}")
    lines.append("")
    lines.append("mean green duration (s) by phase")
    greens = np.stack([r["green"] for r in rows])
    for p in range(4):
        mean, sd = _mean_sd(greens[:, p])
        lines.append(f"{f'p{p}':<10}{mean:>14.4f}{sd:>14.4f}")
    return "\n".join(lines) + "\n"


def evaluate(spec: ExperimentSpec, checkpoint: Path | str | None = None) -> dict:
    """Run eval episodes for any controller and write eval.csv + summary.txt.

    Learned controllers act by Bernoulli sampling from the policy loaded from
    the run checkpoint (or an explicit checkpoint path).
    """
    spec = spec.resolved()
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    net, model, params = build_network(spec.net), None, None
    if spec.controller in TRAINABLE:
        path = Path(checkpoint) if checkpoint else out / "checkpoint.ckpt"
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        params = load_params(path)
        model = PolicyValueNet(net.n_intersections, spec.net.lane_cells)
        _validate_params(model, params)
    actor = _make_actor(spec, model, params)
    flow = flow_program(spec.flow)
    log = _CsvLog(out / "eval.csv", EVAL_COLUMNS)
    rows = []
    for e in range(spec.eval_episodes):
        sim = reset(
            net, flow, _sim_seed(spec.seed, STREAM_EVAL, e),
            spec.episode_s, spec.rule,
        )
        row = _run_eval_episode(sim, actor, _rng(spec.seed, STREAM_EVAL, e))
        rows.append(row)
        log.row(
            [str(e), _fmt(row["queue_m"]), _fmt(row["awt_s"]), _fmt(row["afc"]),
             str(row["n_exited"])] + [_fmt(g) for g in row["green"]]
        )
    text = _summary_text(spec, rows)
    (out / "summary.txt").write_text(text)
    queue_mean, queue_sd = _mean_sd([r["queue_m"] for r in rows])
    awt_mean, awt_sd = _mean_sd([r["awt_s"] for r in rows])
    afc_mean, afc_sd = _mean_sd([r["afc"] for r in rows])
    greens = np.stack([r["green"] for r in rows])
    return {
        "episodes": len(rows),
        "queue_m_mean": queue_mean,
        "queue_m_sd": queue_sd,
        "awt_s_mean": awt_mean,
        "awt_s_sd": awt_sd,
        "afc_mean": afc_mean,
        "afc_sd": afc_sd,
        "green_mean": greens.mean(axis=0),
        "rows": rows,
        "summary": text,
    }


def simulate(spec: ExperimentSpec) -> dict:
    """Evaluation restricted to the untrained baselines (fixed-time, rule)."""
    spec = spec.resolved()
    if spec.controller in TRAINABLE:
        raise ConfigError(
            f"simulate runs baseline controllers only, not {spec.controller!r}; "
            "use train and evaluate for learned ones"
        )
    return evaluate(spec)
