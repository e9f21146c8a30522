"""Experiment orchestration: training loops for every ablation variant,
per-episode evaluation, learning curves, aggregation, plotting.

One "episode" = one training round (a single real dialog plus whatever
simulated/hindsight experience the variant adds, one Q minibatch step, one
world-model step, a target sync) followed by a fixed-size greedy
evaluation against the scripted user. All randomness flows through named
substreams of the master seed, so toggling one component never shifts
another's draws, and a (config, seed) pair pins every output byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .agent import (QAgent, ReplayBuffer, make_agent, sample_minibatch,
                    select_action, sync_target, td_train_step)
from .coordinator import (CoordinatorAgent, adaptation_state,
                          coordinator_reward, normalize_avg_reward, select_k,
                          train_coordinator)
from .env import (N_AGENT_ACTIONS, Dialog, DialogEnv, run_dialog,
                  run_rule_dialog)
from .hindsight import SegmentStore, head_seg_gen, hind_man, tail_seg_gen
from .ontology import ConfigError, builtin_ontology, load_ontology, sample_goal
from .worldmodel import WorldModel, make_worldmodel, simulate_dialog, train_worldmodel

log = logging.getLogger(__name__)

VARIANTS = ("dqn", "lu", "lh", "lhu", "lhua")

CSV_COLUMNS = ("episode", "eval_sr", "eval_reward", "train_sr", "train_reward",
               "k_chosen", "b_real", "b_sim", "b_coord", "hindsight_total")
_FLOAT_COLUMNS = {"eval_sr", "eval_reward", "train_sr", "train_reward"}


@dataclass
class RunConfig:
    variant: str = "lhua"
    seed: int = 0
    episodes: int = 250
    eval_dialogs: int = 50
    L: int = 40
    k: int = 10               # fixed simulation budget for lu/lhu
    k_max: int = 20           # coordinator action range
    H: int = 8                # adaptation episode length
    delta: float = 0.2        # stitching KL threshold
    ontology: str = "desk"    # builtin name or path to a JSON file
    gamma: float = 0.95
    epsilon: float = 0.1
    q_lr: float = 0.02
    q_lr_decay: float = 0.02  # per-episode inverse-time decay on q_lr
    warm_lr: float = 0.005
    wm_lr: float = 0.01
    coord_lr: float = 0.001
    hidden: int = 80
    coord_hidden: int = 64
    buffer_capacity: int = 5000
    # B^S is kept deliberately small: synthetic dialogs (rollouts, stitches)
    # go stale as the policy moves, and an unbounded store would crowd real
    # experience out of the union minibatch.
    sim_buffer_capacity: int = 400
    # Rollout budget against the learned model. Real dialogs that succeed
    # finish well under this, so capping below L mostly trims the long
    # wander-until-L failures an untrained policy produces, which would
    # otherwise flood B^S and evict the stitched segments.
    sim_horizon: int = 12
    minibatch: int = 16
    warm_start_dialogs: int = 100
    warm_start_steps: int = 100
    wm_warm_steps: int = 1500
    segment_capacity: int = 2000
    noise_rate: float = 0.0
    audit: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        positive = ("episodes", "eval_dialogs", "L", "k", "k_max", "H",
                    "minibatch", "hidden", "coord_hidden", "buffer_capacity",
                    "sim_buffer_capacity", "sim_horizon", "segment_capacity")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gamma", "epsilon", "noise_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1]")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.k > self.k_max:
            raise ConfigError("k cannot exceed k_max")
        for name in ("q_lr", "warm_lr", "wm_lr", "coord_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if (self.warm_start_dialogs < 0 or self.warm_start_steps < 0
                or self.wm_warm_steps < 0):
            raise ConfigError("warm start settings cannot be negative")
        if self.q_lr_decay < 0:
            raise ConfigError("q_lr_decay cannot be negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        known = set(RunConfig().to_dict())
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = RunConfig(**doc)
        cfg.validate()
        return cfg

    @staticmethod
    def from_file(path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        return RunConfig.from_dict(doc)


def rng_stream(master_seed: int, name: str) -> np.random.Generator:
    """Independent substream: same name + seed → same draws, regardless of
    what other streams consumed."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), zlib.crc32(name.encode())]))


def load_domain(spec: str):
    if spec in ("desk", "full"):
        return builtin_ontology(spec)
    return load_ontology(spec)


@dataclass
class LearningCurve:
    records: list[dict] = field(default_factory=list)

    def add(self, **kw) -> None:
        self.records.append({c: kw[c] for c in CSV_COLUMNS})

    def column(self, name: str) -> list:
        return [r[name] for r in self.records]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([f"{r[c]:.6f}" if c in _FLOAT_COLUMNS else int(r[c])
                        for c in CSV_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())

    @staticmethod
    def from_csv(path) -> "LearningCurve":
        curve = LearningCurve()
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                curve.records.append({
                    c: (float(row[c]) if c in _FLOAT_COLUMNS else int(row[c]))
                    for c in CSV_COLUMNS})
        return curve


def auc(curve: LearningCurve, horizon: int | None = None) -> float:
    """Normalized trapezoidal area under the evaluation success-rate curve."""
    pts = [(r["episode"], r["eval_sr"]) for r in curve.records
           if horizon is None or r["episode"] <= horizon]
    if len(pts) < 2:
        raise ValueError("need at least two curve points inside the horizon")
    xs = np.array([p[0] for p in pts], dtype=float)
    ys = np.array([p[1] for p in pts], dtype=float)
    span = xs[-1] - xs[0]
    if span <= 0:
        raise ValueError("curve spans no episodes")
    area = float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))
    return area / span


class RunState:
    """Everything one training run owns."""

    def __init__(self, cfg: RunConfig, audit_fh=None):
        cfg.validate()
        self.cfg = cfg
        ontology, templates = load_domain(cfg.ontology)
        self.env = DialogEnv(ontology, templates, L=cfg.L, noise_rate=cfg.noise_rate)
        self.layout = self.env.layout
        self.templates = templates
        self.use_world_model = cfg.variant in ("lu", "lhu", "lhua")
        self.use_hindsight = cfg.variant in ("lh", "lhu", "lhua")
        self.adaptive = cfg.variant == "lhua"

        s = cfg.seed
        self.rng_warm = rng_stream(s, "goals.warm")
        self.rng_goals = rng_stream(s, "goals.real")
        self.rng_sim_goals = rng_stream(s, "goals.sim")
        self.rng_eval = rng_stream(s, "goals.eval")
        self.rng_explore = rng_stream(s, "explore")
        self.rng_sim = rng_stream(s, "simulate")
        self.rng_mb = rng_stream(s, "minibatch.q")
        self.rng_mb_wm = rng_stream(s, "minibatch.wm")
        self.rng_mb_coord = rng_stream(s, "minibatch.coord")
        self.rng_coord = rng_stream(s, "coordinator")

        self.agent = make_agent(self.layout.dim, rng_stream(s, "init.q"),
                                n_actions=N_AGENT_ACTIONS, hidden=cfg.hidden,
                                lr=cfg.q_lr, gamma=cfg.gamma, epsilon=cfg.epsilon)
        self.world_model: WorldModel | None = None
        if self.use_world_model:
            self.world_model = make_worldmodel(
                self.layout.dim, N_AGENT_ACTIONS, rng_stream(s, "init.wm"),
                L=cfg.L, hidden=cfg.hidden, lr=cfg.wm_lr)
        self.coordinator: CoordinatorAgent | None = None
        if self.adaptive:
            self.coordinator = CoordinatorAgent(
                rng_stream(s, "init.coord"), k_max=cfg.k_max,
                hidden=cfg.coord_hidden, lr=cfg.coord_lr, gamma=cfg.gamma,
                epsilon=cfg.epsilon, buffer_capacity=cfg.buffer_capacity)

        self.buffer_real = ReplayBuffer(cfg.buffer_capacity, "real")
        self.buffer_sim = ReplayBuffer(cfg.sim_buffer_capacity, "simulated")
        self.store = SegmentStore(cfg.segment_capacity, audit=audit_fh)
        self.dialog_seq = 0
        self.hindsight_total = 0

    def anneal_q_lr(self, episode: int) -> None:
        """Inverse-time decay: fast learning off the warm start, small steps
        once the policy has plateaued, where fixed-size RMSProp updates
        would keep perturbing the greedy arg max."""
        self.agent.opt.lr = self.cfg.q_lr / (
            1.0 + self.cfg.q_lr_decay * (episode - 1))

    def next_dialog_id(self) -> int:
        self.dialog_seq += 1
        return self.dialog_seq

    def _harvest_segments(self, dialog: Dialog) -> None:
        """Head entries per prefix, tail entries on success."""
        probe = Dialog(dialog_id=dialog.dialog_id, goal=dialog.goal, turns=[],
                       outcome="ongoing", source=dialog.source)
        for i in range(1, len(dialog.turns) + 1):
            probe.turns = dialog.turns[:i]
            head_seg_gen(self.layout, probe, dialog.goal, self.store)
        tail_seg_gen(self.layout, dialog, dialog.goal, self.store)

    def collect_real_dialog(self) -> Dialog:
        goal = sample_goal(self.templates, self.rng_goals)
        policy = lambda s: select_action(self.agent, s, self.cfg.epsilon,
                                         self.rng_explore)
        d = run_dialog(self.env, policy, self.rng_explore, goal,
                       dialog_id=self.next_dialog_id())
        self.buffer_real.extend(d.turns)
        if self.use_hindsight:
            self._harvest_segments(d)
        return d

    def collect_simulated_dialog(self) -> Dialog:
        goal = sample_goal(self.templates, self.rng_sim_goals)
        d = simulate_dialog(self.agent, self.world_model, goal, self.layout,
                            self.env.db, self.rng_sim, epsilon=self.cfg.epsilon,
                            dialog_id=self.next_dialog_id())
        self.buffer_sim.extend(d.turns)
        if self.use_hindsight:
            self._harvest_segments(d)
        return d

    def run_lhu(self, k: int) -> tuple[float, float]:
        """One training round; returns (success rate, average return) over
        the 1 + k dialogs actually interacted (stitched dialogs excluded)."""
        dialogs = [self.collect_real_dialog()]
        if self.use_world_model:
            for _ in range(k):
                dialogs.append(self.collect_simulated_dialog())
        if self.use_hindsight:
            stitched = hind_man(self.cfg.delta, self.store, self.layout, self.cfg.L)
            self.hindsight_total += len(stitched)
            for sd in stitched:
                self.buffer_sim.extend(sd.turns)
        sr = float(np.mean([d.outcome == "success" for d in dialogs]))
        avg_r = float(np.mean([d.episode_return() for d in dialogs]))
        batch = sample_minibatch([self.buffer_real, self.buffer_sim],
                                 self.cfg.minibatch, self.rng_mb)
        td_train_step(self.agent, batch)
        if self.use_world_model and len(self.buffer_real) > 0:
            wm_batch = sample_minibatch([self.buffer_real], self.cfg.minibatch,
                                        self.rng_mb_wm)
            train_worldmodel(self.world_model, wm_batch)
        sync_target(self.agent)
        return sr, avg_r

    def warm_start(self) -> None:
        """Stand-in for pre-training on human dialogs: rule-agent demos fill
        the real buffer; Q (and the world model) take a fixed number of
        minibatch steps on them before the training loop starts. The demos
        also seed the segment stores, so the first stitching pass has a
        library of known-good heads and tails to draw from."""
        for _ in range(self.cfg.warm_start_dialogs):
            d = run_rule_dialog(self.env, self.rng_warm,
                                dialog_id=self.next_dialog_id())
            self.buffer_real.extend(d.turns)
            if self.use_hindsight:
                self._harvest_segments(d)
        if len(self.buffer_real) == 0:
            return
        online_lr = self.agent.opt.lr
        self.agent.opt.lr = self.cfg.warm_lr
        try:
            for _ in range(self.cfg.warm_start_steps):
                td_train_step(self.agent, sample_minibatch(
                    [self.buffer_real], self.cfg.minibatch, self.rng_mb))
        finally:
            self.agent.opt.lr = online_lr
        sync_target(self.agent)
        if self.use_world_model:
            # the model gets a deeper warm fit than Q: rollouts are useless
            # until the termination head is calibrated on real protocol flow
            for _ in range(self.cfg.wm_warm_steps):
                train_worldmodel(self.world_model, sample_minibatch(
                    [self.buffer_real], self.cfg.minibatch, self.rng_mb_wm))


def evaluate_policy(agent: QAgent, env: DialogEnv, n: int,
                    rng: np.random.Generator) -> tuple[float, float]:
    """n greedy dialogs against the scripted user on fresh goals."""
    if n <= 0:
        raise ValueError("evaluation needs at least one dialog")
    policy = lambda s: select_action(agent, s, 0.0, rng)
    wins, total = 0, 0.0
    for _ in range(n):
        d = run_dialog(env, policy, rng)
        wins += d.outcome == "success"
        total += d.episode_return()
    return wins / n, total / n


def run_training(cfg: RunConfig, audit_fh=None,
                 progress=None) -> tuple[RunState, LearningCurve]:
    state = RunState(cfg, audit_fh=audit_fh)
    curve = LearningCurve()
    state.warm_start()

    def record(episode: int, train_sr: float, train_r: float, k_chosen: int):
        eval_sr, eval_r = evaluate_policy(state.agent, state.env,
                                          cfg.eval_dialogs, state.rng_eval)
        curve.add(episode=episode, eval_sr=eval_sr, eval_reward=eval_r,
                  train_sr=train_sr, train_reward=train_r, k_chosen=k_chosen,
                  b_real=len(state.buffer_real), b_sim=len(state.buffer_sim),
                  b_coord=len(state.coordinator.buffer) if state.coordinator else 0,
                  hindsight_total=state.hindsight_total)
        if progress is not None:
            progress(curve.records[-1])

    if not state.adaptive:
        k = cfg.k if state.use_world_model else 0
        for ep in range(1, cfg.episodes + 1):
            state.anneal_q_lr(ep)
            sr, avg_r = state.run_lhu(k)
            record(ep, sr, avg_r, k)
    else:
        ep = 0
        call_index = 0
        sr_prev, rn_prev = 0.0, 0.0
        s_a = adaptation_state(0.0, 0.0, 0.0, 0.0, 0)
        while ep < cfg.episodes:
            for _ in range(cfg.H):
                if ep >= cfg.episodes:
                    break
                k = select_k(state.coordinator, s_a, cfg.epsilon, state.rng_coord)
                state.anneal_q_lr(ep + 1)
                sr, avg_r = state.run_lhu(k)
                rn = normalize_avg_reward(avg_r, cfg.L)
                call_index += 1
                s_next = adaptation_state(sr, rn, sr_prev, rn_prev, call_index)
                r_a = coordinator_reward(sr, sr_prev, k)
                state.coordinator.store(s_a, k, r_a, s_next)
                s_a, sr_prev, rn_prev = s_next, sr, rn
                ep += 1
                record(ep, sr, avg_r, k)
            train_coordinator(state.coordinator, state.rng_mb_coord)
    return state, curve


def checkpoint_doc(state: RunState, include_tuples: bool = False) -> dict:
    doc = nn.network_to_dict(state.agent.q_net, state.agent.opt)
    doc["config"] = state.cfg.to_dict()
    doc["buffer_stats"] = {"real": len(state.buffer_real),
                           "simulated": len(state.buffer_sim)}
    if include_tuples:
        doc["buffers"] = {
            b.label: [[t.s.tolist(), int(t.a), float(t.r), t.s_next.tolist(),
                       bool(t.done)] for t in b.items]
            for b in (state.buffer_real, state.buffer_sim)}
    return doc


def run_name(cfg: RunConfig) -> str:
    return f"{cfg.variant}_seed{cfg.seed}"


def train_and_emit(cfg: RunConfig, out_dir, include_tuples: bool = False,
                   progress=None) -> LearningCurve:
    os.makedirs(out_dir, exist_ok=True)
    name = run_name(cfg)
    audit_fh = None
    if cfg.audit:
        audit_fh = open(os.path.join(out_dir, f"{name}.audit.jsonl"),
                        "w", encoding="utf-8")
    try:
        state, curve = run_training(cfg, audit_fh=audit_fh, progress=progress)
    finally:
        if audit_fh is not None:
            audit_fh.close()
    curve.write_csv(os.path.join(out_dir, f"{name}.csv"))
    with open(os.path.join(out_dir, f"{name}.ckpt.json"), "w", encoding="utf-8") as fh:
        json.dump(checkpoint_doc(state, include_tuples), fh)
    with open(os.path.join(out_dir, f"{name}.config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return curve


def evaluate_checkpoint(path, dialogs: int) -> tuple[float, float]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    net, opt = nn.network_from_dict(doc)
    cfg = RunConfig.from_dict(doc.get("config", {}))
    ontology, templates = load_domain(cfg.ontology)
    env = DialogEnv(ontology, templates, L=cfg.L, noise_rate=cfg.noise_rate)
    agent = QAgent(q_net=net, target_net=net.copy(),
                   opt=opt or nn.make_optimizer(net), gamma=cfg.gamma,
                   epsilon=0.0)
    rng = rng_stream(cfg.seed, "goals.eval.checkpoint")
    return evaluate_policy(agent, env, dialogs, rng)


def sweep_k(cfg: RunConfig, values, out_dir, progress=None) -> list[dict]:
    """Fixed-k comparison: one deterministic run per k, shared seed."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for k in values:
        sub = replace(cfg, variant="lhu", k=int(k))
        sub.validate()
        curve = train_and_emit(replace(sub, seed=cfg.seed),
                               os.path.join(out_dir, f"k{int(k)}"),
                               progress=progress)
        rows.append({"k": int(k), "auc": auc(curve),
                     "final_eval_sr": curve.records[-1]["eval_sr"]})
    path = os.path.join(out_dir, "sweep_k.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "auc", "final_eval_sr"])
        for row in rows:
            w.writerow([row["k"], f"{row['auc']:.6f}", f"{row['final_eval_sr']:.6f}"])
    return rows


def aggregate_runs(runs_dir, out_path=None) -> str:
    """Mean/std of evaluation metrics per (variant, episode) across seeds."""
    groups: dict[str, list[LearningCurve]] = {}
    for entry in sorted(os.listdir(runs_dir)):
        if not entry.endswith(".csv") or "_seed" not in entry:
            continue
        variant = entry.split("_seed")[0]
        groups.setdefault(variant, []).append(
            LearningCurve.from_csv(os.path.join(runs_dir, entry)))
    if not groups:
        raise ValueError(f"no run CSVs found under {runs_dir}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "episode", "mean_sr", "std_sr",
                "mean_reward", "std_reward", "n_seeds"])
    for variant in sorted(groups):
        curves = groups[variant]
        n_eps = min(len(c.records) for c in curves)
        for i in range(n_eps):
            srs = np.array([c.records[i]["eval_sr"] for c in curves])
            rs = np.array([c.records[i]["eval_reward"] for c in curves])
            w.writerow([variant, curves[0].records[i]["episode"],
                        f"{srs.mean():.6f}", f"{srs.std():.6f}",
                        f"{rs.mean():.6f}", f"{rs.std():.6f}", len(curves)])
    text = buf.getvalue()
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def plot_aggregate(aggregate_path, out_svg) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[str, list[tuple[int, float, float]]] = {}
    with open(aggregate_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            series.setdefault(row["variant"], []).append(
                (int(row["episode"]), float(row["mean_sr"]), float(row["std_sr"])))
    if not series:
        raise ValueError("aggregate file holds no rows")

    plt.rcParams["svg.hashsalt"] = "dialoglab"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for variant in sorted(series):
        pts = sorted(series[variant])
        xs = [p[0] for p in pts]
        mean = np.array([p[1] for p in pts])
        std = np.array([p[2] for p in pts])
        ax.plot(xs, mean, label=variant)
        ax.fill_between(xs, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("episode")
    ax.set_ylabel("evaluation success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)
