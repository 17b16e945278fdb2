"""Experiment orchestration: training loop, baselines, evaluation, analysis.

One run = one seed = one output directory holding ``config.txt``,
``metrics.csv`` (one row per epoch, deterministic bytes for a given config
and seed), ``timing.csv`` (wall-clock sidecar, excluded from determinism
comparisons), ``final.npz`` and ``best.npz`` checkpoints, and ``meta.json``.

The epoch cycle: collect rollouts with the current policies, push SARSA
tuples to replay, take critic steps, compute both counterfactual advantages
against the freshly updated critic and the pre-update policy snapshot, then
apply the actor losses (action head: policy gradient + entropy + divergence
pressure; talking head: policy gradient + entropy).

Baselines reuse the same loop:

* ``no-comm`` — the channel is silenced (all inboxes stay null), the talking
  policy receives zero gradient updates, and the divergence loss is off.
* ``static-comm`` — the talking policy is trained toward a prescribed
  identity code (fact index -> message index) by replacing its counterfactual
  advantage with +-``baseline.static_reward``; action training is unchanged.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .actors import (ActorNetwork, build_digit_actor, build_particle_actor,
                     policy_gradient_loss, social_loss)
from .advantage import epoch_advantages
from .comm import Channel
from .config import ExperimentConfig, load_config, parse_config, render_config
from .critic import DenseCritic, ReplayBuffer, TwinTrunkCritic, critic_loss
from .envs import DigitGame, ParticleWorld, load_idx_digits, synthetic_digits
from .errors import ConfigError, TrainingFault, UsageError
from .nn import apply_gradients
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .rollout import rollout_batch

METRICS_COLUMNS = ("epoch", "mean_reward", "avg_kl", "loss_pi_u", "loss_pi_c",
                   "loss_social", "loss_critic", "entropy_u", "entropy_c")
BASELINE_KINDS = ("macc", "no-comm", "static-comm")

# the synthetic dataset is a fixed artifact shared by every run, like a file
# on disk: its generator seed is a constant, not the experiment seed
DATASET_SEED = 9001
EVAL_SEED = 123456


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_env(cfg: ExperimentConfig):
    if cfg.env == "particle":
        return ParticleWorld(steps_per_episode=cfg.steps_per_episode)
    if cfg.dataset_kind == "idx":
        dataset = load_idx_digits(cfg.dataset_images_path, cfg.dataset_labels_path)
    else:
        dataset = synthetic_digits(cfg.dataset_n_per_class,
                                   np.random.default_rng(DATASET_SEED))
    return DigitGame(dataset)


def build_channel(cfg: ExperimentConfig, env) -> Channel:
    return Channel(n_agents=env.n_agents, bits=cfg.comm_bits)


def build_actor(cfg: ExperimentConfig, channel: Channel,
                rng: np.random.Generator) -> ActorNetwork:
    if cfg.env == "particle":
        return build_particle_actor(channel, rng)
    return build_digit_actor(channel, rng, shared_trunk=cfg.shared_layers)


def build_critic(cfg: ExperimentConfig, env, rng: np.random.Generator):
    if cfg.env == "particle":
        return DenseCritic(feat_dim=env.n_agents * env.obs_dim,
                           n_agents=env.n_agents, n_actions=env.n_actions, rng=rng)
    return TwinTrunkCritic(image_side=28, n_agents=env.n_agents,
                           n_actions=env.n_actions, rng=rng)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    out_dir: str
    epochs_run: int
    stopped_early: bool
    metrics_path: str
    final_checkpoint: str
    best_checkpoint: str
    comm_updates: int
    mean_reward_last: float


def _fmt(value: float) -> str:
    return repr(float(value))


def _replay_steps(env, horizon: int):
    if env.action_train_steps is None:
        return range(horizon)
    return env.action_train_steps


def _push_epoch(replay: ReplayBuffer, trajs, env) -> None:
    horizon = trajs[0].length
    n_agents = trajs[0].actions.shape[1]
    for traj in trajs:
        for t in _replay_steps(env, horizon):
            terminal = t + 1 >= horizon
            next_actions = (np.zeros(n_agents, dtype=np.int64) if terminal
                            else traj.actions[t + 1])
            replay.push(traj.feats[t], traj.actions[t], traj.rewards[t],
                        traj.feats[t + 1], next_actions, terminal)


def _static_comm_records(trajs, env, scale: float):
    """Prescribed-code supervision: +scale when the emitted message equals the
    identity encoding of the sender's communicable fact, else -scale."""
    obs_rows, chosen, adv = [], [], []
    n_agents = trajs[0].actions.shape[1]
    for traj in trajs:
        for t in range(traj.length - 1):
            for agent in range(n_agents):
                fact = env.comm_fact(traj.states[t], agent)
                msg = int(traj.outgoing[t, agent])
                obs_rows.append(traj.obs[t, agent])
                chosen.append(msg)
                adv.append(scale if msg == fact else -scale)
    return (np.asarray(obs_rows), np.asarray(chosen, dtype=np.int64),
            np.asarray(adv, dtype=np.float64))


def train(cfg: ExperimentConfig, seed: int, out_dir: str,
          baseline: str = "macc", log_every: int = 0) -> TrainResult:
    """Run one seeded experiment to completion; returns paths and counters."""
    if baseline not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {baseline!r}; "
                          f"expected one of {BASELINE_KINDS}")
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))

    rng = np.random.default_rng(seed)
    env = build_env(cfg)
    channel = build_channel(cfg, env)
    actor = build_actor(cfg, channel, rng)
    critic = build_critic(cfg, env, rng)
    replay = ReplayBuffer(cfg.critic_replay_capacity)

    comm_mode = "none" if baseline == "no-comm" else "learned"
    train_comm = baseline != "no-comm"
    social_on = cfg.pi_u_kl_eta > 0 and train_comm
    meta_base = {"config": render_config(cfg), "seed": seed, "baseline": baseline}

    metrics_path = os.path.join(out_dir, "metrics.csv")
    timing_path = os.path.join(out_dir, "timing.csv")
    final_path = os.path.join(out_dir, "final.npz")
    best_path = os.path.join(out_dir, "best.npz")

    comm_updates = 0
    history: list[float] = []
    best_smoothed = -np.inf
    best_thetas = None
    best_epoch = -1
    plateau_best = -np.inf
    plateau_epoch = 0
    stopped_early = False
    epochs_run = 0
    window = cfg.early_stop_window
    t_start = time.perf_counter()

    def save(path: str, epoch: int) -> None:
        save_checkpoint(path, {"actor": actor, "critic": critic},
                        dict(meta_base, epoch=epoch, comm_updates=comm_updates))

    with open(metrics_path, "w", encoding="utf-8") as mf, \
            open(timing_path, "w", encoding="utf-8") as tf:
        mf.write(",".join(METRICS_COLUMNS) + "\n")
        tf.write("epoch,seconds\n")
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            try:
                row = _train_epoch(cfg, env, channel, actor, critic, replay,
                                   rng, baseline, comm_mode, social_on)
            except TrainingFault as fault:
                save(os.path.join(out_dir, "abort.npz"), epoch)
                raise TrainingFault(f"epoch {epoch}: {fault}") from fault
            if not all(np.isfinite(v) for v in row.values()):
                save(os.path.join(out_dir, "abort.npz"), epoch)
                raise TrainingFault(f"epoch {epoch}: non-finite metric in {row}")
            comm_updates += row.pop("_comm_updates")

            mf.write(f"{epoch}," + ",".join(
                _fmt(row[col]) for col in METRICS_COLUMNS[1:]) + "\n")
            mf.flush()
            tf.write(f"{epoch},{time.perf_counter() - t0:.6f}\n")
            epochs_run = epoch + 1
            history.append(row["mean_reward"])

            smoothed = float(np.mean(history[-max(window, 1):])) if window \
                else row["mean_reward"]
            if smoothed > best_smoothed:
                best_smoothed = smoothed
                best_epoch = epoch
                best_thetas = (actor.store.theta.copy(), critic.store.theta.copy())
            if log_every and (epoch + 1) % log_every == 0:
                print(f"[{out_dir}] epoch {epoch + 1}/{cfg.epochs} "
                      f"reward {smoothed:.3f}", flush=True)
            if window and len(history) >= window:
                if smoothed >= cfg.early_stop_reward:
                    stopped_early = True
                    break
                # plateau stopping is opt-in via a positive delta: runs that
                # sit at a floor for a long stretch before breaking through
                # must not be cut by the default settings
                if cfg.early_stop_delta > 0:
                    if smoothed > plateau_best + cfg.early_stop_delta:
                        plateau_best = smoothed
                        plateau_epoch = epoch
                    elif epoch - plateau_epoch >= window:
                        stopped_early = True
                        break

    save(final_path, epochs_run - 1)
    if best_thetas is not None:
        live = (actor.store.theta.copy(), critic.store.theta.copy())
        actor.store.set_theta(best_thetas[0])
        critic.store.set_theta(best_thetas[1])
        save(best_path, best_epoch)
        actor.store.set_theta(live[0])
        critic.store.set_theta(live[1])

    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": seed, "baseline": baseline, "epochs_run": epochs_run,
                   "stopped_early": stopped_early, "comm_updates": comm_updates,
                   "best_epoch": best_epoch,
                   "wall_seconds": time.perf_counter() - t_start}, fh, indent=2)
    return TrainResult(out_dir=out_dir, epochs_run=epochs_run,
                       stopped_early=stopped_early, metrics_path=metrics_path,
                       final_checkpoint=final_path, best_checkpoint=best_path,
                       comm_updates=comm_updates,
                       mean_reward_last=history[-1] if history else float("nan"))


def _train_epoch(cfg, env, channel, actor, critic, replay, rng,
                 baseline, comm_mode, social_on) -> dict:
    trajs = rollout_batch(env, actor, channel, cfg.episodes_per_epoch, rng,
                          comm=comm_mode)
    mean_reward = float(np.mean([t.episode_return for t in trajs]))
    _push_epoch(replay, trajs, env)

    c_losses = []
    for _ in range(cfg.critic_steps_per_epoch):
        batch = replay.sample(cfg.critic_batch_size, rng)
        c_loss, c_grads = critic_loss(critic, batch, cfg.critic_gamma, cfg.critic_l1)
        apply_gradients(critic, c_grads, cfg.critic_lr)
        c_losses.append(c_loss)

    train_comm_critic = baseline == "macc"
    adv = epoch_advantages(trajs, actor, critic, channel,
                           action_train_steps=env.action_train_steps,
                           with_comm=train_comm_critic)

    # both heads' gradients are taken at the same pre-update parameters
    loss_u, g_u, stats_u = policy_gradient_loss(
        actor, "action", adv.act_obs, adv.act_inbox_enc, adv.act_chosen,
        adv.act_adv, entropy_beta=cfg.pi_u_entropy_beta, reg=cfg.pi_u_reg)

    if social_on:
        loss_s, g_s, kl_stat = social_loss(
            actor, adv.act_obs, channel, eta=cfg.pi_u_kl_eta,
            kl_target=cfg.pi_u_kl_target, mode=cfg.social_mode)
    else:
        loss_s, g_s, kl_stat = 0.0, None, 0.0

    comm_updates = 0
    loss_c, ent_c = 0.0, 0.0
    g_c = None
    c_chosen = ()
    if baseline == "static-comm":
        c_obs, c_chosen, c_adv = _static_comm_records(trajs, env, cfg.static_reward)
    elif baseline == "macc":
        c_obs, c_chosen, c_adv = adv.comm_obs, adv.comm_chosen, adv.comm_adv
    if len(c_chosen):
        loss_c, g_c, stats_c = policy_gradient_loss(
            actor, "comm", c_obs, None, c_chosen, c_adv,
            entropy_beta=cfg.pi_c_entropy_beta, reg=cfg.pi_c_reg)
        ent_c = stats_c["entropy"]

    apply_gradients(actor, g_u, cfg.pi_u_lr)
    if g_s is not None:
        # divergence pressure gets its own step size: at the listed eta the
        # hinge's per-row force is ~1e-9 when scaled by the action policy's
        # learning rate, far too small to move the tracked statistic within
        # any run; a unit-scale step reaches the target in under 100 epochs
        # and the hinge gates itself off once there
        apply_gradients(actor, g_s, cfg.social_lr)
    if g_c is not None:
        apply_gradients(actor, g_c, cfg.pi_c_lr)
        comm_updates = 1

    return {
        "mean_reward": mean_reward,
        "avg_kl": kl_stat,
        "loss_pi_u": loss_u,
        "loss_pi_c": loss_c,
        "loss_social": loss_s,
        "loss_critic": float(np.mean(c_losses)) if c_losses else 0.0,
        "entropy_u": stats_u["entropy"],
        "entropy_c": ent_c,
        "_comm_updates": comm_updates,
    }


def run_baseline(cfg: ExperimentConfig, kind: str, seed: int,
                 out_dir: str, log_every: int = 0) -> TrainResult:
    if kind not in ("no-comm", "static-comm"):
        raise ConfigError(f"baseline kind must be no-comm or static-comm, got {kind!r}")
    return train(cfg, seed, out_dir, baseline=kind, log_every=log_every)


# ---------------------------------------------------------------------------
# Evaluation and analysis
# ---------------------------------------------------------------------------

def load_run(checkpoint_path: str):
    """Rebuild (cfg, env, channel, actor, critic, meta) from a checkpoint."""
    models, meta = load_checkpoint(checkpoint_path)
    cfg = parse_config(meta["config"])
    env = build_env(cfg)
    channel = build_channel(cfg, env)
    actor = models["actor"]
    if actor.obs_dim != env.obs_dim or actor.n_actions != env.n_actions:
        raise ConfigError(
            f"checkpoint actor shape (obs {actor.obs_dim}, actions "
            f"{actor.n_actions}) does not fit env {cfg.env!r}")
    if actor.n_messages != channel.n_messages:
        raise ConfigError("checkpoint message alphabet does not match comm.bits")
    return cfg, env, channel, actor, models.get("critic"), meta


def evaluate(checkpoint_path: str, episodes: int, greedy: bool = False,
             seed: int = EVAL_SEED):
    """Mean episode return (and standard error) of a stored policy.

    No learning happens; the rollout stream is seeded independently of
    training. Policies stored by the silent baseline are evaluated with the
    channel silenced, matching how they were trained.
    """
    if episodes < 1:
        raise UsageError("evaluation needs at least one episode")
    cfg, env, channel, actor, _, meta = load_run(checkpoint_path)
    comm_mode = "none" if meta.get("baseline") == "no-comm" else "learned"
    trajs = rollout_batch(env, actor, channel, episodes,
                          np.random.default_rng(seed), greedy=greedy,
                          comm=comm_mode)
    returns = np.array([t.episode_return for t in trajs])
    stderr = float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return float(returns.mean()), stderr


@dataclass
class ConfusionMatrix:
    """Emitted-message counts per ground-truth communicable fact."""
    counts: np.ndarray          # (n_facts, n_messages)
    fact_names: tuple

    def modal_fraction(self, fact: int) -> float:
        row = self.counts[fact]
        total = row.sum()
        return float(row.max() / total) if total else 0.0

    def modal_messages(self) -> np.ndarray:
        return self.counts.argmax(axis=1)

    def diagonal_fraction(self) -> float:
        total = self.counts.sum()
        if not total:
            return 0.0
        diag = sum(self.counts[i, i] for i in range(self.counts.shape[0]))
        return float(diag / total)

    def render(self) -> str:
        n_msg = self.counts.shape[1]
        width = max(8, max(len(name) for name in self.fact_names) + 1)
        head = " " * width + "".join(f"msg {m:<4d}" for m in range(n_msg))
        lines = [head]
        for i, name in enumerate(self.fact_names):
            cells = "".join(f"{int(c):<8d}" for c in self.counts[i])
            lines.append(f"{name:<{width}}{cells}")
        return "\n".join(lines)


def confusion_matrix(checkpoint_path: str, episodes: int = 200,
                     seed: int = EVAL_SEED) -> ConfusionMatrix:
    """Greedy-message protocol census over fresh episodes.

    Messages are tallied at every step where they will still be delivered
    (all but the last), against the fact the sender is in a position to
    transmit.
    """
    cfg, env, channel, actor, _, meta = load_run(checkpoint_path)
    trajs = rollout_batch(env, actor, channel, episodes,
                          np.random.default_rng(seed), greedy=True,
                          comm="learned")
    counts = np.zeros((env.n_facts, channel.n_messages), dtype=np.int64)
    for traj in trajs:
        for t in range(traj.length - 1):
            for agent in range(env.n_agents):
                fact = env.comm_fact(traj.states[t], agent)
                counts[fact, int(traj.outgoing[t, agent])] += 1
    return ConfusionMatrix(counts=counts, fact_names=tuple(env.fact_names))


# ---------------------------------------------------------------------------
# Multi-seed running and aggregation
# ---------------------------------------------------------------------------

def run_seeds(cfg: ExperimentConfig, seeds, out_root: str,
              baseline: str = "macc", log_every: int = 0) -> list:
    """Sequential multi-seed runner; one subdirectory per seed."""
    results = []
    for seed in seeds:
        out_dir = os.path.join(out_root, f"seed_{seed}")
        results.append(train(cfg, seed, out_dir, baseline=baseline,
                             log_every=log_every))
    return results


def read_metrics(path: str) -> dict:
    """Parse a metrics CSV into column arrays."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def aggregate(runs_dir: str, out_csv: str) -> str:
    """Combine every ``*/metrics.csv`` under ``runs_dir`` per epoch.

    Runs stopped early contribute to the epochs they reached; ``n_runs``
    records how many runs back each row.
    """
    run_files = sorted(
        os.path.join(runs_dir, name, "metrics.csv")
        for name in os.listdir(runs_dir)
        if os.path.isfile(os.path.join(runs_dir, name, "metrics.csv")))
    if not run_files:
        raise UsageError(f"no run subdirectories with metrics.csv in {runs_dir!r}")
    runs = [read_metrics(path) for path in run_files]
    longest = max(len(run["epoch"]) for run in runs)
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("epoch,n_runs,mean_reward,reward_min,reward_max,avg_kl\n")
        for epoch in range(longest):
            rewards = [run["mean_reward"][epoch] for run in runs
                       if len(run["mean_reward"]) > epoch]
            kls = [run["avg_kl"][epoch] for run in runs
                   if len(run["avg_kl"]) > epoch]
            fh.write(f"{epoch},{len(rewards)},{_fmt(np.mean(rewards))},"
                     f"{_fmt(np.min(rewards))},{_fmt(np.max(rewards))},"
                     f"{_fmt(np.mean(kls))}\n")
    return out_csv
