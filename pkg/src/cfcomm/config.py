"""Experiment configuration: one flat record, four pinned presets.

Config files are flat ``key = value`` text. Every knob has a dotted public
key (``pi_u.lr``, ``critic.gamma``, ...); unknown keys are rejected so typos
fail loudly. Presets pin the hyperparameter columns used by the two bundled
experiments, with and without the divergence pressure / shared trunk.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

ENVIRONMENTS = ("particle", "digits")
SOCIAL_MODES = ("per_sample", "batch_sum")
DATASET_KINDS = ("synthetic", "idx")


@dataclass
class ExperimentConfig:
    env: str = "particle"
    shared_layers: bool = True          # digit actors only; particle ignores it
    epochs: int = 20000
    episodes_per_epoch: int = 30
    steps_per_episode: int = 30
    timesteps_per_epoch: int = 900      # must equal episodes * steps
    comm_bits: int = 2

    pi_u_lr: float = 2e-5
    pi_u_reg: float = 1e-3
    pi_u_entropy_beta: float = 0.0
    pi_u_kl_eta: float = 0.0
    pi_u_kl_target: float = 0.0
    pi_c_lr: float = 5e-3
    pi_c_reg: float = 1e-3
    pi_c_entropy_beta: float = 0.0

    critic_lr: float = 5e-4
    critic_l1: float = 1e-4
    critic_gamma: float = 0.0
    critic_replay_capacity: int = 50000
    critic_batch_size: int = 256
    # the particle advantages ride on per-action value differences ~40x
    # smaller than the value's dynamic range; resolving them needs a heavy
    # fitting schedule (held-out counterfactual fidelity only becomes
    # signal-dominant after ~1e5 sgd steps at the listed learning rate)
    critic_steps_per_epoch: int = 64

    social_mode: str = "batch_sum"      # what the hinge compares to kl_target
    social_lr: float = 1.0              # step size of the divergence-pressure update
    static_reward: float = 1.0          # +-advantage used by the scripted-talk baseline

    dataset_kind: str = "synthetic"
    dataset_images_path: str = ""
    dataset_labels_path: str = ""
    dataset_n_per_class: int = 500

    early_stop_window: int = 0          # 0 disables plateau stopping
    early_stop_delta: float = 0.0
    early_stop_reward: float = float("inf")   # stop once smoothed reward reaches this

    def validate(self) -> "ExperimentConfig":
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}; expected one of {ENVIRONMENTS}")
        if self.social_mode not in SOCIAL_MODES:
            raise ConfigError(f"unknown social.mode {self.social_mode!r}")
        if self.dataset_kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset.kind {self.dataset_kind!r}")
        if self.env == "digits" and self.steps_per_episode != 2:
            raise ConfigError("the digit game always runs two steps per episode")
        if self.timesteps_per_epoch != self.episodes_per_epoch * self.steps_per_episode:
            raise ConfigError(
                f"timesteps_per_epoch ({self.timesteps_per_epoch}) != "
                f"episodes_per_epoch * steps_per_episode "
                f"({self.episodes_per_epoch} * {self.steps_per_episode})")
        for name in ("epochs", "episodes_per_epoch", "steps_per_episode", "comm_bits",
                     "critic_replay_capacity", "critic_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{KEY_OF[name]} must be at least 1")
        if self.critic_steps_per_epoch < 0:
            raise ConfigError("critic.steps_per_epoch must be non-negative")
        for name in ("pi_u_lr", "pi_u_reg", "pi_u_entropy_beta", "pi_u_kl_eta",
                     "pi_u_kl_target", "pi_c_lr", "pi_c_reg", "pi_c_entropy_beta",
                     "critic_lr", "critic_l1", "critic_gamma", "social_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{KEY_OF[name]} must be non-negative")
        if self.dataset_kind == "idx" and not (
                self.dataset_images_path and self.dataset_labels_path):
            raise ConfigError("dataset.kind = idx requires dataset.images_path "
                              "and dataset.labels_path")
        return self


# public dotted key for each field, in canonical render order
KEY_OF = {
    "env": "env",
    "shared_layers": "shared_layers",
    "epochs": "epochs",
    "episodes_per_epoch": "episodes_per_epoch",
    "steps_per_episode": "steps_per_episode",
    "timesteps_per_epoch": "timesteps_per_epoch",
    "comm_bits": "comm.bits",
    "pi_u_lr": "pi_u.lr",
    "pi_u_reg": "pi_u.reg",
    "pi_u_entropy_beta": "pi_u.entropy_beta",
    "pi_u_kl_eta": "pi_u.kl_eta",
    "pi_u_kl_target": "pi_u.kl_target",
    "pi_c_lr": "pi_c.lr",
    "pi_c_reg": "pi_c.reg",
    "pi_c_entropy_beta": "pi_c.entropy_beta",
    "critic_lr": "critic.lr",
    "critic_l1": "critic.l1",
    "critic_gamma": "critic.gamma",
    "critic_replay_capacity": "critic.replay_capacity",
    "critic_batch_size": "critic.batch_size",
    "critic_steps_per_epoch": "critic.steps_per_epoch",
    "social_mode": "social.mode",
    "social_lr": "social.lr",
    "static_reward": "baseline.static_reward",
    "dataset_kind": "dataset.kind",
    "dataset_images_path": "dataset.images_path",
    "dataset_labels_path": "dataset.labels_path",
    "dataset_n_per_class": "dataset.n_per_class",
    "early_stop_window": "train.early_stop_window",
    "early_stop_delta": "train.early_stop_delta",
    "early_stop_reward": "train.early_stop_reward",
}
FIELD_OF = {key: name for name, key in KEY_OF.items()}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(field_name: str, raw: str):
    kind = _TYPES[field_name]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{KEY_OF[field_name]}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{KEY_OF[field_name]}: could not parse {raw!r} as {kind}")
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat key=value text. Unset keys keep the env preset's defaults.

    The env key (when present) is applied first so its base preset supplies
    the defaults the remaining lines override.
    """
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in FIELD_OF:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        pairs[key] = raw

    if base is None:
        env = pairs.get("env", "particle").strip()
        base = _BASE_BY_ENV.get(env)
        if base is None:
            raise ConfigError(f"unknown env {env!r}; expected one of {ENVIRONMENTS}")
    cfg = base
    updates = {FIELD_OF[k]: _coerce(FIELD_OF[k], raw) for k, raw in pairs.items()}
    return replace(cfg, **updates).validate()


def render_config(cfg: ExperimentConfig) -> str:
    lines = [f"{key} = {_render_value(getattr(cfg, name))}" for name, key in KEY_OF.items()]
    return "\n".join(lines) + "\n"


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Presets: the four pinned experiment columns
# ---------------------------------------------------------------------------

def _particle_plain() -> ExperimentConfig:
    return ExperimentConfig()


def _particle_social() -> ExperimentConfig:
    return replace(
        _particle_plain(),
        pi_u_lr=4e-5,
        pi_u_entropy_beta=1e-3,
        pi_u_kl_eta=1e-4,
        pi_u_kl_target=833.0,
        pi_c_entropy_beta=1e-3,
        critic_lr=25e-4,
    )


def _digits_base() -> ExperimentConfig:
    return ExperimentConfig(
        env="digits",
        epochs=5000,
        episodes_per_epoch=30,
        steps_per_episode=2,
        timesteps_per_epoch=60,
        comm_bits=1,
        pi_u_lr=1e-4,
        pi_u_entropy_beta=0.0,
        pi_u_kl_eta=0.01,
        pi_u_kl_target=50.0,
        pi_c_lr=1e-5,
        pi_c_entropy_beta=0.0,
        critic_lr=5e-3,
        # conv critic: smaller batches keep single-core epochs short; the
        # joint value is a coarse function of labels and answers, so a much
        # lighter schedule than the particle one fits it
        critic_batch_size=32,
        critic_steps_per_epoch=6,
    )


def _digits_shared() -> ExperimentConfig:
    return replace(_digits_base(), shared_layers=True)


def _digits_separate() -> ExperimentConfig:
    return replace(_digits_base(), shared_layers=False)


PRESETS = {
    "particle-plain": _particle_plain,
    "particle-social": _particle_social,
    "digits-shared": _digits_shared,
    "digits-separate": _digits_separate,
}

_BASE_BY_ENV = {"particle": _particle_plain(), "digits": _digits_shared()}


def preset(name: str) -> ExperimentConfig:
    try:
        build = PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return build().validate()
