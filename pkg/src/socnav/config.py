"""Run configuration: INI-style sections mirroring the module config types.

A run config names the scene manifest, the seeds, the algorithm, and the
hyperparameters for reward learning, SAC, and the episode protocol.  The
resolved configuration is re-serialized as JSON into every run directory for
provenance.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .irl import IRLConfig
from .sac import SACConfig
from .simenv import EpisodeConfig

ALGORITHMS = ("replay_irl", "sac_handcrafted")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    name: str
    manifest_path: Path
    seeds: list[int]
    algorithm: str = "replay_irl"
    output_dir: Path = Path("out")
    checkpoint_interval: int = 10_000
    cache_dir: Path | None = None          # defaults next to the manifest
    dtype: str = "float64"
    irl: IRLConfig = field(default_factory=IRLConfig)
    sac_lr: float = 3e-4
    sac_discount: float = 0.99
    tau: float = 0.005
    batch_size: int = 512
    target_entropy: float = -2.0
    initial_alpha: float = 1.0
    random_steps: int = 0
    buffer_capacity: int = 1_000_000
    policy_hidden: tuple[int, ...] = (256, 256)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not Path(self.manifest_path).exists():
            raise ConfigError(f"scene manifest not found: {self.manifest_path}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.checkpoint_interval <= 0:
            raise ConfigError("checkpoint_interval must be positive")
        for name in ("policy_interval", "reward_interval", "n_expert", "n_buffer"):
            if getattr(self.irl, name) < 1:
                raise ConfigError(f"irl.{name} must be >= 1")
        if not 0.0 < self.irl.discount <= 1.0:
            raise ConfigError("irl.discount must be in (0, 1]")
        if self.irl.sigma_t <= 0.0:
            raise ConfigError("irl.sigma_t must be positive")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def sac_config(self, obs_dim: int = 20, action_dim: int = 2) -> SACConfig:
        return SACConfig(
            obs_dim=obs_dim, action_dim=action_dim, hidden=self.policy_hidden,
            lr=self.sac_lr, lr_decay=self.irl.lr_decay,
            weight_decay=self.irl.weight_decay, discount=self.sac_discount,
            tau=self.tau, batch_size=self.batch_size,
            target_entropy=self.target_entropy,
            initial_alpha=self.initial_alpha, random_steps=self.random_steps,
            buffer_capacity=self.buffer_capacity, dtype=self.np_dtype)

    def resolved_cache_dir(self) -> Path:
        if self.cache_dir is not None:
            return Path(self.cache_dir)
        manifest = Path(self.manifest_path)
        return manifest.parent / f"{manifest.stem}_cache"

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def to_json(self) -> str:
        data = {
            "name": self.name,
            "manifest_path": str(self.manifest_path),
            "seeds": self.seeds,
            "algorithm": self.algorithm,
            "output_dir": str(self.output_dir),
            "checkpoint_interval": self.checkpoint_interval,
            "cache_dir": str(self.cache_dir) if self.cache_dir else None,
            "dtype": self.dtype,
            "irl": asdict(self.irl),
            "sac": {
                "lr": self.sac_lr, "discount": self.sac_discount,
                "tau": self.tau, "batch_size": self.batch_size,
                "target_entropy": self.target_entropy,
                "initial_alpha": self.initial_alpha,
                "random_steps": self.random_steps,
                "buffer_capacity": self.buffer_capacity,
                "hidden": list(self.policy_hidden),
            },
            "episode": asdict(self.episode),
        }
        return json.dumps(data, indent=2, sort_keys=True)


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split())


def load_run_config(path: Path) -> RunConfig:
    """Parse and validate an INI run config; errors raise ConfigError."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    try:
        run = parser["run"]
        base = Path(path).parent
        cfg = RunConfig(
            name=run.get("name", Path(path).stem),
            manifest_path=base / run["manifest"],
            seeds=[int(s) for s in run["seeds"].split()],
            algorithm=run.get("algorithm", "replay_irl"),
            output_dir=base / run.get("output_dir", "out"),
            checkpoint_interval=run.getint("checkpoint_interval", 10_000),
            cache_dir=(base / run["cache_dir"]) if "cache_dir" in run else None,
            dtype=run.get("dtype", "float64"),
        )
        irl_kwargs = {}
        if parser.has_section("irl"):
            s = parser["irl"]
            for key, cast in (("discount", float), ("sigma_t", float),
                              ("n_expert", int), ("n_buffer", int),
                              ("policy_interval", int), ("reward_interval", int),
                              ("reward_lr", float), ("lr_decay", float),
                              ("weight_decay", float), ("segment_max_len", int),
                              ("max_iterations", int)):
                if key in s:
                    irl_kwargs[key] = cast(s[key])
            if "reward_hidden" in s:
                irl_kwargs["reward_hidden"] = _int_tuple(s["reward_hidden"])
        cfg.irl = IRLConfig(**irl_kwargs)
        if parser.has_section("sac"):
            s = parser["sac"]
            cfg.sac_lr = s.getfloat("lr", cfg.sac_lr)
            cfg.sac_discount = s.getfloat("discount", cfg.sac_discount)
            cfg.tau = s.getfloat("tau", cfg.tau)
            cfg.batch_size = s.getint("batch_size", cfg.batch_size)
            cfg.target_entropy = s.getfloat("target_entropy", cfg.target_entropy)
            cfg.initial_alpha = s.getfloat("initial_alpha", cfg.initial_alpha)
            cfg.random_steps = s.getint("random_steps", cfg.random_steps)
            cfg.buffer_capacity = s.getint("buffer_capacity", cfg.buffer_capacity)
            if "hidden" in s:
                cfg.policy_hidden = _int_tuple(s["hidden"])
        if parser.has_section("episode"):
            s = parser["episode"]
            cfg.episode = EpisodeConfig(
                dt=s.getfloat("dt", 0.04),
                goal_radius=s.getfloat("goal_radius", 0.10),
                max_steps=s.getint("max_steps", 1000),
                pedestrian_radius=s.getfloat("pedestrian_radius", 0.10))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad run config {path}: {exc}") from exc
    cfg.validate()
    return cfg
