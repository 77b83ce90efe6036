"""Scenario presets S1-S6, shipped as JSON under ``mcsched/preset_files``.

The large scenarios draw their arrival rates (and S5 its durations) from a
fixed seed once; :func:`build_presets` regenerates the shipped files exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .env import ConfigError, EnvConfig, make_config
from .ppo import PpoHyper
from .trainer import TrainConfig

PRESET_NAMES = ("S1", "S2", "S3", "S4", "S5", "S6")
DRAW_SEED = 2024


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    description: str
    env: EnvConfig
    actor_hidden: tuple
    critic_hidden: tuple
    episodes: int
    baselines: tuple = ("round_robin",)
    rvi_cap: int | None = None
    hyper: PpoHyper = field(default_factory=lambda: PpoHyper(normalize_advantages=True))

    def train_config(self, **overrides) -> TrainConfig:
        kw = dict(env=self.env, hyper=self.hyper, episodes=self.episodes,
                  actor_hidden=self.actor_hidden, critic_hidden=self.critic_hidden)
        kw.update(overrides)
        return TrainConfig(**kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "env": self.env.to_dict(),
            "actor_hidden": list(self.actor_hidden),
            "critic_hidden": list(self.critic_hidden),
            "episodes": self.episodes,
            "baselines": list(self.baselines),
            "rvi_cap": self.rvi_cap,
            "hyper": self.hyper.__dict__.copy(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioPreset":
        try:
            return cls(
                name=doc["name"],
                description=doc.get("description", ""),
                env=EnvConfig.from_dict(doc["env"]),
                actor_hidden=tuple(doc["actor_hidden"]),
                critic_hidden=tuple(doc["critic_hidden"]),
                episodes=int(doc["episodes"]),
                baselines=tuple(doc.get("baselines", ("round_robin",))),
                rvi_cap=doc.get("rvi_cap"),
                hyper=PpoHyper(**doc.get("hyper", {})),
            )
        except KeyError as exc:
            raise ConfigError(f"missing preset field {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_overrides(self, doc: dict) -> "ScenarioPreset":
        """Apply a partial JSON override; ``env`` keys merge into the env config."""
        merged = self.to_dict()
        for key, value in doc.items():
            if key == "env":
                merged["env"].update(value)
            elif key == "hyper":
                merged["hyper"].update(value)
            else:
                merged[key] = value
        return ScenarioPreset.from_dict(merged)


def build_presets() -> dict[str, ScenarioPreset]:
    """Regenerate all presets from their defining parameters."""
    rng = np.random.default_rng(DRAW_SEED)
    big_rates = rng.integers(10, 21, size=10).astype(float)
    big_durations = rng.integers(1, 6, size=(10, 10))
    small_net = (16, 16)
    mid_net = (32, 32)
    big_net = (128, 128, 128)
    rr_stop = ("round_robin", "stopping", "unconstrained")
    rr_rvi = ("round_robin", "rvi", "unconstrained")
    rr = ("round_robin", "unconstrained")
    presets = [
        ScenarioPreset("S1", "one message, one channel, unit durations and penalty",
                       make_config([2.0], tradeoff_v=1.0), small_net, small_net, 60,
                       rr_stop),
        ScenarioPreset("S2", "two messages on one channel, latency only",
                       make_config([2.0, 3.0], tradeoff_v=0.0), mid_net, mid_net, 60,
                       rr_rvi, rvi_cap=10),
        ScenarioPreset("S3", "two messages on one channel, skewed demand",
                       make_config([2.0, 7.0], tradeoff_v=0.0), mid_net, mid_net, 60,
                       rr_rvi, rvi_cap=15),
        ScenarioPreset("S4", "ten messages, ten channels, unit durations",
                       make_config(big_rates, n_channels=10, tradeoff_v=1.0),
                       big_net, big_net, 200, rr),
        ScenarioPreset("S5", "ten messages, ten channels, durations 1 to 5",
                       make_config(big_rates, n_channels=10, duration=big_durations,
                                   tradeoff_v=1.0),
                       big_net, big_net, 200, rr),
        ScenarioPreset("S6", "ten messages, ten channels, age-proportional penalty",
                       make_config(big_rates, n_channels=10, tradeoff_v=1.0, penalty="linear"),
                       big_net, big_net, 200, rr),
    ]
    return {p.name: p for p in presets}


def load_preset(name: str) -> ScenarioPreset:
    if name not in PRESET_NAMES:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    text = resources.files("mcsched").joinpath("preset_files", f"{name}.json").read_text()
    return ScenarioPreset.from_dict(json.loads(text))


def reduced_large(preset: ScenarioPreset, size: int = 4) -> ScenarioPreset:
    """Keep the first ``size`` messages and channels of a large preset."""
    env = preset.env
    cfg = make_config(env.arrival_rates[:size], n_channels=size,
                      buffer_len=env.buffer_len,
                      duration=env.duration_table[:size, :size],
                      energy_const=env.energy_const[:size, :size],
                      tradeoff_v=env.tradeoff_v, penalty=env.penalty_fn[:size],
                      gain_support=env.gain_support, seed=env.seed)
    return ScenarioPreset(f"{preset.name}-{size}", f"{preset.description} (first {size})",
                          cfg, (32, 32), (32, 32), preset.episodes, preset.baselines)


if __name__ == "__main__":  # regenerate the shipped files
    from pathlib import Path

    out = Path(__file__).with_name("preset_files")
    out.mkdir(exist_ok=True)
    for name, preset in build_presets().items():
        (out / f"{name}.json").write_text(preset.to_json())
