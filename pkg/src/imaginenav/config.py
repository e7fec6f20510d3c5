"""Flat ``key = value`` run configuration.

The first non-comment line must be ``version = 1``.  Lines starting with
``#`` are comments.  Every key has a declared type and default; unknown
keys, malformed values and inconsistent combinations are rejected before
any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .imagine import DegradeParams
from .memory import MemoryConfig
from .metrics import GOAL_KINDS, PRESETS
from .navloop import Components, EpisodeConfig
from .planner import DEFAULT_API_KEY_ENV, DEFAULT_LAMBDA, DEFAULT_TIE_TOL, EndpointConfig
from .where2imagine import DEFAULT_HORIZON, TrainHyper
from .world import WorldParams

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message is always a single line."""


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str) -> str | None:
    return None if text.lower() in ("", "none", "null") else text


_WP, _MC, _EC, _TH, _DP, _EP = (WorldParams(), MemoryConfig(), EpisodeConfig(), TrainHyper(),
                                DegradeParams(), EndpointConfig())

# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "world.width": (int, _WP.width),
    "world.height": (int, _WP.height),
    "world.rooms": (int, _WP.rooms),
    "world.n_classes": (int, _WP.n_classes),
    "world.objects_per_room": (int, _WP.objects_per_room),
    "world.extra_door_prob": (float, _WP.extra_door_prob),
    "world.resolution": (float, _WP.resolution),
    "world.object_size": (int, _WP.object_size),
    "world.min_room": (int, _WP.min_room),
    "world.jitter": (int, _WP.jitter),
    "world.seed": (int, 0),
    "worlds.count": (int, 10),
    "demos.worlds": (int, 20),
    "demos.per_world": (int, 100),
    "horizon": (int, DEFAULT_HORIZON),
    "train.hidden": (int, _TH.hidden),
    "train.lr": (float, _TH.lr),
    "train.momentum": (float, _TH.momentum),
    "train.batch_size": (int, _TH.batch_size),
    "train.epochs": (int, _TH.epochs),
    "train.max_step_radius": (float, _TH.max_step_radius),
    "checkpoint": (_opt_str, None),
    "components.imagination": (_bool, True),
    "components.where2imagine": (_bool, True),
    "components.imagine_mode": (_opt_str, "oracle"),
    "components.planner": (str, "heuristic"),
    "components.goal_kind": (str, "objectnav"),
    "planner.lambda": (float, DEFAULT_LAMBDA),
    "planner.tie_tol": (float, DEFAULT_TIE_TOL),
    "memory.mode": (str, _MC.mode),
    "memory.tau_r": (float, _MC.tau_r),
    "memory.tau_m": (float, _MC.tau_m),
    "memory.tau_d": (float, _MC.tau_d),
    "memory.n_recent": (int, _MC.n_recent),
    "memory.n_medium": (int, _MC.n_medium),
    "degrade.p_swap": (float, _DP.p_swap),
    "degrade.depth_jitter": (float, _DP.depth_jitter),
    "endpoint.base_url": (str, ""),
    "endpoint.model": (str, _EP.model),
    "endpoint.api_key_env": (str, DEFAULT_API_KEY_ENV),
    "endpoint.timeout": (float, _EP.timeout),
    "endpoint.retries": (int, _EP.retries),
    "endpoint.backoff": (float, _EP.backoff),
    "endpoint.max_inflight": (int, _EP.max_inflight),
    "episode.max_steps": (int, _EC.max_steps),
    "episode.budget": (int, _EC.budget),
    "episode.success_distance": (float, _EC.success_distance),
    "episode.n_rays": (int, _EC.n_rays),
    "episode.max_range": (float, _EC.max_range),
    "episode.fixed_radius": (float, _EC.fixed_radius),
    "episode.min_start_distance": (float, _EC.min_start_distance),
    "episodes": (int, 100),
    "seed": (int, 0),
    "workers": (int, 1),
    "out": (str, "out"),
    "ablation.preset": (_opt_str, None),
}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def _section(self, prefix: str) -> dict:
        return {k[len(prefix) + 1:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def world_params(self) -> WorldParams:
        kw = self._section("world")
        kw.pop("seed")
        return WorldParams(**kw, goal_kind=GOAL_KINDS[self["components.goal_kind"]])

    def memory(self) -> MemoryConfig:
        return MemoryConfig(**self._section("memory"))

    def endpoint(self) -> EndpointConfig | None:
        kw = self._section("endpoint")
        return EndpointConfig(**kw) if kw["base_url"] else None

    def components(self) -> Components:
        return Components(
            imagination=self["components.imagination"],
            where2imagine=self["components.where2imagine"],
            imagine_mode=self["components.imagine_mode"],
            memory=self.memory(),
            planner=self["components.planner"],
            degrade=DegradeParams(**self._section("degrade")),
            lam=self["planner.lambda"],
            tie_tol=self["planner.tie_tol"],
            endpoint=self.endpoint(),
        )

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(**self._section("episode"))

    def train_hyper(self) -> TrainHyper:
        return TrainHyper(**self._section("train"))

    def validate(self) -> "RunConfig":
        """Build every derived object once so errors surface up front."""
        if self["components.goal_kind"] not in GOAL_KINDS:
            raise ConfigError(f"components.goal_kind: unknown goal kind {self['components.goal_kind']!r}")
        preset = self["ablation.preset"]
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"ablation.preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for key in ("episodes", "workers", "worlds.count", "demos.worlds", "demos.per_world", "horizon"):
            if self[key] < 1:
                raise ConfigError(f"{key}: must be >= 1")
        try:
            self.world_params()
            self.episode_config()
            self.train_hyper()
            self.components().validate(check_regressor=False)
        except (TypeError, ValueError) as exc:
            raise ConfigError(" ".join(str(exc).split())) from exc
        return self

    def dumps(self) -> str:
        lines = [f"version = {CONFIG_VERSION}"]
        lines += [f"{k} = {_fmt(self.values[k])}" for k in SCHEMA]
        return "\n".join(lines) + "\n"


def _split_pair(text: str, where: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{where}: expected key = value, got {text.strip()!r}")
    key, _, value = text.partition("=")
    return key.strip(), value.strip()


def _assign(values: dict, key: str, raw: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    parser = SCHEMA[key][0]
    try:
        values[key] = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {raw!r}") from exc


def parse_config(text: str, overrides: Iterable[str] = (), source: str = "<config>") -> RunConfig:
    """Parse file text, then apply ``key=value`` overrides, then validate."""
    values = {k: d for k, (_, d) in SCHEMA.items()}
    seen_version = False
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{n}"
        key, raw = _split_pair(stripped, where)
        if not seen_version:
            if key != "version":
                raise ConfigError(f"{where}: first entry must be 'version = {CONFIG_VERSION}'")
            if raw != str(CONFIG_VERSION):
                raise ConfigError(f"{where}: unsupported config version {raw!r}")
            seen_version = True
            continue
        if key == "version":
            raise ConfigError(f"{where}: duplicate version line")
        _assign(values, key, raw, where)
    if text.strip() and not seen_version:
        raise ConfigError(f"{source}: missing version line")
    for item in overrides:
        key, raw = _split_pair(item, "--set")
        _assign(values, key, raw, "--set")
    return RunConfig(values).validate()


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(p)!r}: {exc.strerror}") from exc
    return parse_config(text, overrides, source=str(p))
