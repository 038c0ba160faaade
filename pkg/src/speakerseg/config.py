"""Pipeline configuration files.

Plain ``key = value`` lines; top-level keys first, then one section per task::

    seed = 0
    window_duration = 5.0
    window_step = 0.5

    [vad]
    theta_on = 0.6
    theta_off = 0.4
    delta_on = 0.1
    delta_off = 0.1
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .postprocess import PostProcessingParams
from .reseg import SlidingWindowConfig

TASKS = ("seg", "vad", "osd", "reseg")
_TOP = "__top__"


class ConfigError(ValueError):
    pass


def read_key_values(text: str) -> dict[str, dict[str, str]]:
    """Sections to ``{key: raw value}``; top-level keys live under ``""``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(f"[{_TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return {("" if s == _TOP else s): dict(parser[s]) for s in parser.sections()}


@dataclass(frozen=True)
class PipelineConfig:
    window: SlidingWindowConfig = SlidingWindowConfig()
    params: dict[str, PostProcessingParams] = field(default_factory=dict)
    seed: int = 0

    def task_params(self, task: str) -> PostProcessingParams:
        return self.params.get(task, PostProcessingParams())


def parse_pipeline_config(text: str) -> PipelineConfig:
    sections = read_key_values(text)
    top = sections.get("", {})
    known_top = {"seed", "window_duration", "window_step"}
    unknown = set(top) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        window = SlidingWindowConfig(
            float(top.get("window_duration", 5.0)), float(top.get("window_step", 0.5))
        )
        seed = int(top.get("seed", 0))
        params = {}
        for name, values in sections.items():
            if not name:
                continue
            if name not in TASKS:
                raise ConfigError(f"unknown section [{name}], expected one of {TASKS}")
            extra = set(values) - {"theta_on", "theta_off", "delta_on", "delta_off"}
            if extra:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
            params[name] = PostProcessingParams(**{k: float(v) for k, v in values.items()})
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(window, params, seed)


def format_pipeline_config(cfg: PipelineConfig) -> str:
    lines = [
        f"seed = {cfg.seed}",
        f"window_duration = {cfg.window.duration!r}",
        f"window_step = {cfg.window.step!r}",
    ]
    for task in TASKS:
        if task in cfg.params:
            p = cfg.params[task]
            lines += [
                "",
                f"[{task}]",
                f"theta_on = {p.theta_on!r}",
                f"theta_off = {p.theta_off!r}",
                f"delta_on = {p.delta_on!r}",
                f"delta_off = {p.delta_off!r}",
            ]
    return "\n".join(lines) + "\n"
