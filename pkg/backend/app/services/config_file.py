"""
Line-oriented ``key = value`` experiment configuration.

``#`` starts a comment, blank lines are ignored and a later occurrence of a
key replaces an earlier one. ``--override key=value`` flags are applied on
top of the file. Keys are validated against the experiment being run, so a
key that experiment cannot use is an error citing its line.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

from pydantic import BaseModel, ValidationError

from app.core.exceptions import ConfigFileError
from app.models.experiment import (
    AblationOptions,
    ExperimentConfig,
    ExperimentName,
    InstabilityOptions,
    MoGOptions,
    MoGSpec,
)
from app.models.run_config import RunConfig

logger = logging.getLogger(__name__)

OPTION_MODELS: dict[ExperimentName, type[BaseModel]] = {
    ExperimentName.MOG: MoGOptions,
    ExperimentName.INSTABILITY: InstabilityOptions,
    ExperimentName.ABLATION: AblationOptions,
}


@dataclass(frozen=True)
class ConfigEntry:
    value: str
    line: Optional[int] = None   # None for command-line overrides


def _config_keys(model: type[BaseModel]) -> dict[str, str]:
    """Config key -> field name; aliased fields are spelled by their alias."""
    return {info.alias or name: name for name, info in model.model_fields.items()}


RUN_KEYS = _config_keys(RunConfig)
SPEC_KEYS = _config_keys(MoGSpec)


def allowed_keys(experiment: ExperimentName) -> list[str]:
    keys = list(_config_keys(OPTION_MODELS[experiment]))
    if experiment in (ExperimentName.MOG, ExperimentName.ABLATION):
        keys += list(SPEC_KEYS)
    return keys + list(RUN_KEYS)


def _split_assignment(text: str, line: Optional[int], separator: str = "=") -> tuple[str, str]:
    key, sep, value = text.partition(separator)
    key, value = key.strip(), value.strip()
    if not sep or not key:
        where = "" if line is not None else f"override {text!r}: "
        raise ConfigFileError(f"{where}expected 'key = value'", line=line)
    return key, value


def parse_config_text(text: str) -> dict[str, ConfigEntry]:
    entries: dict[str, ConfigEntry] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        key, value = _split_assignment(content, number)
        entries[key] = ConfigEntry(value, number)
    return entries


def parse_overrides(overrides: Iterable[str]) -> dict[str, ConfigEntry]:
    entries: dict[str, ConfigEntry] = {}
    for text in overrides:
        key, value = _split_assignment(text, None)
        entries[key] = ConfigEntry(value)
    return entries


def read_config_file(path: Path) -> dict[str, ConfigEntry]:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _validate(model: type[BaseModel], keys: dict[str, str], entries: dict[str, ConfigEntry]):
    data = {key: entries[key].value for key in keys if key in entries}
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = str(error["loc"][0]) if error["loc"] else None
        key = next((k for k, name in keys.items() if field in (k, name)), field)
        entry = entries.get(key) if key else None
        if error["type"] == "missing":
            raise ConfigFileError(f"missing required key '{key}'", key=key) from None
        message = f"{key}: {error['msg']}" if key else error["msg"]
        raise ConfigFileError(message, line=entry.line if entry else None, key=key) from None


def resolve_config(experiment: ExperimentName, entries: dict[str, ConfigEntry]) -> ExperimentConfig:
    experiment = ExperimentName(experiment)
    allowed = set(allowed_keys(experiment))
    for key, entry in entries.items():
        if key not in allowed:
            raise ConfigFileError(f"unknown key '{key}' for experiment '{experiment.value}'",
                                  line=entry.line, key=key)

    option_model = OPTION_MODELS[experiment]
    options = _validate(option_model, _config_keys(option_model), entries)
    run = _validate(RunConfig, RUN_KEYS, entries)
    if experiment is ExperimentName.MOG:
        kind, tac = options.method.conditioning()
        run = run.with_updates(cond_loss=kind, tac_enabled=tac)
    spec = _validate(MoGSpec, SPEC_KEYS, entries) if experiment is not ExperimentName.INSTABILITY else MoGSpec()
    return ExperimentConfig(experiment=experiment, run=run, mog=spec, options=options)


def load_experiment_config(experiment: ExperimentName, path: Optional[Path] = None,
                           overrides: Sequence[str] = ()) -> ExperimentConfig:
    entries = read_config_file(path) if path is not None else {}
    entries.update(parse_overrides(overrides))
    config = resolve_config(experiment, entries)
    logger.info(f"Resolved {len(entries)} configured key(s) for experiment '{config.experiment.value}'")
    return config


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(item) for item in value)
    return str(value)


def _section(model: BaseModel, keys: dict[str, str]) -> list[str]:
    return [f"{key} = {_format(getattr(model, name))}" for key, name in keys.items()]


def render_resolved_config(config: ExperimentConfig) -> str:
    """Every resolved key in a fixed order; parses back to the same ExperimentConfig."""
    lines = [f"# resolved configuration for experiment: {config.experiment.value}"]
    lines += _section(config.options, _config_keys(type(config.options)))
    if config.uses_mixture_spec:
        lines += _section(config.mog, SPEC_KEYS)
    lines += _section(config.run, RUN_KEYS)
    return "\n".join(lines) + "\n"
