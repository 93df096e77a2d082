"""
Experiment config files for droplab.
Reads JSON configs into ExperimentConfig and reports problems against the file line.
"""
import logging
import re
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import orjson
from pydantic import ValidationError

from .errors import ConfigError
from .models import ExperimentConfig

logger = logging.getLogger(__name__)


def _key_line(text: str, loc: Sequence[Any]) -> int:
    """
    Best-effort 1-based line of the key at loc, following the nesting top-down.
    Falls back to line 1 when a key cannot be found (e.g. a missing value).
    """
    lines = text.splitlines()
    start = 0
    found = None
    for part in loc:
        if isinstance(part, int):
            continue
        pattern = re.compile(r'"' + re.escape(str(part)) + r'"\s*:')
        for i in range(start, len(lines)):
            if pattern.search(lines[i]):
                found = start = i
                break
        else:
            break
    return found + 1 if found is not None else 1


def _dotted(loc: Sequence[Any]) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def _clean_message(msg: str) -> str:
    # pydantic prefixes errors raised inside validators
    return msg[len("Value error, "):] if msg.startswith("Value error, ") else msg


def config_from_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = orjson.loads(text)
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: <root>: config must be a JSON object")
    return config_from_dict(raw, source=source, text=text)


def config_from_dict(raw: Dict[str, Any], source: str = "<config>", text: str = "") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first.get("loc", ())
        extra = f" (+{e.error_count() - 1} more)" if e.error_count() > 1 else ""
        raise ConfigError(f"{source}:{_key_line(text, loc)}: {_dotted(loc)}: {_clean_message(first['msg'])}{extra}")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    config = config_from_text(text, source=str(path))
    logger.debug(f"Loaded config {path}: dataset={config.dataset} arch={config.arch} placement={config.placement}")
    return config


def config_bytes(config: ExperimentConfig) -> bytes:
    return orjson.dumps(config.model_dump(mode="json"), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_NON_STR_KEYS)
