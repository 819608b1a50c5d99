"""
INI experiment configuration: parsing with line-accurate errors, lossless
serialization and dotted-key overrides.

    [flow]
    K = 3
    delta_t = 0.05

Missing sections and keys take the model defaults. Tuples are written as
comma-separated values and ``none`` stands for an unset optional.
"""

import configparser
import re
from pathlib import Path
from types import UnionType
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union, get_args, get_origin

from pydantic import BaseModel, ValidationError
from pydantic.fields import FieldInfo

from latent_restoration.errors import ConfigError
from latent_restoration.models import ExperimentConfig, ParamRanges

ROOT_SECTION = "experiment"
SECTIONS = ("dataset", "autoencoder", "flow", "restore", "optimizer", "training", "degradation")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")

RANGE_PRESETS = {"full": ParamRanges, "desk": ParamRanges.desk, "identity": ParamRanges.identity}


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive ("K")
    return parser


def _line_index(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    """(section, key) -> 1-based line; (section, None) for headers."""
    index: Dict[Tuple[str, Optional[str]], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            index.setdefault((section, None), number)
            continue
        match = _KEY_RE.match(line)
        if match and section is not None and not line[:1].isspace():
            index.setdefault((section, match.group(1)), number)
    return index


def _field(section: str, key: str) -> FieldInfo:
    if section == ROOT_SECTION:
        return ExperimentConfig.model_fields[key]
    return ExperimentConfig.model_fields[section].annotation.model_fields[key]


def _coerce(raw: str, field: FieldInfo) -> Any:
    """Raw INI text to what the field expects: lists for tuples, None for unset optionals."""
    value = raw.strip()
    annotation = field.annotation
    if get_origin(annotation) in (Union, UnionType):
        members = [a for a in get_args(annotation) if a is not type(None)]
        if value.lower() == "none" and len(members) < len(get_args(annotation)):
            return None
        annotation = members[0] if len(members) == 1 else annotation
    if get_origin(annotation) in (tuple, list):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def _location(loc: Iterable[Any]) -> Tuple[str, str, Optional[str]]:
    """Dotted key path plus the (section, key) it came from."""
    parts = [str(p) for p in loc]
    if not parts:
        return "", ROOT_SECTION, None
    if parts[0] in SECTIONS:
        key = parts[1] if len(parts) > 1 else None
        return ".".join(parts[:2]), parts[0], key
    return parts[0], ROOT_SECTION, parts[0]


def config_from_dict(data: Dict[str, Any], lines: Optional[Dict] = None) -> ExperimentConfig:
    """Validate nested raw values; errors carry the key path and, when known, the line."""
    lines = lines or {}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key_path, section, key = _location(first["loc"])
        line = lines.get((section, key)) or lines.get((section, None))
        raise ConfigError(f"invalid value: {first['msg']}", key_path=key_path or None, line_number=line) from e


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse INI text into a validated ``ExperimentConfig``.

    Raises:
        ConfigError: On malformed text (with line number), unknown sections or
            keys (all listed), or invalid values (with key path)
    """
    parser = _new_parser()
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside any section", line_number=e.lineno) from e
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", key_path=e.section, line_number=e.lineno) from e
    except configparser.DuplicateOptionError as e:
        raise ConfigError("duplicate key", key_path=f"{e.section}.{e.option}", line_number=e.lineno) from e
    except configparser.ParsingError as e:
        line_number = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line", line_number=line_number) from e

    lines = _line_index(text)
    known_sections = {ROOT_SECTION, *SECTIONS}
    unknown_sections = [s for s in parser.sections() if s not in known_sections]
    if unknown_sections:
        raise ConfigError(
            f"unknown sections: {', '.join(unknown_sections)}",
            key_path=unknown_sections[0],
            line_number=lines.get((unknown_sections[0], None)),
        )

    data: Dict[str, Any] = {}
    unknown: List[Tuple[str, str]] = []
    root_fields = set(ExperimentConfig.model_fields) - set(SECTIONS)
    for section in parser.sections():
        if section == ROOT_SECTION:
            allowed, target = root_fields, data
        else:
            allowed = set(ExperimentConfig.model_fields[section].annotation.model_fields)
            target = data.setdefault(section, {})
        for key, raw in parser.items(section, raw=True):
            if key not in allowed:
                unknown.append((section, key))
                continue
            target[key] = _coerce(raw, _field(section, key))
    if unknown:
        names = [f"{s}.{k}" if s != ROOT_SECTION else k for s, k in unknown]
        raise ConfigError(
            f"unknown keys: {', '.join(names)}",
            key_path=names[0],
            line_number=lines.get(unknown[0]),
        )
    return config_from_dict(data, lines)


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse an INI config file; an empty file yields all defaults."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text)


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section_lines(name: str, model: BaseModel) -> List[str]:
    out = [f"[{name}]"]
    for key, value in model.model_dump(mode="json").items():
        out.append(f"{key} = {_format(value)}")
    return out


def serialize_config(config: ExperimentConfig) -> str:
    """INI text that ``parse_config_text`` turns back into an equal config."""
    lines = [f"[{ROOT_SECTION}]"]
    for key in ExperimentConfig.model_fields:
        if key not in SECTIONS:
            lines.append(f"{key} = {_format(getattr(config, key))}")
    for section in SECTIONS:
        lines.append("")
        lines.extend(_section_lines(section, getattr(config, section)))
    return "\n".join(lines) + "\n"


def write_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_config(config), encoding="utf-8")
    return path


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, str]) -> ExperimentConfig:
    """Return a copy with dotted keys (``flow.beta``) set from raw strings.

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    data = config.model_dump(mode="json")
    for dotted, raw in overrides.items():
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] in data and parts[0] not in SECTIONS:
            data[parts[0]] = _coerce(raw, _field(ROOT_SECTION, parts[0]))
        elif len(parts) == 2 and parts[0] in SECTIONS and parts[1] in data[parts[0]]:
            data[parts[0]][parts[1]] = _coerce(raw, _field(parts[0], parts[1]))
        else:
            raise ConfigError("unknown key", key_path=dotted)
    return config_from_dict(data)


def parse_assignments(items: Iterable[str]) -> Dict[str, str]:
    """``["flow.beta=0.01", ...]`` to a dict.

    Raises:
        ConfigError: If an item has no '='
    """
    result = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got '{item}'")
        result[key.strip()] = value.strip()
    return result


def parse_ranges(text: str, base: Optional[ParamRanges] = None) -> ParamRanges:
    """Degradation ranges from a compact command-line form.

    Comma-separated items: a preset name (``full``, ``desk``, ``identity``)
    replaces everything so far, ``key=lo:hi`` sets one range and scalar keys
    take a single value::

        desk,q=50:50,kernel_size=7

    Items start from ``base`` (default: the desk ranges).

    Raises:
        ConfigError: On an unknown preset or key, or an invalid range
    """
    data = (base or ParamRanges.desk()).model_dump()
    for item in (part.strip() for part in text.split(",")):
        if not item:
            continue
        key, sep, value = (s.strip() for s in item.partition("="))
        if not sep:
            if key not in RANGE_PRESETS:
                raise ConfigError(f"unknown ranges preset '{key}'", key_path="degradation")
            data = RANGE_PRESETS[key]().model_dump()
        elif key not in data:
            raise ConfigError("unknown key", key_path=f"degradation.{key}")
        elif get_origin(ParamRanges.model_fields[key].annotation) is tuple:
            data[key] = [bound.strip() for bound in value.split(":")]
        else:
            data[key] = value
    try:
        return ParamRanges.model_validate(data)
    except ValidationError as e:
        loc = e.errors()[0]["loc"]
        key_path = f"degradation.{loc[0]}" if loc else "degradation"
        raise ConfigError(f"invalid value: {e.errors()[0]['msg']}", key_path=key_path) from e
