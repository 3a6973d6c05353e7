"""Flat dotted-key configuration files with sections, plus flag overrides.

Format:

    [model]
    hidden_size = 64
    [train]
    total_steps = 200

which resolves to {"model.hidden_size": "64", "train.total_steps": "200"}.
Values are coerced against a declared schema; unknown keys are rejected so
experiment records stay diffable and typo-proof.
"""

from __future__ import annotations

from .errors import ConfigError


def parse_config_file(path):
    values = {}
    section = ""
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            full = f"{section}.{key}" if section else key
            if full in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {full}")
            values[full] = value.strip()
    return values


def parse_overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _coerce_one(key, value, typ):
    if isinstance(value, typ) and not isinstance(value, str):
        return value
    try:
        if typ is bool:
            if str(value).lower() in ("1", "true", "yes"):
                return True
            if str(value).lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        if typ is tuple:
            return tuple(s.strip() for s in str(value).split(",") if s.strip())
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key}: cannot parse {value!r} as {typ.__name__}") from None


def resolve(schema, file_values, overrides=None):
    """Merge file values and overrides against a {key: type} schema.

    Every consumed key must be declared; unknown keys raise ConfigError.
    """
    merged = dict(file_values)
    merged.update(overrides or {})
    unknown = sorted(set(merged) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _coerce_one(k, v, schema[k]) for k, v in merged.items()}


def section(values, prefix):
    """Sub-dict of keys under `prefix.`, with the prefix stripped."""
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in values.items() if k.startswith(prefix + ".")}
