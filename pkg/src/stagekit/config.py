"""Hierarchical experiment configuration: defaults + YAML overlay + dotted overrides.

A :class:`Config` is a tree of uppercase-by-convention keys mapping to scalars,
flat scalar lists, or sub-trees. The defaults tree defines a closed schema:
overlays and overrides may change values but never add keys. After
:func:`resolve_config` the tree is frozen and safe to share.
"""

import copy
import json
import math

import yaml


class ConfigError(Exception):
    """Base class for configuration failures."""


class ConfigSchemaError(ConfigError):
    """A key path that does not exist in the defaults tree."""


class ConfigTypeError(ConfigError):
    """A value whose type is incompatible with the default at its path."""


class ConfigParseError(ConfigError):
    """Malformed YAML overlay or override value."""


class FrozenConfigError(ConfigError):
    """Mutation attempted on a frozen config."""


_SCALARS = (bool, int, float, str)


def _check_leaf(value, path: str):
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"non-finite value at {path!r}: {value!r}")
    if isinstance(value, _SCALARS):
        return value
    if isinstance(value, (list, tuple)):
        out = []
        for i, item in enumerate(value):
            if not isinstance(item, _SCALARS):
                raise ConfigError(
                    f"list at {path!r} must hold scalars only, element {i} is "
                    f"{type(item).__name__}"
                )
            out.append(item)
        return out
    raise ConfigError(f"unsupported value type at {path!r}: {type(value).__name__}")


class Config:
    """Tree of configuration values with attribute access and freezing.

    Build from a nested dict, or field by field in the yacs style::

        cfg = Config()
        cfg.SOLVER = Config()
        cfg.SOLVER.SEED = 2020
    """

    __slots__ = ("_data", "_frozen")

    def __init__(self, tree: dict | None = None):
        object.__setattr__(self, "_data", {})
        object.__setattr__(self, "_frozen", False)
        if tree is not None:
            for key, value in tree.items():
                self._set_key(str(key), value, key)

    def _set_key(self, key: str, value, path):
        if isinstance(value, dict):
            self._data[key] = Config(value)
        elif isinstance(value, Config):
            self._data[key] = value
        else:
            self._data[key] = _check_leaf(value, str(path))

    # -- attribute interface -------------------------------------------------

    def __getattr__(self, name: str):
        try:
            return self._data[name]
        except KeyError:
            raise AttributeError(f"no config key {name!r}") from None

    def __setattr__(self, name: str, value):
        if self._frozen:
            raise FrozenConfigError(f"config is frozen; cannot set {name!r}")
        self._set_key(name, value, name)

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def keys(self):
        return self._data.keys()

    def items(self):
        return self._data.items()

    # -- dotted-path interface -----------------------------------------------

    def get(self, path: str):
        node = self
        for part in path.split("."):
            if not isinstance(node, Config) or part not in node._data:
                raise ConfigSchemaError(f"unknown config key {path!r}")
            node = node._data[part]
        return node

    def set(self, path: str, value) -> None:
        if self._frozen:
            raise FrozenConfigError(f"config is frozen; cannot set {path!r}")
        parts = path.split(".")
        node = self
        for part in parts[:-1]:
            nxt = node._data.get(part)
            if not isinstance(nxt, Config):
                raise ConfigSchemaError(f"unknown config key {path!r}")
            node = nxt
        if parts[-1] not in node._data:
            raise ConfigSchemaError(f"unknown config key {path!r}")
        node._set_key(parts[-1], value, path)

    # -- lifecycle -----------------------------------------------------------

    def freeze(self) -> "Config":
        object.__setattr__(self, "_frozen", True)
        for value in self._data.values():
            if isinstance(value, Config):
                value.freeze()
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def clone(self) -> "Config":
        """Unfrozen deep copy."""
        out = Config()
        for key, value in self._data.items():
            if isinstance(value, Config):
                out._data[key] = value.clone()
            else:
                out._data[key] = copy.copy(value)
        return out

    def to_dict(self) -> dict:
        out = {}
        for key, value in self._data.items():
            out[key] = value.to_dict() if isinstance(value, Config) else copy.copy(value)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Config):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        state = "frozen" if self._frozen else "mutable"
        return f"Config({self.to_dict()!r}, {state})"


def _type_name(value) -> str:
    return {bool: "boolean", int: "integer", float: "real", str: "string"}.get(
        type(value), type(value).__name__
    )


def _coerce_overlay(value, default, path: str):
    """Check an overlay value against the default at the same path.

    Integers may widen into real defaults; everything else must match the
    default's type exactly. Booleans never pass as integers.
    """
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, (list, tuple)):
            element_default = default[0] if default else None
            out = []
            for i, item in enumerate(value):
                if element_default is None:
                    out.append(_check_leaf(item, f"{path}[{i}]"))
                else:
                    out.append(_coerce_overlay(item, element_default, f"{path}[{i}]"))
            return out
    raise ConfigTypeError(
        f"type mismatch at {path!r}: default is {_type_name(default)}, "
        f"got {_type_name(value)}"
    )


def _merge_overlay(target: Config, data: dict, prefix: str) -> None:
    for raw_key, value in data.items():
        key = str(raw_key)
        path = f"{prefix}.{key}" if prefix else key
        if key not in target._data:
            raise ConfigSchemaError(f"unknown config key {path!r}")
        default = target._data[key]
        if isinstance(default, Config):
            if not isinstance(value, dict):
                raise ConfigTypeError(
                    f"type mismatch at {path!r}: default is a section, got "
                    f"{_type_name(value)}"
                )
            _merge_overlay(default, value, path)
        else:
            target._data[key] = _coerce_overlay(value, default, path)


def _parse_override(raw: str, default, path: str):
    """Parse an override string to the default's type."""
    if isinstance(default, bool):
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise ConfigTypeError(
            f"type mismatch at {path!r}: boolean overrides must be exactly "
            f"'true' or 'false', got {raw!r}"
        )
    if isinstance(default, int):
        try:
            return int(raw, 10)
        except ValueError:
            raise ConfigTypeError(
                f"type mismatch at {path!r}: expected integer, got {raw!r}"
            ) from None
    if isinstance(default, float):
        try:
            value = float(raw)
        except ValueError:
            raise ConfigTypeError(
                f"type mismatch at {path!r}: expected real, got {raw!r}"
            ) from None
        if not math.isfinite(value):
            raise ConfigTypeError(f"non-finite override at {path!r}: {raw!r}")
        return value
    if isinstance(default, str):
        return raw
    if isinstance(default, list):
        try:
            parsed = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigParseError(f"malformed list override at {path!r}: {exc}") from exc
        return _coerce_overlay(parsed, default, path)
    raise ConfigError(f"cannot override value of type {_type_name(default)} at {path!r}")


def resolve_config(
    defaults: Config,
    overlay_yaml: str | None = None,
    overrides: list[tuple[str, str]] | None = None,
) -> Config:
    """Merge defaults, an optional YAML overlay, then dotted-key overrides.

    Later sources win: overlay values replace defaults, override strings
    replace both, and repeated overrides apply left to right. The key set of
    the result always equals the key set of the defaults (closed schema).

    Returns a frozen :class:`Config`.

    Raises:
        ConfigSchemaError: a path absent from the defaults.
        ConfigTypeError: a value whose type conflicts with its default.
        ConfigParseError: unparseable YAML (message carries the line number).
    """
    merged = defaults.clone()

    if overlay_yaml is not None:
        try:
            data = yaml.safe_load(overlay_yaml)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}" if mark is not None else ""
            raise ConfigParseError(f"malformed YAML overlay{where}: {exc}") from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigParseError(
                f"YAML overlay must be a mapping, got {_type_name(data)}"
            )
        _merge_overlay(merged, data, "")

    for key, raw in overrides or []:
        default = merged.get(key)
        if isinstance(default, Config):
            raise ConfigTypeError(f"cannot override section {key!r} from the command line")
        merged.set(key, _parse_override(raw, default, key))

    return merged.freeze()


def _format_float(value: float) -> str:
    # repr() is the shortest round-trip form; ensure a decimal point (and a
    # dotted mantissa before any exponent) so YAML re-reads it as a real.
    text = repr(value)
    if "e" in text:
        mantissa, exponent = text.split("e")
        if "." not in mantissa:
            mantissa += ".0"
        return f"{mantissa}e{exponent}"
    if "." not in text:
        text += ".0"
    return text


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _format_float(value)
    return json.dumps(value)


def _dump_node(node: Config, indent: int, lines: list) -> None:
    pad = "  " * indent
    for key in sorted(node.keys()):
        value = node._data[key]
        if isinstance(value, Config):
            lines.append(f"{pad}{key}:")
            _dump_node(value, indent + 1, lines)
        elif isinstance(value, list):
            body = ", ".join(_format_scalar(item) for item in value)
            lines.append(f"{pad}{key}: [{body}]")
        else:
            lines.append(f"{pad}{key}: {_format_scalar(value)}")


def dump_config(cfg: Config) -> str:
    """Canonical YAML rendering: sorted keys, round-trip-exact scalars.

    ``resolve_config(defaults, dump_config(cfg))`` reproduces ``cfg`` exactly,
    and two configs with equal trees dump to identical text regardless of
    construction order.
    """
    if not cfg.frozen:
        raise ConfigError("dump_config requires a frozen config")
    lines: list = []
    _dump_node(cfg, 0, lines)
    return "\n".join(lines) + "\n"
