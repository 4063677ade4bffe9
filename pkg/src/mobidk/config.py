"""YAML loading with per-field line numbers, shared by model, scenario and manifest files."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration files.

    The message names the file, the line (when known) and the offending field.
    """

    def __init__(self, message: str, path: str | Path | None = None,
                 line: int | None = None, field: str | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        self.field = field
        self.reason = message
        where = self.path or "<config>"
        if line is not None:
            where += f":{line}"
        if field:
            where += f": {field}"
        super().__init__(f"{where}: {message}")


def _walk(node, prefix: str, lines: dict[str, int]) -> None:
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            lines[key] = key_node.start_mark.line + 1
            _walk(value_node, key, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            key = f"{prefix}[{i}]"
            lines[key] = item.start_mark.line + 1
            _walk(item, key, lines)


class Document:
    """A parsed YAML mapping that remembers where each field came from."""

    def __init__(self, data: dict, lines: dict[str, int], path: str | Path | None = None):
        self.data = data
        self.lines = lines
        self.path = None if path is None else Path(path)

    @classmethod
    def load(cls, path: str | Path) -> "Document":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"file not found: {path}", path)
        return cls.parse(path.read_text(), path)

    @classmethod
    def parse(cls, text: str, path: str | Path | None = None) -> "Document":
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
            data = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            line = None if mark is None else mark.line + 1
            raise ConfigError(f"parse error: {exc.problem}", path, line) from exc
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping", path, 1)
        lines: dict[str, int] = {}
        _walk(root, "", lines)
        doc = cls(data, lines, path)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise doc.error("schema_version", f"unsupported schema version {version!r}")
        return doc

    def sub(self, field: str) -> "Document":
        """View of a nested mapping; errors still report the parent file's lines."""
        data = self.data[field]
        if not isinstance(data, dict):
            raise self.error(field, "expected a mapping")
        prefix = field + "."
        lines = {k[len(prefix):]: v for k, v in self.lines.items() if k.startswith(prefix)}
        return Document(data, lines, self.path)

    def line_of(self, field: str) -> int | None:
        while field:
            if field in self.lines:
                return self.lines[field]
            # fall back to the closest enclosing field
            cut = max(field.rfind("."), field.rfind("["))
            field = field[:cut] if cut > 0 else ""
        return None

    def error(self, field: str, message: str) -> ConfigError:
        return ConfigError(message, self.path, self.line_of(field), field)

    def resolve(self, relative: str) -> Path:
        """Resolve a path written inside this document against its directory."""
        p = Path(relative)
        if p.is_absolute() or self.path is None:
            return p
        return self.path.parent / p


def load_yaml_data(path: str | Path) -> Any:
    """Plain YAML load for bundled data files that need no line tracking."""
    with open(path) as fh:
        return yaml.safe_load(fh)


_MISSING = object()


def get(doc: Document, mapping: dict, field: str, key: str, default: Any = _MISSING) -> Any:
    if not isinstance(mapping, dict):
        raise doc.error(field, "expected a mapping")
    if key not in mapping:
        if default is _MISSING:
            raise doc.error(f"{field}.{key}" if field else key, "required field missing")
        return default
    return mapping[key]


def as_float(doc: Document, value: Any, field: str, positive: bool = False,
             nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(field, f"expected a number, got {value!r}")
    x = float(value)
    if not np.isfinite(x):
        raise doc.error(field, "must be finite")
    if positive and x <= 0:
        raise doc.error(field, f"must be > 0, got {x}")
    if nonneg and x < 0:
        raise doc.error(field, f"must be >= 0, got {x}")
    return x


def as_vector(doc: Document, value: Any, field: str, size: int,
              allow_scalar: bool = False) -> np.ndarray:
    if allow_scalar and isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(size, as_float(doc, value, field))
    if not isinstance(value, list) or len(value) != size:
        raise doc.error(field, f"expected a list of {size} numbers")
    return np.array([as_float(doc, v, f"{field}[{i}]") for i, v in enumerate(value)])


def as_matrix(doc: Document, value: Any, field: str, n: int) -> np.ndarray:
    """Accept an n-list (diagonal) or an n-by-n nested list."""
    if isinstance(value, list) and len(value) == n and all(isinstance(r, list) for r in value):
        rows = [as_vector(doc, r, f"{field}[{i}]", n) for i, r in enumerate(value)]
        return np.array(rows)
    return np.diag(as_vector(doc, value, field, n, allow_scalar=True))


def dump(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None, width=100)


def listify(x) -> Any:
    """Convert numpy containers to plain lists of floats for YAML output."""
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [listify(v) for v in x]
    if isinstance(x, np.floating):
        return float(x)
    return x
