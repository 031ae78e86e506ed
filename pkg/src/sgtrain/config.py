"""Sectioned ``key = value`` run configuration.

The format is a strict INI subset: ``[section]`` headers, ``key = value``
lines and ``#`` comments. The stdlib ``configparser`` is not used because it
forgets line numbers once parsed and silently accepts several things we
reject (duplicate sections merged, interpolation, case folding).
"""

import os
from dataclasses import dataclass, field

from .errors import ConfigError

_METHODS = ("gradient", "integrated_gradients", "smoothgrad", "gradient_shap")


def _coerce(kind, text):
    if kind == "str":
        return text
    if kind == "path":
        return text or None
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "opt_float":
        return None if text.lower() in ("", "none") else float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(text)
    if kind.startswith("list:"):
        item = kind[5:]
        parts = [p.strip() for p in text.split(",")] if text.strip() else []
        return tuple(_coerce(item, p) for p in parts)
    raise AssertionError(kind)


# section -> key -> (type, default, allowed values or None)
SCHEMA = {
    "data": {
        "kind": ("str", "middle", None),
        "path": ("path", None, None),
        "test_path": ("path", None, None),
        "shape": ("str", "", None),
        "n_classes": ("int", 0, None),
        "mu": ("float", 1.0, None),
        "seed": ("int", 0, None),
        "n_train": ("int", 1000, None),
        "n_test": ("int", 100, None),
        "limit": ("int", 0, None),
    },
    "model": {
        "kind": ("str", "tcn", ("mlp", "mnist_cnn", "tcn", "lstm")),
        "widths": ("list:int", (), None),
        "dropout": ("list:float", (), None),
        "seed": ("int", 0, None),
    },
    "train": {
        "mode": ("str", "traditional", ("traditional", "saliency_guided", "fine_tune")),
        "k": ("float", 0.5, None),
        "lambda": ("float", 1.0, None),
        "lr": ("float", 0.01, None),
        "epochs": ("int", 10, None),
        "batch_size": ("int", 64, None),
        "optimizer": ("str", "sgd", ("sgd", "sgd_momentum", "adam")),
        "seed": ("int", 0, None),
        "sort_by": ("str", "signed", ("signed", "absolute")),
        "mask": ("str", "uniform_in_range", None),
        "mask_value": ("opt_float", None, None),
        "mask_grouping": ("str", "element", ("element", "per_pixel", "per_position")),
        "checkpoint_in": ("path", None, None),
    },
    "eval": {
        "methods": ("list:str", ("gradient",), None),
        "levels": ("list:float", (), None),
        "replacement": ("str", "dataset_background", ("dataset_background", "mean_value", "mask_strategy")),
        "seeds": ("list:int", (0,), None),
        "target": ("str", "predicted", ("predicted", "true")),
        "archs": ("list:str", ("tcn",), None),
        "kinds": ("list:str", ("middle",), None),
        "modes": ("list:str", ("traditional", "saliency_guided"), None),
        "steps": ("int", 32, None),
        "samples": ("int", 16, None),
        "sigma": ("float", 0.15, None),
    },
    "out": {
        "directory": ("path", "out", None),
    },
}

# alternate spellings accepted in files and as flags
ALIASES = {("train", "tau"): "lr", ("train", "batch"): "batch_size", ("train", "lam"): "lambda",
           ("data", "μ"): "mu"}

PATH_KEYS = (("data", "path"), ("data", "test_path"), ("train", "checkpoint_in"))


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    path: str = None
    explicit: set = field(default_factory=set)

    def __post_init__(self):
        for sec, keys in SCHEMA.items():
            sect = self.values.setdefault(sec, {})
            for key, (_, default, _) in keys.items():
                sect.setdefault(key, default)

    def get(self, section, key):
        return self.values[section][key]

    def __getitem__(self, section):
        return self.values[section]

    def set(self, section, key, value, line=None, source=None):
        """Set one key from text or a typed value, validating type and choices."""
        key = ALIASES.get((section, key), key)
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line, source)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", line, source)
        kind, _, choices = SCHEMA[section][key]
        if isinstance(value, str):
            try:
                value = _coerce(kind, value.strip())
            except ValueError:
                raise ConfigError(f"{section}.{key}: expected {kind.replace('list:', 'list of ')}, got {value!r}",
                                  line, source) from None
        if choices is not None and value not in choices:
            raise ConfigError(f"{section}.{key}: {value!r} is not one of {', '.join(choices)}", line, source)
        if section == "eval" and key == "methods":
            bad = [m for m in value if m not in _METHODS]
            if bad:
                raise ConfigError(f"eval.methods: unknown method {bad[0]!r}", line, source)
        self.values[section][key] = value
        self.explicit.add((section, key))
        if line is not None:
            self.lines[(section, key)] = line

    def validate_paths(self):
        """Fail before any computation if a referenced input file is missing."""
        for sec, key in PATH_KEYS:
            p = self.values[sec][key]
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{sec}.{key}: no such file or directory: {p}", self.lines.get((sec, key)),
                                  self.path)
        return self

    def to_text(self):
        out = []
        for sec, keys in SCHEMA.items():
            out.append(f"[{sec}]")
            for key, (kind, _, _) in keys.items():
                v = self.values[sec][key]
                if v is None:
                    continue
                if kind.startswith("list:"):
                    v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
                elif isinstance(v, float):
                    v = repr(v)
                out.append(f"{key} = {v}")
            out.append("")
        return "\n".join(out)


def parse_config_text(text, source=None):
    cfg = RunConfig(path=source)
    section = None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, source)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, source)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno, source)
        key, _, value = line.partition("=")
        key = ALIASES.get((section, key.strip()), key.strip())
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} in [{section}] (first set on line {seen[(section, key)]})",
                              lineno, source)
        seen[(section, key)] = lineno
        cfg.set(section, key, value, lineno, source)
    return cfg


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not valid UTF-8 ({exc.reason})", None, path) from None
    return parse_config_text(text, path)
