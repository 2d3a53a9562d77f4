"""Flat ``key = value`` experiment configs.

One pair per line, ``#`` starts a comment, blank lines are ignored.  Lists
(matrix entries, grid levels) are comma separated.
"""

from dataclasses import dataclass, field

import numpy as np

SCENARIOS = ("flow-decay", "rigidity-ma", "rigidity-sl", "lewy-suite", "legendre-suite",
             "calabi-suite")
FLOW_PRESETS = ("sin-sum", "sin1", "cos-prod", "none")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def parse_config_text(text):
    out, where = {}, {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", no)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", no)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", no)
        out[key] = val
        where[key] = no
    return out, where


@dataclass
class ExperimentConfig:
    values: dict
    lines: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text):
        vals, where = parse_config_text(text)
        if not vals:
            raise ConfigError("config is empty")
        cfg = cls(vals, where)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_dict(cls, d):
        cfg = cls({k: str(v) for k, v in d.items()})
        cfg.validate()
        return cfg

    @property
    def scenario(self):
        return self.values.get("scenario")

    def validate(self):
        if "scenario" not in self.values:
            raise ConfigError("missing required key 'scenario'")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}", self.lines.get("scenario"))
        preset = self.values.get("preset")
        if preset is not None and preset not in FLOW_PRESETS:
            raise ConfigError(f"unknown preset {preset!r}", self.lines.get("preset"))
        # touch typed keys so that malformed numbers fail early with a line number
        for key in ("dim", "points", "samples", "seed", "count"):
            if key in self.values:
                self.get_int(key)
        for key in ("amplitude", "t_end", "eps0", "wiggle", "guess_bump", "wavenumber"):
            if key in self.values:
                self.get_float(key)

    def _err(self, key, msg):
        return ConfigError(f"{key}: {msg}", self.lines.get(key))

    def get_str(self, key, default=None):
        return self.values.get(key, default)

    def get_int(self, key, default=None):
        if key not in self.values:
            return default
        try:
            return int(self.values[key], 0)
        except ValueError:
            raise self._err(key, f"not an integer: {self.values[key]!r}") from None

    def get_float(self, key, default=None):
        if key not in self.values:
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise self._err(key, f"not a number: {self.values[key]!r}") from None

    def get_bool(self, key, default=False):
        if key not in self.values:
            return default
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise self._err(key, f"not a boolean: {self.values[key]!r}")

    def get_list(self, key, default=None, cast=float):
        if key not in self.values:
            return default
        try:
            return [cast(v) for v in self.values[key].split(",") if v.strip()]
        except ValueError:
            raise self._err(key, f"bad list: {self.values[key]!r}") from None

    def get_matrix(self, key, n, default=None):
        """Row-major n x n matrix; a single number means that multiple of I, n numbers a diagonal."""
        vals = self.get_list(key)
        if vals is None:
            return np.eye(n) if default is None else np.asarray(default, dtype=float)
        if len(vals) == 1:
            return vals[0] * np.eye(n)
        if len(vals) == n:
            return np.diag(vals)
        if len(vals) == n * n:
            return np.array(vals).reshape(n, n)
        raise self._err(key, f"need 1, {n} or {n * n} entries, got {len(vals)}")
