"""Run configuration: sectioned ``key = value`` files with typed defaults.

Every tunable constant of the pipeline appears here under a named key. A
config file only needs the keys it changes; unknown sections or keys are
rejected so typos do not pass silently.
"""

from __future__ import annotations

import configparser
import copy
import os

CONFIG_ENV = "WAYDEST_CONFIG"

DEFAULTS: dict[str, dict[str, object]] = {
    "synth": {
        "seed": 0,
        "n_ports": 20,
        "n_vessels": 100,
        "voyages_per_vessel": 5,
        "lanes_per_port": 3,
        "min_port_separation_km": 500.0,
        "typo_rate": 0.3,
        "sentinel_rate": 0.05,
        "teleport_rate": 0.02,
        "unlabelable_rate": 0.0,
        "mean_interarrival_min": 20.0,
        "max_interarrival_days": 2.0,
        "route_jitter_km": 15.0,
    },
    "annotate": {
        "threshold": 0.75,
        "alpha": 1.8,
        "max_gap_days": 3.0,
        "max_ngram": 3,
    },
    "refine": {
        "eps": 0.15,
        "min_pts": 4,
        "max_passes": 5,
        "sog_average": "pair",
    },
    "represent": {
        "cell_size": 1.0,
        "poisson_lambda": 5.0,
        "split_seed": 0,
        "train_fraction": 0.7,
        "val_fraction": 0.15,
        "test_fraction": 0.15,
    },
    "model": {
        "preset": "tiny",
        "dropout": 0.3,
    },
    "train": {
        "epochs": 30,
        "batch_size": 32,
        "lr": 1e-4,
        "gradient_dropout": True,
        "seed": 0,
    },
    "eval": {
        "split": "test",
        "seed": 0,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return text


class RunConfig:
    """Typed view over the defaults, a config file and ``section.key=value`` overrides."""

    def __init__(self, values: dict[str, dict[str, object]] | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        for section, items in (values or {}).items():
            for key, value in items.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value) -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]; known: {sorted(DEFAULTS)}")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]; known: {sorted(DEFAULTS[section])}")
        self.values[section][key] = _coerce(section, key, value) if isinstance(value, str) else value

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @classmethod
    def load(cls, path=None, overrides=()) -> RunConfig:
        """Defaults, then ``path`` (or the file named by $WAYDEST_CONFIG), then overrides."""
        cfg = cls()
        path = path or os.environ.get(CONFIG_ENV) or None
        if path:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.set(section, key, raw)
        for item in overrides:
            name, sep, raw = item.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            cfg.set(section, key.strip(), raw)
        return cfg

    def to_dict(self) -> dict[str, dict[str, object]]:
        return copy.deepcopy(self.values)

    def dumps(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in items.items())
            lines.append("")
        return "\n".join(lines)
