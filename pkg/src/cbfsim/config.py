"""TOML configuration: one table per parameter group.

```toml
[run]
algorithms = ["etsi", "dpd", "gpc", "fot"]
densities = [10, 20, 30, 40, 50]
seeds = [1, 2, 3, 4, 5]

[highway]      # HighwayConfig fields
[schedule]     # ScenarioSchedule fields (seeds may also live here)
[cbf]          # CbfParams fields
[dcc]          # DccParams fields
[radio]        # RadioParams fields
```

Missing keys keep their defaults; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from cbfsim.core import Algorithm, CbfParams
from cbfsim.dcc import DccParams
from cbfsim.engine import SimConfig
from cbfsim.phy import RadioParams
from cbfsim.scenario import VALID_DENSITIES, HighwayConfig, ScenarioSchedule

SECTIONS = {
    "highway": HighwayConfig,
    "schedule": ScenarioSchedule,
    "cbf": CbfParams,
    "dcc": DccParams,
    "radio": RadioParams,
}
RUN_KEYS = {"algorithms", "densities", "seeds"}


class ConfigError(ValueError):
    pass


def _coerce(cls, values: dict[str, Any], section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in values.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def check_density(d: int) -> int:
    if d not in VALID_DENSITIES:
        valid = ", ".join(map(str, VALID_DENSITIES))
        raise ConfigError(f"unsupported density {d}; valid: {valid}")
    return d


def from_dict(data: dict[str, Any]) -> SimConfig:
    unknown = set(data) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    parts = {name: _coerce(cls, data.get(name, {}), name) for name, cls in SECTIONS.items()}
    run = dict(data.get("run", {}))
    bad = set(run) - RUN_KEYS
    if bad:
        raise ConfigError(f"[run] unknown keys: {', '.join(sorted(bad))}")
    if "seeds" in run:
        parts["schedule"] = dataclasses.replace(parts["schedule"], seeds=tuple(int(s) for s in run["seeds"]))
    algos = tuple(run.get("algorithms", SimConfig.algorithms))
    try:
        algos = tuple(Algorithm.parse(a).value for a in algos)
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from None
    dens = tuple(check_density(int(d)) for d in run.get("densities", SimConfig.densities))
    if not parts["schedule"].seeds:
        raise ConfigError("need at least one seed")
    return SimConfig(parts["highway"], parts["schedule"], parts["cbf"], parts["dcc"],
                     parts["radio"], algos, dens)


def load(path) -> SimConfig:
    p = Path(path)
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return from_dict(data)


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "highway.toml"
