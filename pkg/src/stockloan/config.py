"""INI run configuration.

Sections and keys (all rates per annum, decimals)::

    [market]      r, mu1, sigma1
    [collateral]  sigma2, delta, rho
    [loan]        principal, alpha, v0, horizon      # horizon: years or "perpetual"
    [preference]  gamma
    [solver]      nv, nt, v_max_factor, theta, rannacher_steps,
                  omega, tol, max_iter, detection_tol
    [oracle]      n_paths, n_steps, seed, antithetic, tree_steps

Overrides use ``section.key=value`` or a bare ``key=value`` when the key
name is unambiguous.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigError
from .finite import GridConfig, Scenario
from .lcp import PsorSettings
from .oracle import PathConfig

KEYS = {
    "market": {"r": float, "mu1": float, "sigma1": float},
    "collateral": {"sigma2": float, "delta": float, "rho": float},
    "loan": {"principal": float, "alpha": float, "v0": float, "horizon": str},
    "preference": {"gamma": float},
    "solver": {
        "nv": int,
        "nt": int,
        "v_max_factor": float,
        "theta": float,
        "rannacher_steps": int,
        "omega": float,
        "tol": float,
        "max_iter": int,
        "detection_tol": float,
    },
    "oracle": {"n_paths": int, "n_steps": int, "seed": int, "antithetic": bool, "tree_steps": int},
}
ALIASES = {"l": "principal", "t": "horizon"}


@dataclass(frozen=True)
class RunSettings:
    scenario: Scenario = Scenario()
    grid: GridConfig = GridConfig()
    paths: PathConfig = PathConfig()
    tree_steps: int = 5000

    def echo(self) -> dict:
        g = asdict(self.grid)
        return {
            "scenario": asdict(self.scenario),
            "solver": g,
            "oracle": {**asdict(self.paths), "tree_steps": self.tree_steps},
        }


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in {"1", "true", "yes", "on"}:
        return True
    if t in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(kind, text):
    if kind is bool:
        return _parse_bool(text)
    return kind(text.strip())


def _line_numbers(text: str) -> dict:
    where = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
        elif section and s and not s.startswith(("#", ";")):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            where[(section, ALIASES.get(key, key))] = n
    return where


def _resolve_key(name: str):
    name = name.strip().lower()
    if "." in name:
        section, key = name.split(".", 1)
        key = ALIASES.get(key, key)
        if section not in KEYS or key not in KEYS[section]:
            raise ConfigError(f"unknown configuration key {name!r}")
        return section, key
    key = ALIASES.get(name, name)
    hits = [s for s, keys in KEYS.items() if key in keys]
    if len(hits) != 1:
        raise ConfigError(f"unknown or ambiguous configuration key {name!r}")
    return hits[0], key


def _apply(values: dict, settings: RunSettings) -> RunSettings:
    sc, grid, paths, tree = settings.scenario, settings.grid, settings.paths, settings.tree_steps
    sc_changes, grid_changes, psor_changes, path_changes = {}, {}, {}, {}
    for (section, key), value in values.items():
        if section in ("market", "collateral", "preference"):
            sc_changes[key] = value
        elif section == "loan":
            if key == "principal":
                sc_changes["L"] = value
            elif key == "horizon":
                sc_changes["T"] = value
            else:
                sc_changes[key] = value
        elif section == "solver":
            if key in ("omega", "tol", "max_iter"):
                psor_changes[key] = value
            else:
                grid_changes[key] = value
        elif section == "oracle":
            if key == "tree_steps":
                tree = value
            else:
                path_changes[key] = value
    if psor_changes:
        grid_changes["psor"] = replace(grid.psor, **psor_changes)
    return RunSettings(
        scenario=replace(sc, **sc_changes),
        grid=replace(grid, **grid_changes),
        paths=replace(paths, **path_changes),
        tree_steps=tree,
    )


def _horizon(text: str):
    if text.strip().lower() in {"perpetual", "inf", "infinite", "none"}:
        return None
    return float(text)


def _convert(section, key, raw, where):
    kind = KEYS[section][key]
    try:
        if key == "horizon":
            return _horizon(raw)
        return _coerce(kind, raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for [{section}] {key}: {exc}") from None


def load_settings(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunSettings:
    """Read an INI file (optional) and apply ``key=value`` overrides."""
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text, source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
        lines = _line_numbers(text)
        for section in parser.sections():
            sec = section.lower()
            if sec not in KEYS:
                raise ConfigError(f"{p}: unknown section [{section}]")
            for key, raw in parser.items(section):
                key = ALIASES.get(key, key)
                where = f"{p}:{lines.get((sec, key), '?')}"
                if key not in KEYS[sec]:
                    raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
                values[(sec, key)] = _convert(sec, key, raw, where)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        name, raw = item.split("=", 1)
        sec, key = _resolve_key(name)
        values[(sec, key)] = _convert(sec, key, raw, f"--set {name}")
    try:
        settings = _apply(values, RunSettings())
        sc = settings.scenario
        sc.collateral, sc.loan, sc.pref  # validate eagerly
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return settings
