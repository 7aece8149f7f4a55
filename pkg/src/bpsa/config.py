"""Scenario files: a ``[law]`` section tagged by family and a ``[run]`` section.

Example::

    [law]
    family = proportion
    base = poisson
    xx = 1.8 -0.6 0     # const coef_c coef_a
    xy = 0
    yx = 0
    yy = 1.2 0.6 0

    [run]
    lambda = 1
    cx0 = 5
    cy0 = 5
    horizon_epochs = 100000
    replications = 100
    base_seed = 0
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .distributions import Distribution, FinitePMF, parse_distribution
from .engine import ScenarioConfig
from .errors import ConfigError, LawContractError
from .offspring import COMPONENTS, AffineMean, LawSpec

_LAW_KEYS = {
    "independent": ("x", "y"),
    "proportion": ("base",) + COMPONENTS,
    "bpa": ("own_x", "own_y", "attack_xy", "attack_yx"),
}
_RUN_REQUIRED = ("lambda", "cx0", "cy0", "horizon_epochs")
_RUN_OPTIONAL = ("replications", "base_seed", "max_wall_seconds")


def _affine(text: str) -> AffineMean:
    parts = text.split()
    if not 1 <= len(parts) <= 3:
        raise ValueError(f"affine mean needs 1 to 3 numbers, got {text!r}")
    return AffineMean(*(float(p) for p in parts))


def _affine_text(m: AffineMean) -> str:
    return f"{m.const!r} {m.coef_c!r} {m.coef_a!r}"


def _int(section: str, key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None


def _float(section: str, key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None


def parse_law(section: dict[str, str]) -> LawSpec:
    family = section.get("family")
    if family not in _LAW_KEYS:
        raise ConfigError(f"[law] family must be one of {sorted(_LAW_KEYS)}, got {family!r}")
    allowed = set(_LAW_KEYS[family]) | {"family"}
    if family == "proportion":
        allowed |= {f"dom_{c}" for c in COMPONENTS}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[law] unknown keys for family {family}: {sorted(unknown)}")
    params: dict = {}
    try:
        if family == "proportion":
            base = section.get("base", "poisson")
            params["base"] = base
            for c in COMPONENTS:
                if c not in section:
                    raise ConfigError(f"[law] missing key {c!r}")
                params[c] = _affine(section[c])
            if base == "pmf":
                for c in COMPONENTS:
                    text = section.get(f"dom_{c}", "const 0")
                    dist = parse_distribution(text)
                    if not isinstance(dist, FinitePMF):
                        raise ConfigError(f"[law] dom_{c} must be a finite pmf")
                    params[f"dom_{c}"] = dist
            elif any(k.startswith("dom_") for k in section):
                raise ConfigError("[law] dom_* keys apply only to base = pmf")
        else:
            for key in _LAW_KEYS[family]:
                if key not in section:
                    raise ConfigError(f"[law] missing key {key!r}")
                params[key] = parse_distribution(section[key])
    except (ConfigError, LawContractError):
        raise
    except ValueError as exc:
        raise ConfigError(f"[law] {exc}") from None
    spec = LawSpec(family, params)
    try:
        spec.build()
    except LawContractError:
        raise
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"[law] invalid law: {exc}") from None
    return spec


def law_text(spec: LawSpec) -> str:
    lines = [f"family = {spec.family}"]
    for key, value in spec.params.items():
        if isinstance(value, AffineMean):
            value = _affine_text(value)
        elif isinstance(value, Distribution):
            value = str(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines)


@dataclass(frozen=True)
class Scenario:
    law: LawSpec
    config: ScenarioConfig

    def canonical_text(self) -> str:
        c = self.config
        run = [f"lambda = {c.lam!r}", f"cx0 = {c.cx0}", f"cy0 = {c.cy0}",
               f"horizon_epochs = {c.horizon_epochs}", f"replications = {c.replications}"]
        if c.max_wall_seconds is not None:
            run.append(f"max_wall_seconds = {c.max_wall_seconds!r}")
        return "[law]\n" + law_text(self.law) + "\n\n[run]\n" + "\n".join(run) + "\n"

    @property
    def hash8(self) -> str:
        """Digest of the effective configuration, seed excluded."""
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:8]

    def with_overrides(self, *, seed=None, replications=None, horizon=None) -> "Scenario":
        changes = {}
        if seed is not None:
            changes["base_seed"] = seed
        if replications is not None:
            changes["replications"] = replications
        if horizon is not None:
            changes["horizon_epochs"] = horizon
        if not changes:
            return self
        try:
            return Scenario(self.law, self.config.replace(**changes))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None


def parse_scenario(text: str) -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    sections = set(parser.sections())
    if sections != {"law", "run"}:
        raise ConfigError(f"config needs exactly [law] and [run] sections, got {sorted(sections)}")
    law = parse_law(dict(parser["law"]))
    run = dict(parser["run"])
    unknown = set(run) - set(_RUN_REQUIRED) - set(_RUN_OPTIONAL)
    if unknown:
        raise ConfigError(f"[run] unknown keys: {sorted(unknown)}")
    missing = [k for k in _RUN_REQUIRED if k not in run]
    if missing:
        raise ConfigError(f"[run] missing keys: {missing}")
    wall = run.get("max_wall_seconds")
    try:
        config = ScenarioConfig(
            lam=_float("run", "lambda", run["lambda"]),
            cx0=_int("run", "cx0", run["cx0"]),
            cy0=_int("run", "cy0", run["cy0"]),
            law=law,
            horizon_epochs=_int("run", "horizon_epochs", run["horizon_epochs"]),
            replications=_int("run", "replications", run.get("replications", "1")),
            base_seed=_int("run", "base_seed", run.get("base_seed", "0")),
            max_wall_seconds=None if wall is None else _float("run", "max_wall_seconds", wall),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[run] {exc}") from None
    return Scenario(law, config)


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_scenario(text)
