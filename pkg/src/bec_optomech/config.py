"""Scenario configuration: YAML in, validated :class:`ScenarioConfig` out.

The layout is fixed by ``schema/scenario-v1.json``.  Structural problems are
collected from the schema validator, then scenario-specific rules are checked;
every problem found is reported in one :class:`ConfigValidationError`.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigValidationError

SCENARIOS = ("coupling-map", "evolve", "cat", "conditional", "number-stats", "wigner")
SCHEMA_VERSION = 1
TWO_PI = 2.0 * math.pi

# keys each scenario cannot run without, as (section, key)
_OPTICS = [("physical", k) for k in ("rabi_pump_hz", "vacuum_rabi_hz", "detuning_hz", "trap_hz", "mass_amu")]
REQUIRED = {
    "coupling-map": _OPTICS,
    "evolve": [("protocol", "alpha")],
    "cat": [("protocol", "alpha"), ("protocol", "m_revival")],
    "conditional": [("protocol", "alpha"), ("protocol", "X")],
    "number-stats": [("protocol", "beta")],
    "wigner": [],
}
NEEDS_LAMBDA = ("evolve", "conditional")


def load_schema() -> dict:
    text = resources.files("bec_optomech").joinpath("schema/scenario-v1.json").read_text(encoding="utf-8")
    return json.loads(text)


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


@dataclass
class ScenarioConfig:
    scenario: str
    physical: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def rad_s(self, key: str) -> float | None:
        """A physical *_hz value converted to rad/s (None when absent)."""
        v = self.physical.get(key)
        return None if v is None else TWO_PI * v

    def complex_value(self, key: str, default=None) -> complex | None:
        v = self.protocol.get(key, default)
        if v is None:
            return None
        return complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)


def _semantic_errors(scenario: str, cfg: dict) -> list[str]:
    errs = []
    phys = cfg.get("physical", {})
    prot = cfg.get("protocol", {})
    for section, key in REQUIRED[scenario]:
        if key not in cfg.get(section, {}):
            errs.append(f"{section}.{key}: required for scenario '{scenario}'")
    if "omega_m_hz" in phys and phys["omega_m_hz"] == 0:
        errs.append("physical.omega_m_hz: resonance: Lambda undefined (omega_m = 0)")
    if "theta_rad" in phys and "delta_k_per_m" in phys:
        errs.append("physical.theta_rad: conflicts with physical.delta_k_per_m; give one recoil setting")
    if "theta_rad" in phys and "wavelength_m" not in phys:
        errs.append("physical.wavelength_m: required when physical.theta_rad is given")
    if "detuning_hz" in phys and phys["detuning_hz"] == 0:
        errs.append("physical.detuning_hz: must be nonzero")
    if scenario in NEEDS_LAMBDA:
        has_phys = "omega_m_hz" in phys
        if "Lambda" in prot and has_phys:
            errs.append("protocol.Lambda: conflicts with physical.omega_m_hz; give Lambda or the physical parameters")
        elif "Lambda" not in prot and not has_phys:
            errs.append(f"protocol.Lambda: required for scenario '{scenario}' (or physical.omega_m_hz with the optics)")
        elif has_phys:
            errs.extend(
                f"{s}.{k}: required to derive Lambda" for s, k in _OPTICS if k not in cfg.get(s, {})
            )
    if scenario == "evolve" and "tau" in prot and "taus" in prot:
        errs.append("protocol.tau: conflicts with protocol.taus")
    if scenario == "cat" and "Lambda" in prot and "m_revival" in prot:
        if abs(4 * prot["m_revival"] * prot["Lambda"] ** 2 - 1) > 1e-12:
            errs.append("protocol.Lambda: must equal 1/(2 sqrt(m_revival)) for the cat scenario")
    if scenario in ("number-stats", "wigner"):
        state = prot.get("state", "cat")
        if state in ("cat", "coherent") and "alpha" not in prot:
            errs.append(f"protocol.alpha: required for state '{state}'")
        if state == "number" and "n" not in prot:
            errs.append("protocol.n: required for state 'number'")
        if state == "random" and "dim" not in prot:
            errs.append("protocol.dim: required for state 'random'")
    if scenario == "wigner":
        if "beta" in prot and ("beta_re" in prot or "beta_im" in prot):
            errs.append("protocol.beta: conflicts with protocol.beta_re/beta_im")
        if "beta" not in prot and not ("beta_re" in prot and "beta_im" in prot):
            errs.append("protocol.beta_re: required with protocol.beta_im (or a single protocol.beta)")
        if "rho0" in prot or "rho1" in prot:
            r0, r1 = prot.get("rho0", 0.3), prot.get("rho1", 0.7)
            if abs(r0 + r1 - 1.0) > 1e-12:
                errs.append("protocol.rho0: rho0 + rho1 must equal 1")
    if scenario == "number-stats" and "X_grid" in prot and "Lambda" not in prot and "omega_m_hz" not in phys:
        errs.append("protocol.Lambda: required with protocol.X_grid")
    if scenario == "conditional" and "X_grid" in prot and prot["X_grid"][2] < 2:
        errs.append("protocol.X_grid: needs at least two points")
    return errs


def validate_config(raw: dict, scenario: str | None = None) -> ScenarioConfig:
    """Validate a parsed config; ``scenario`` (from the command line) must agree with the file."""
    if not isinstance(raw, dict):
        raise ConfigValidationError(["<root>: configuration must be a mapping"])
    cfg = copy.deepcopy(raw)
    validator = jsonschema.Draft202012Validator(load_schema())
    errs = [f"{_path(e)}: {e.message}" for e in sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))]
    if errs:
        raise ConfigValidationError(errs)
    name = cfg.get("scenario", scenario)
    if scenario is not None and name != scenario:
        raise ConfigValidationError([f"scenario: file says '{name}' but the command is '{scenario}'"])
    if name is None:
        raise ConfigValidationError(["scenario: required (in the file or as the command)"])
    cfg["scenario"] = name
    errs = _semantic_errors(name, cfg)
    if errs:
        raise ConfigValidationError(errs)
    return ScenarioConfig(
        scenario=name,
        physical=cfg.get("physical", {}),
        protocol=cfg.get("protocol", {}),
        numerics=cfg.get("numerics", {}),
        sampling=cfg.get("sampling", {}),
        output=cfg.get("output", {}),
        raw=cfg,
    )


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads 1e9 and 1.0e9 as floats, as YAML 1.2 does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def load_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.load(fh, Loader=_Loader)
    return {} if data is None else data
