"""Experiment configuration: one JSON document per experiment.

A config holds base settings plus optional per-scale overrides under
``"scales"``; :func:`load_config` deep-merges the selected scale into the base
and validates the result. Errors are raised as :class:`ConfigError` naming
the offending field and, where it can be located, its line in the file.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..errors import ConfigError
from ..netfam import NetworkSpec

EXPERIMENTS = (
    "func_approx",
    "taylor",
    "heat_eigen",
    "heat_trapezoidal",
    "heat_euler",
    "ac2d_corrected",
    "ac5d_reset",
    "wgf_ring",
    "whf_oscillator",
)
SCALES = ("smoke", "desk", "paper")
POLICIES = ("fixed", "forward", "periodic_reset")


@dataclass
class ExperimentConfig:
    id: str
    experiment: str
    seed: int
    scale: str
    network: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    pretrain: dict | None = None
    sampler: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    output: str | None = None
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec.from_dict(self.network)

    def echo(self) -> dict:
        """The resolved settings, as recorded in the manifest."""
        return {
            "id": self.id, "experiment": self.experiment, "seed": self.seed, "scale": self.scale,
            "network": self.network, "init": self.init, "pretrain": self.pretrain, "sampler": self.sampler,
            "integrator": self.integrator, "target": self.target, "metrics": self.metrics, "checks": self.checks,
        }


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, key, msg, path="config"):
    line = _line_of(text, key.split(".")[-1])
    where = f"{path}:{line}" if line else path
    raise ConfigError(f"{where}: field '{key}': {msg}")


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(text, path, d, key, integer=False, allow_missing=True):
    if key not in d:
        if allow_missing:
            return
        _fail(text, key, "is required", path)
    v = d[key]
    ok = isinstance(v, int) and not isinstance(v, bool) if integer else isinstance(v, (int, float)) and not isinstance(v, bool)
    if not ok or not v > 0:
        kind = "a positive integer" if integer else "a positive number"
        _fail(text, key, f"must be {kind}, got {v!r}", path)


def validate(doc: dict, text: str | None = None, path: str = "config", scale: str = "desk") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    for key in ("id", "experiment", "seed"):
        if key not in doc:
            _fail(text, key, "is required", path)
    if not isinstance(doc["id"], str) or not doc["id"]:
        _fail(text, "id", "must be a nonempty string", path)
    if doc["experiment"] not in EXPERIMENTS:
        _fail(text, "experiment", f"unknown experiment {doc['experiment']!r}; expected one of {', '.join(EXPERIMENTS)}", path)
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        _fail(text, "seed", f"must be a non-negative integer, got {seed!r}", path)
    if scale not in SCALES:
        raise ConfigError(f"{path}: unknown scale {scale!r}; expected one of {', '.join(SCALES)}")
    scales = doc.get("scales", {})
    if not isinstance(scales, dict):
        _fail(text, "scales", "must be an object keyed by scale name", path)
    for name in scales:
        if name not in SCALES:
            _fail(text, "scales", f"unknown scale {name!r}", path)
    resolved = deep_merge({k: v for k, v in doc.items() if k != "scales"}, scales.get(scale, {}))

    net = resolved.get("network")
    if net is not None:
        if not isinstance(net, dict):
            _fail(text, "network", "must be an object", path)
        try:
            NetworkSpec.from_dict(net)
        except (TypeError, ValueError) as exc:
            _fail(text, "network", str(exc), path)

    integ = resolved.get("integrator", {})
    if not isinstance(integ, dict):
        _fail(text, "integrator", "must be an object", path)
    _positive(text, path, integ, "T")
    _positive(text, path, integ, "K", integer=True)
    _positive(text, path, integ, "l", integer=True)
    _positive(text, path, integ, "n_samples", integer=True)
    if "rcond" in integ:
        r = integ["rcond"]
        if not isinstance(r, (int, float)) or not 0 < r < 1:
            _fail(text, "rcond", f"must lie in (0, 1), got {r!r}", path)
    if integ.get("form", "jform") not in ("jform", "gform"):
        _fail(text, "form", f"must be 'jform' or 'gform', got {integ['form']!r}", path)
    pol = integ.get("policy")
    if pol is not None:
        kind = pol.get("kind") if isinstance(pol, dict) else None
        if kind not in POLICIES:
            _fail(text, "policy", f"kind must be one of {', '.join(POLICIES)}", path)
        if kind == "periodic_reset":
            _positive(text, path, pol, "L", integer=True, allow_missing=False)

    metrics = resolved.get("metrics", [])
    if not isinstance(metrics, list):
        _fail(text, "metrics", "must be a list", path)
    checks = resolved.get("checks", {})
    if not isinstance(checks, dict):
        _fail(text, "checks", "must be an object", path)

    return ExperimentConfig(
        id=resolved["id"], experiment=resolved["experiment"], seed=int(seed), scale=scale,
        network=resolved.get("network") or {}, init=resolved.get("init", {}), pretrain=resolved.get("pretrain"),
        sampler=resolved.get("sampler", {}), integrator=integ, target=resolved.get("target", {}),
        metrics=metrics, checks=checks, output=resolved.get("output"), source=path, raw=doc,
    )


def load_config(path, scale: str = "desk", seed: int | None = None) -> ExperimentConfig:
    """Read, merge and validate a config file; ``seed`` overrides the file's seed."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg} (column {exc.colno})") from exc
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = seed
    return validate(doc, text, path, scale)


def bundled_dir() -> Path:
    return Path(str(resources.files("dtbpde") / "configs"))


def bundled_configs() -> dict:
    """Names and paths of the configs shipped with the package."""
    return {p.stem: p for p in sorted(bundled_dir().glob("*.json"))}


def resolve_config_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    known = bundled_configs()
    if str(name_or_path) in known:
        return known[str(name_or_path)]
    raise ConfigError(f"{name_or_path}: no such file or bundled config (bundled: {', '.join(known)})")
