"""Run one experiment end to end and record a manifest; verify a finished run.

Manifest layout (``manifest.json`` in the output directory)::

    {
      "schema": "dtbpde-manifest/1",
      "config": {...resolved settings...},
      "config_source": "<path>", "config_sha256": "...",
      "scale": "desk", "seed": 0, "deterministic": true,
      "status": "ok" | "check_failed" | "numerical_failure",
      "wall_time_s": 12.3,
      "metrics": {...}, "checks": [{"name", "passed", "value", "threshold", "detail"}],
      "files": [{"path": "<relative>", "sha256": "...", "bytes": 123}],
      "extra": {...}
    }

Exit codes: 0 ok, 1 config error, 2 check failure, 3 numerical failure.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from ..errors import BadSize, ConfigError, DTBError
from .config import load_config, resolve_config_path
from .experiments import DRIVERS, Context

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_NUMERIC = 0, 1, 2, 3
SCHEMA = "dtbpde-manifest/1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def default_cache_dir() -> Path:
    return Path(os.environ.get("DTBPDE_CACHE", Path.home() / ".cache" / "dtbpde"))


def run(config, scale="desk", seed=None, out=None, deterministic=False, check=False, verbose=False,
        cache_dir=None) -> tuple[int, Context | None]:
    """Execute a config; returns ``(exit_code, context)``.

    ``config`` is a path or the name of a bundled config. Without ``check``
    failed checks are recorded but the exit code stays 0.
    """
    try:
        path = resolve_config_path(config)
        cfg = load_config(path, scale, seed)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG, None
    out = Path(out) if out else Path("runs") / f"{cfg.id}-{scale}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, deterministic, Path(cache_dir) if cache_dir else default_cache_dir(), verbose)
    t0 = time.perf_counter()
    status, code, error = "ok", EXIT_OK, None
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            DRIVERS[cfg.experiment](ctx)
    except BadSize as exc:
        status, code, error = "config_error", EXIT_CONFIG, f"BadSize: {exc}"
        print(f"config error: {cfg.source}: {error}")
    except (DTBError, FloatingPointError) as exc:
        status, code, error = "numerical_failure", EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
        print(f"numerical failure: {error}")
    except (KeyError, ValueError, TypeError) as exc:
        # settings that pass schema validation but are rejected by the numerics
        status, code, error = "config_error", EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
        print(f"config error: {cfg.source}: {error}")
    wall = time.perf_counter() - t0
    if code == EXIT_OK and not all(c.passed for c in ctx.checks):
        status = "check_failed"
        if check:
            code = EXIT_CHECK
    for c in ctx.checks:
        print(c.line())
    manifest = {
        "schema": SCHEMA,
        "config": cfg.echo(),
        "config_source": str(path),
        "config_sha256": sha256_file(path),
        "scale": scale,
        "seed": cfg.seed,
        "deterministic": deterministic,
        "status": status,
        "error": error,
        "wall_time_s": round(wall, 3),
        "metrics": ctx.metrics,
        "checks": [{"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold,
                    "detail": c.detail} for c in ctx.checks],
        "files": [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p), "bytes": p.stat().st_size}
                  for p in ctx.files if p.exists()],
        "extra": ctx.extra,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    print(f"{cfg.id}: {status} in {wall:.1f}s -> {out}")
    return code, ctx


def verify(out_dir) -> tuple[int, list]:
    """Recompute the digest of every file listed in a manifest.

    Returns ``(exit_code, problems)``; exit code 2 when any file is missing
    or differs, 1 when the manifest itself is unreadable.
    """
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return EXIT_CONFIG, [f"cannot read manifest: {exc}"]
    problems = []
    for entry in manifest.get("files", []):
        p = out / entry["path"]
        if not p.exists():
            problems.append(f"missing {entry['path']}")
        elif sha256_file(p) != entry["sha256"]:
            problems.append(f"digest mismatch {entry['path']}")
    return (EXIT_CHECK if problems else EXIT_OK), problems
