"""Evaluation geometry: relative L2 metric and the 2-D slices of ``[-1, 1]^5``."""
from __future__ import annotations

import itertools

import numpy as np


def metric_rel_L2(u, ref) -> float:
    """``|u - ref|_2 / |ref|_2`` over the evaluation set, or the absolute norm if ``ref`` vanishes."""
    u = np.asarray(u, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if u.shape != ref.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {ref.shape}")
    diff = float(np.linalg.norm((u - ref).ravel()))
    nr = float(np.linalg.norm(ref.ravel()))
    return diff / nr if nr > 0 else diff


# Each plane: the two free coordinates (0-based) and the map (u, v) -> z.
def _plane_a(u, v):
    return np.stack([-u, u, 0 * u, 0.5 * (u - v), v], axis=-1)


def _plane_b(u, v):
    return np.stack([u, 0 * u, v, 0 * u, 0.5 * (u + v)], axis=-1)


def _plane_c(u, v):
    return np.stack([0.3 + 0 * u, 0.3 + 0 * u, u, v, 0.15 - 0.5 * u], axis=-1)


def _plane_d(u, v):
    return np.stack([0.4 * u + 0.6 * v, 0.8 + 0 * u, 0.8 + 0 * u, u, v], axis=-1)


def _plane_e(u, v):
    return np.stack([u, 0.75 * u + 0.25 * v, 0.5 + 0 * u, 0.25 * u + 0.75 * v, v], axis=-1)


HYPERPLANES = {
    "a": ((1, 4), _plane_a),
    "b": ((0, 2), _plane_b),
    "c": ((2, 3), _plane_c),
    "d": ((3, 4), _plane_d),
    "e": ((0, 4), _plane_e),
}


def plane_residual(which: str, Z) -> float:
    """Largest violation of the plane's affine relations by the points ``Z``."""
    Z = np.asarray(Z, dtype=np.float64)
    (i, j), fn = HYPERPLANES[which]
    return float(np.max(np.abs(fn(Z[:, i], Z[:, j]) - Z)))


def _inside(which, box) -> bool:
    fn = HYPERPLANES[which][1]
    (u0, u1), (v0, v1) = box
    corners = np.array(list(itertools.product((u0, u1), (v0, v1))))
    z = fn(corners[:, 0], corners[:, 1])
    return bool(np.all(np.abs(z) <= 1.0 + 1e-15))


def admissible_box(which: str) -> tuple:
    """Largest box ``c + s [-1, 1]^2`` inside ``[-1, 1]^2`` (free coordinates) whose image stays in the cube.

    The maps are affine, so checking the four corners suffices; ``s`` is
    found by bisection when the full square does not fit.
    """
    if which not in HYPERPLANES:
        raise ValueError(f"unknown hyperplane {which!r}; expected one of a-e")
    full = ((-1.0, 1.0), (-1.0, 1.0))
    if _inside(which, full):
        return full
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _inside(which, ((-mid, mid), (-mid, mid))):
            lo = mid
        else:
            hi = mid
    return ((-lo, lo), (-lo, lo))


def hyperplane_points(which: str, resolution: int):
    """``resolution x resolution`` grid on plane ``which`` as ``(points (r*r, 5), u (r,), v (r,))``."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    (u0, u1), (v0, v1) = admissible_box(which)
    u = np.linspace(u0, u1, resolution)
    v = np.linspace(v0, v1, resolution)
    U, V = np.meshgrid(u, v, indexing="ij")
    return HYPERPLANES[which][1](U.ravel(), V.ravel()), u, v
