"""Least-squares approximation in the span of a network's tangent features.

``approx_jform`` solves ``Jac(theta) alpha = g`` on a sample set by truncated
SVD; ``approx_gform`` solves the normal equations with the empirical metric
``G = Jac^T Jac / n``. A :class:`DTBSet` accumulates such fits over time steps
and represents ``u^k = phi + h * sum_i d/dtheta f_{theta^i} . alpha^i``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from . import linalg
from .errors import BadSize
from .netfam import Network, NetworkSpec, network, theta_digest, to_record


def as_network(net) -> Network:
    return net if isinstance(net, Network) else network(net)


# -- index sets -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndexSet:
    indices: np.ndarray
    m: int
    seed: int | None = None

    def __len__(self):
        return int(self.indices.size)

    def __eq__(self, other):
        return isinstance(other, IndexSet) and self.m == other.m and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.m, self.indices.tobytes()))

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.indices, dtype="<i8").tobytes()).hexdigest()[:16]

    def union(self, other: "IndexSet") -> "IndexSet":
        return IndexSet(np.union1d(self.indices, other.indices), self.m, None)


def select_subspace(m: int, l: int, seed) -> IndexSet:
    """Uniform draw of ``l`` distinct parameter indices out of ``m``, sorted."""
    if not 1 <= l <= m:
        raise BadSize(f"subspace size {l} must lie in [1, {m}]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(m, size=l, replace=False)) if l < m else np.arange(m)
    return IndexSet(idx.astype(np.int64), m, seed)


def full_subspace(m: int) -> IndexSet:
    return IndexSet(np.arange(m, dtype=np.int64), m, None)


# -- single fits ------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DTBApprox:
    theta: np.ndarray
    subspace: IndexSet
    alpha: np.ndarray
    residual_rel: float

    def embedded(self) -> np.ndarray:
        """Coefficients scattered into parameter space, zero off the subspace."""
        v = np.zeros(self.subspace.m)
        v[self.subspace.indices] = self.alpha
        return v

    @property
    def alpha_l2(self) -> float:
        return float(np.linalg.norm(self.alpha))


def target_values(target, samples, q: int = 1) -> np.ndarray:
    """Target ``g`` at the samples, flattened sample-major to length ``n * q``."""
    g = target(samples) if callable(target) else target
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.size != len(samples) * q:
        raise ValueError(f"target has {g.size} values for {len(samples)} samples with {q} outputs")
    return g


def relative_residual(fitted, g) -> float:
    r = float(np.linalg.norm(fitted - g))
    ng = float(np.linalg.norm(g))
    return r / ng if ng > 0 else r


def solve_coefficients(J, g, opts=None, form: str = "jform"):
    """Coefficients of the least-squares fit of ``g`` by the columns of ``J``."""
    opts = opts or linalg.LstsqOptions()
    if form == "jform":
        return linalg.lstsq_svd(J, g, opts)
    if form == "gform":
        n = J.shape[0]
        return linalg.solve_psd(J.T @ J / n, J.T @ g / n, opts)
    raise ValueError(f"unknown form {form!r}")


def _fit(net, theta, subspace, target, samples, opts, form):
    net = as_network(net)
    subspace = subspace if subspace is not None else full_subspace(net.m)
    J = net.tangent_features(theta, samples, subspace).features
    g = target_values(target, samples, net.spec.output_dim)
    alpha = solve_coefficients(J, g, opts, form)
    approx = DTBApprox(np.asarray(theta, dtype=np.float64), subspace, alpha, relative_residual(J @ alpha, g))
    return approx


def approx_jform(net, theta, subspace, target, samples, opts=None) -> DTBApprox:
    return _fit(net, theta, subspace, target, samples, opts, "jform")


def approx_gform(net, theta, subspace, target, samples, opts=None) -> DTBApprox:
    return _fit(net, theta, subspace, target, samples, opts, "gform")


def project(approx: DTBApprox, net, points) -> np.ndarray:
    """Evaluate the fitted tangent combination ``d/dtheta f . alpha`` at ``points``."""
    net = as_network(net)
    J = net.tangent_features(approx.theta, points, approx.subspace).features
    out = J @ approx.alpha
    q = net.spec.output_dim
    return out if q == 1 else out.reshape(-1, q)


# -- scalar fields ---------------------------------------------------------------------------


class ScalarField:
    """A closed-form scalar function on R^d with autodiff gradient and Laplacian.

    ``fn`` maps a single JAX point of shape ``(d,)`` to a scalar.
    """

    def __init__(self, fn, d: int, name: str = ""):
        self.fn = fn
        self.d = d
        self.name = name or getattr(fn, "__name__", "field")
        grad = jax.grad(fn)
        eye = jnp.eye(d)

        def lap(z):
            return jnp.sum(jax.vmap(lambda e: jax.jvp(lambda zz: jax.jvp(fn, (zz,), (e,))[1], (z,), (e,))[1])(eye))

        self._value = jax.jit(jax.vmap(fn))
        self._grad = jax.jit(jax.vmap(grad))
        self._lap = jax.jit(jax.vmap(lap))

    def _pts(self, points):
        z = np.asarray(points, dtype=np.float64)
        return z[:, None] if z.ndim == 1 and self.d == 1 else z.reshape(-1, self.d)

    def __call__(self, points):
        return self.value(points)

    def value(self, points):
        return np.asarray(self._value(self._pts(points)))

    def grad(self, points):
        return np.asarray(self._grad(self._pts(points)))

    def laplacian(self, points):
        return np.asarray(self._lap(self._pts(points)))


# -- accumulated solutions -------------------------------------------------------------------

WHAT = ("value", "grad", "laplacian")


@dataclass
class DTBSet:
    """``u^k = phi + h * sum_i TB(f_{theta^i}; alpha^i)`` for the stored steps.

    Steps are appended by the integrators while a run is in progress; a
    finished set is treated as read-only.
    """

    h: float
    initial: ScalarField
    steps: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("time step h must be positive")

    def __len__(self):
        return len(self.steps)

    def append(self, approx: DTBApprox, seed=None):
        self.steps.append(approx)
        self.seeds.append(seed)

    def grouped(self, upto: int | None = None):
        """Sum embedded coefficients over steps sharing the same ``theta``.

        Exact by linearity of the tangent map in the coefficient vector.
        """
        groups: dict[bytes, list] = {}
        for s in self.steps[:upto]:
            key = s.theta.tobytes()
            if key in groups:
                groups[key][1] = groups[key][1] + s.embedded()
            else:
                groups[key] = [s.theta, s.embedded()]
        return list(groups.values())


def dtbset_eval(dset: DTBSet, net, points, what="value", upto: int | None = None):
    """Evaluate ``u^k`` (``k = upto`` or all steps) or its gradient / Laplacian.

    ``what`` is one of ``"value"``, ``"grad"``, ``"laplacian"`` or a tuple of
    them, in which case a tuple of arrays is returned. Values and Laplacians
    have shape ``(n,)``, gradients ``(n, d)``.
    """
    net = as_network(net)
    names = (what,) if isinstance(what, str) else tuple(what)
    for w in names:
        if w not in WHAT:
            raise ValueError(f"unknown quantity {w!r}")
    phi = dset.initial
    out = {}
    if "value" in names:
        out["value"] = phi.value(points).astype(np.float64)
    if "grad" in names:
        out["grad"] = phi.grad(points).astype(np.float64)
    if "laplacian" in names:
        out["laplacian"] = phi.laplacian(points).astype(np.float64)
    for theta, v in dset.grouped(upto):
        val, grad, lap = net.directional(theta, v, points)
        if "value" in out:
            out["value"] = out["value"] + dset.h * val[:, 0]
        if "grad" in out:
            out["grad"] = out["grad"] + dset.h * grad[:, 0, :]
        if "laplacian" in out:
            out["laplacian"] = out["laplacian"] + dset.h * lap[:, 0]
    res = tuple(out[w] for w in names)
    return res[0] if isinstance(what, str) else res


def write_jsonl(dset: DTBSet, path, thetas_path=None, spec: NetworkSpec | None = None):
    """One JSON record per step; distinct ``theta`` checkpoints go to ``thetas_path``."""
    thetas = {}
    with open(path, "w") as fh:
        for k, (s, seed) in enumerate(zip(dset.steps, dset.seeds)):
            dig = theta_digest(s.theta)
            thetas.setdefault(dig, s.theta)
            rec = {
                "k": k,
                "seed": seed,
                "subspace_digest": s.subspace.digest(),
                "alpha": [float(a) for a in s.alpha],
                "residual_rel": float(s.residual_rel),
                "theta_sha256": dig,
                "indices": [int(i) for i in s.subspace.indices],
            }
            fh.write(json.dumps(rec) + "\n")
    if thetas_path is not None and spec is not None:
        with open(thetas_path, "w") as fh:
            json.dump({dig: to_record(spec, th) for dig, th in thetas.items()}, fh)


def read_jsonl(path, thetas: dict, m: int, h: float, initial) -> DTBSet:
    """Rebuild a :class:`DTBSet` from :func:`write_jsonl` output.

    ``thetas`` maps digests to parameter vectors.
    """
    dset = DTBSet(h, initial)
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            sub = IndexSet(np.asarray(rec["indices"], dtype=np.int64), m, rec["seed"])
            if sub.digest() != rec["subspace_digest"]:
                raise ValueError(f"subspace digest mismatch at step {rec['k']}")
            dset.append(
                DTBApprox(thetas[rec["theta_sha256"]], sub, np.asarray(rec["alpha"]), rec["residual_rel"]),
                rec["seed"],
            )
    return dset
