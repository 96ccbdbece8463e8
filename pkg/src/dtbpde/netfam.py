"""Network families, their tangent features, and spatial derivatives thereof.

A network is described by an immutable :class:`NetworkSpec`; its parameters
live in one flat float64 vector ``theta``. The flattening order is fixed:

1. periodic embedding phase shifts ``psi`` (shape ``(d, P)``, row-major), if any;
2. then layer by layer, weights before biases:

   * ``mlp`` / ``periodic_mlp`` / ``residual``: ``W_l`` with shape
     ``(fan_in, fan_out)`` row-major, then ``b_l``;
   * ``mmnn_lite``: per block ``W_l (fan_in, C)``, ``b_l (C,)``,
     ``A_l (C, fan_out)``, ``c_l (fan_out,)``.

   The bias of the output layer is present only if ``last_layer_bias``.

Subspace index sets always refer to positions in this vector.

Importing this module switches JAX to 64-bit mode.
"""
from __future__ import annotations

import base64
import functools
import hashlib
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    NonFiniteError,
    NonSmoothActivation,
    RefitWarning,
)

jax.config.update("jax_enable_x64", True)

FAMILIES = ("mlp", "periodic_mlp", "residual", "mmnn_lite")

# name -> (function, is C^2)
ACTIVATIONS = {
    "tanh": (jnp.tanh, True),
    "sin": (jnp.sin, True),
    "relu_smooth": (jax.nn.softplus, True),
    "relu": (jax.nn.relu, False),
}


@dataclass(frozen=True)
class PeriodicEmbeddingSpec:
    """``z -> [cos(pi z_i + psi_ij)]`` for ``i < d``, ``j < per_dim_features``.

    ``phase_shifts`` optionally fixes the initial ``psi`` (row-major, length
    ``d * per_dim_features``); otherwise they are drawn at initialization.
    """

    per_dim_features: int = 40
    phase_shifts: tuple | None = None


@dataclass(frozen=True)
class NetworkSpec:
    family: str = "mlp"
    input_dim: int = 1
    output_dim: int = 1
    widths: tuple = (32, 32)
    activation: str = "tanh"
    embedding: PeriodicEmbeddingSpec | None = None
    last_layer_bias: bool = True
    # inner width of each mmnn_lite block; 0 picks 4 * max(widths)
    components: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if isinstance(self.embedding, dict):
            object.__setattr__(self, "embedding", PeriodicEmbeddingSpec(**self.embedding))
        emb = self.embedding
        if emb is not None and emb.phase_shifts is not None:
            object.__setattr__(
                self, "embedding",
                PeriodicEmbeddingSpec(emb.per_dim_features, tuple(float(p) for p in emb.phase_shifts)),
            )
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        # empty widths give a single affine layer
        if self.widths and min(self.widths) < 1:
            raise ValueError("widths must be positive counts")
        if self.family == "periodic_mlp" and self.embedding is None:
            raise ValueError("periodic_mlp requires an embedding")
        if emb is not None:
            if emb.per_dim_features < 1:
                raise ValueError("per_dim_features must be >= 1")
            if emb.phase_shifts is not None and len(emb.phase_shifts) != self.input_dim * emb.per_dim_features:
                raise ValueError("phase_shifts length must be input_dim * per_dim_features")

    @property
    def n_components(self) -> int:
        return self.components or 4 * max(self.widths, default=self.input_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        if d.get("embedding") is not None:
            d["embedding"] = PeriodicEmbeddingSpec(**d["embedding"])
        d["widths"] = tuple(d.get("widths", (32, 32)))
        return cls(**d)


def param_layout(spec: NetworkSpec) -> list[tuple[str, tuple]]:
    """Ordered ``(name, shape)`` blocks making up the flat parameter vector."""
    blocks = []
    d, q = spec.input_dim, spec.output_dim
    fan = d
    if spec.embedding is not None:
        P = spec.embedding.per_dim_features
        blocks.append(("psi", (d, P)))
        fan = d * P
    dims = [fan, *spec.widths, q]
    n_layers = len(dims) - 1
    for i in range(n_layers):
        last = i == n_layers - 1
        if spec.family == "mmnn_lite":
            C = spec.n_components
            blocks += [(f"W{i}", (dims[i], C)), (f"b{i}", (C,)), (f"A{i}", (C, dims[i + 1]))]
            if not last or spec.last_layer_bias:
                blocks.append((f"c{i}", (dims[i + 1],)))
        else:
            blocks.append((f"W{i}", (dims[i], dims[i + 1])))
            if not last or spec.last_layer_bias:
                blocks.append((f"b{i}", (dims[i + 1],)))
    return blocks


def n_params(spec: NetworkSpec) -> int:
    return sum(math.prod(shape) for _, shape in param_layout(spec))


@dataclass(frozen=True)
class TangentBlock:
    """Restricted tangent features evaluated on a batch of samples.

    For scalar networks ``features`` has shape ``(n, l)``; for ``q > 1``
    outputs the rows are ``n * q`` in sample-major order. ``spatial_grads``
    has a trailing axis of length ``d``.
    """

    features: np.ndarray
    spatial_grads: np.ndarray | None = None
    spatial_laplacians: np.ndarray | None = None
    seconds: float = 0.0
    batches: int = 0


def _check_points(points, d):
    z = np.asarray(points, dtype=np.float64)
    if z.ndim == 1:
        # 1-D input is one point for d > 1 and a batch of scalars for d == 1
        z = z[:, None] if d == 1 else z[None, :]
    if z.ndim != 2 or z.shape[1] != d:
        raise DimensionMismatch(f"expected points of dimension {d}, got array of shape {np.shape(points)}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("sample points contain NaN or Inf")
    return z


def _check_theta(theta, m):
    th = np.asarray(theta, dtype=np.float64)
    if th.shape != (m,):
        raise DimensionMismatch(f"theta must have shape ({m},), got {th.shape}")
    return th


class Network:
    """Compiled evaluators for one :class:`NetworkSpec`.

    Use :func:`network` to obtain a cached instance.
    """

    chunk = 512

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layout = param_layout(spec)
        self.m = sum(math.prod(s) for _, s in self.layout)
        offsets = np.cumsum([0] + [math.prod(s) for _, s in self.layout])
        self._slices = [(name, int(offsets[i]), shape) for i, (name, shape) in enumerate(self.layout)]
        self.smooth = ACTIVATIONS[spec.activation][1]
        self._build()

    def block_slice(self, name: str) -> slice:
        for n, start, shape in self._slices:
            if n == name:
                return slice(start, start + math.prod(shape))
        raise KeyError(name)

    def unflatten(self, theta):
        return {name: theta[start:start + math.prod(shape)].reshape(shape) for name, start, shape in self._slices}

    def apply(self, theta, z):
        """Single-point evaluation in JAX, ``z`` of shape ``(d,)`` -> ``(q,)``."""
        spec = self.spec
        p = self.unflatten(theta)
        act = ACTIVATIONS[spec.activation][0]
        h = z
        if spec.embedding is not None:
            h = jnp.cos(jnp.pi * z[:, None] + p["psi"]).reshape(-1)
        n_layers = len(spec.widths) + 1
        for i in range(n_layers):
            last = i == n_layers - 1
            if spec.family == "mmnn_lite":
                h = act(h @ p[f"W{i}"] + p[f"b{i}"]) @ p[f"A{i}"]
                if f"c{i}" in p:
                    h = h + p[f"c{i}"]
                continue
            pre = h @ p[f"W{i}"]
            if f"b{i}" in p:
                pre = pre + p[f"b{i}"]
            if last:
                h = pre
            elif spec.family == "residual" and i > 0 and h.shape == pre.shape:
                h = h + act(pre)
            else:
                h = act(pre)
        return h

    # -- pointwise building blocks -------------------------------------------------

    def _space(self, theta, z):
        f = lambda zz: self.apply(theta, zz)
        val, grad = f(z), jax.jacfwd(f)(z)
        eye = jnp.eye(z.shape[0])

        def second(e):
            return jax.jvp(lambda zz: jax.jvp(f, (zz,), (e,))[1], (z,), (e,))[1]

        lap = jnp.sum(jax.vmap(second)(eye), axis=0)
        return val, grad, lap

    def _build(self):
        apply = self.apply

        def sub_value(x, theta, idx, z):
            return apply(theta.at[idx].set(x), z)

        def sub_space(x, theta, idx, z):
            return self._space(theta.at[idx].set(x), z)

        def directional(theta, v, z):
            return jax.jvp(lambda th: self._space(th, z), (theta,), (v,))

        batch = lambda fn, axes: jax.jit(jax.vmap(fn, in_axes=axes))
        self._values = batch(apply, (None, 0))
        self._space_b = batch(self._space, (None, 0))
        self._feat = batch(
            lambda theta, idx, z: jax.jacrev(sub_value)(theta[idx], theta, idx, z), (None, None, 0)
        )
        self._feat_space = batch(
            lambda theta, idx, z: jax.jacrev(sub_space)(theta[idx], theta, idx, z), (None, None, 0)
        )
        self._dir = batch(directional, (None, None, 0))

    def _chunked(self, fn, z, *args):
        n = z.shape[0]
        B = min(self.chunk, n)
        outs = []
        for start in range(0, n, B):
            zc = z[start:start + B]
            pad = B - zc.shape[0]
            if pad:
                zc = np.concatenate([zc, np.repeat(zc[-1:], pad, axis=0)])
            res = fn(*args, jnp.asarray(zc))
            res = jax.tree_util.tree_map(lambda a: np.asarray(a)[: B - pad], res)
            outs.append(res)
        return jax.tree_util.tree_map(lambda *a: np.concatenate(a, axis=0), *outs), len(outs)

    # -- public evaluators -----------------------------------------------------------

    def forward(self, theta, points):
        """Network values at ``points`` (``(n, d)`` -> ``(n, q)``; ``(d,)`` -> ``(q,)``)."""
        single = np.ndim(points) == 1 and (self.spec.input_dim > 1 or np.size(points) == 1)
        z = _check_points(points, self.spec.input_dim)
        th = _check_theta(theta, self.m)
        vals, _ = self._chunked(self._values, z, jnp.asarray(th))
        return vals[0] if single else vals

    def forward_with_space_derivs(self, theta, points):
        """Values ``(n, q)``, spatial gradients ``(n, q, d)`` and Laplacians ``(n, q)``."""
        if not self.smooth:
            raise NonSmoothActivation(f"activation {self.spec.activation!r} is not C^2")
        z = _check_points(points, self.spec.input_dim)
        th = _check_theta(theta, self.m)
        (val, grad, lap), _ = self._chunked(self._space_b, z, jnp.asarray(th))
        return val, grad, lap

    def directional(self, theta, v, points):
        """Value, gradient and Laplacian of ``d/dtheta f . v`` at ``points``.

        Shapes as in :meth:`forward_with_space_derivs`; one forward-mode pass in
        parameter space, so the cost does not depend on the support of ``v``.
        """
        if not self.smooth:
            raise NonSmoothActivation(f"activation {self.spec.activation!r} is not C^2")
        z = _check_points(points, self.spec.input_dim)
        th = _check_theta(theta, self.m)
        vv = _check_theta(v, self.m)
        (_, tangent), _ = self._chunked(self._dir, z, jnp.asarray(th), jnp.asarray(vv))
        return tangent

    def tangent_features(self, theta, samples, subspace=None, with_space_derivs=False) -> TangentBlock:
        z = _check_points(samples, self.spec.input_dim)
        th = _check_theta(theta, self.m)
        idx = self._indices(subspace)
        t0 = time.perf_counter()
        n, q, d = z.shape[0], self.spec.output_dim, self.spec.input_dim
        if with_space_derivs:
            if not self.smooth:
                raise NonSmoothActivation(f"activation {self.spec.activation!r} is not C^2")
            (f, g, lap), nb = self._chunked(self._feat_space, z, jnp.asarray(th), jnp.asarray(idx))
            # jacrev puts the parameter axis last: g is (n, q, d, l)
            g = np.moveaxis(g, 2, 3)
            block = TangentBlock(
                f.reshape(n * q, -1),
                g.reshape(n * q, -1, d),
                lap.reshape(n * q, -1),
                time.perf_counter() - t0,
                nb,
            )
        else:
            f, nb = self._chunked(self._feat, z, jnp.asarray(th), jnp.asarray(idx))
            block = TangentBlock(f.reshape(n * q, -1), seconds=time.perf_counter() - t0, batches=nb)
        return block

    def _indices(self, subspace):
        if subspace is None:
            return np.arange(self.m)
        idx = np.asarray(getattr(subspace, "indices", subspace), dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise IndexOutOfRange("subspace must be a nonempty 1-D index set")
        if idx[0] < 0 or idx[-1] >= self.m or np.any(np.diff(idx) <= 0):
            raise IndexOutOfRange(f"subspace indices must be strictly increasing within [0, {self.m})")
        return idx


@functools.lru_cache(maxsize=64)
def network(spec: NetworkSpec) -> Network:
    return Network(spec)


# -- functional API ---------------------------------------------------------------------


def init_params(spec: NetworkSpec, seed: int, scheme: str = "he_normal", scale: float = 0.1) -> np.ndarray:
    """Draw a reproducible initial parameter vector.

    ``he_normal`` draws weights from N(0, 2/fan_in) and zeros the biases;
    ``small_uniform`` draws every entry from U(-scale, scale). Phase shifts
    fixed in the embedding spec are always used verbatim; otherwise they are
    U(0, 2 pi) under ``he_normal``.
    """
    if scheme not in ("he_normal", "small_uniform"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in param_layout(spec):
        size = math.prod(shape)
        if name == "psi" and spec.embedding.phase_shifts is not None:
            parts.append(np.asarray(spec.embedding.phase_shifts, dtype=np.float64))
        elif scheme == "small_uniform":
            parts.append(rng.uniform(-scale, scale, size))
        elif name == "psi":
            parts.append(rng.uniform(0.0, 2 * np.pi, size))
        elif name[0] in "WA":
            parts.append(rng.normal(0.0, math.sqrt(2.0 / shape[0]), size))
        else:
            parts.append(np.zeros(size))
    return np.concatenate(parts)


def forward(spec: NetworkSpec, theta, z):
    return network(spec).forward(theta, z)


def tangent_features(spec: NetworkSpec, theta, samples, subspace=None, with_space_derivs=False) -> TangentBlock:
    return network(spec).tangent_features(theta, samples, subspace, with_space_derivs)


def forward_with_space_derivs(spec: NetworkSpec, theta, samples):
    return network(spec).forward_with_space_derivs(theta, samples)


def uniform_sampler(d, low=-1.0, high=1.0):
    return lambda rng, n: rng.uniform(low, high, (n, d))


@dataclass
class RefitResult:
    theta: np.ndarray
    initial_loss: float
    final_loss: float
    improved: bool
    history: list = field(default_factory=list)


def refit(
    spec: NetworkSpec,
    theta0,
    target,
    iters: int = 1000,
    step: float = 1e-3,
    seed: int = 0,
    *,
    sampler=None,
    pool_size: int = 4096,
    batch: int = 512,
    frozen=None,
    method: str = "adam",
) -> RefitResult:
    """Fit ``f_theta`` to ``target`` by first-order minimization of the mean squared error.

    A training pool of ``pool_size`` points is drawn once with ``sampler``
    (uniform on ``[-1, 1]^d`` by default); every iteration uses a fresh
    minibatch from the pool. ``target`` maps ``(n, d)`` points to values of
    shape ``(n,)`` or ``(n, q)``. Parameters listed in ``frozen`` are not
    updated. The result never has a larger pool loss than ``theta0``: if the
    minimization fails to improve, ``theta0`` is returned with a
    :class:`RefitWarning`.
    """
    net = network(spec)
    rng = np.random.default_rng(seed)
    sampler = sampler or uniform_sampler(spec.input_dim)
    pool = np.asarray(sampler(rng, pool_size), dtype=np.float64)
    g = np.asarray(target(pool), dtype=np.float64).reshape(pool_size, spec.output_dim)
    mask = np.ones(net.m)
    if frozen is not None:
        mask[np.asarray(frozen, dtype=np.int64)] = 0.0
    mask = jnp.asarray(mask)

    def loss(th, z, y):
        return jnp.mean(jnp.sum((jax.vmap(net.apply, in_axes=(None, 0))(th, z) - y) ** 2, axis=-1))

    grad = jax.grad(loss)
    b1, b2, eps = 0.9, 0.999, 1e-8

    @jax.jit
    def adam_step(th, mom, vel, t, z, y):
        gr = grad(th, z, y) * mask
        mom = b1 * mom + (1 - b1) * gr
        vel = b2 * vel + (1 - b2) * gr**2
        mhat = mom / (1 - b1**t)
        vhat = vel / (1 - b2**t)
        return th - step * mhat / (jnp.sqrt(vhat) + eps), mom, vel

    @jax.jit
    def gd_step(th, mom, vel, t, z, y):
        return th - step * grad(th, z, y) * mask, mom, vel

    update = {"adam": adam_step, "gd": gd_step}[method]
    pool_loss = jax.jit(lambda th: loss(th, pool, g))

    th = jnp.asarray(_check_theta(theta0, net.m))
    best = np.asarray(th)
    loss0 = best_loss = float(pool_loss(th))
    history = [loss0]
    mom = vel = jnp.zeros_like(th)
    B = min(batch, pool_size)
    check_every = max(1, iters // 20)
    for it in range(1, iters + 1):
        sel = rng.integers(0, pool_size, B)
        th, mom, vel = update(th, mom, vel, float(it), pool[sel], g[sel])
        if it % check_every == 0 or it == iters:
            cur = float(pool_loss(th))
            history.append(cur)
            if np.isfinite(cur) and cur <= best_loss:
                best, best_loss = np.asarray(th), cur
    improved = best_loss < loss0
    if not improved:
        warnings.warn("refit did not reduce the training loss; returning theta0", RefitWarning, stacklevel=2)
        best = np.asarray(theta0, dtype=np.float64).copy()
    return RefitResult(np.array(best), loss0, best_loss, improved, history)


# -- serialization --------------------------------------------------------------------


def theta_digest(theta) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()


def to_record(spec: NetworkSpec, theta) -> dict:
    """JSON-compatible checkpoint; ``theta`` is stored bit-exactly as base64 little-endian float64."""
    th = np.ascontiguousarray(theta, dtype="<f8")
    return {
        "spec": spec.to_dict(),
        "n_params": int(th.size),
        "theta_b64": base64.b64encode(th.tobytes()).decode("ascii"),
        "sha256": theta_digest(th),
    }


def from_record(rec: dict) -> tuple[NetworkSpec, np.ndarray]:
    spec = NetworkSpec.from_dict(rec["spec"])
    theta = np.frombuffer(base64.b64decode(rec["theta_b64"]), dtype="<f8").astype(np.float64)
    if theta.size != rec["n_params"] or theta_digest(theta) != rec["sha256"]:
        raise ValueError("corrupt parameter record")
    return spec, theta


def save_params(path, spec: NetworkSpec, theta):
    with open(path, "w") as fh:
        json.dump(to_record(spec, theta), fh, indent=1)


def load_params(path) -> tuple[NetworkSpec, np.ndarray]:
    with open(path) as fh:
        return from_record(json.load(fh))
