"""Closed-form targets and initial conditions for the bundled experiments."""
from __future__ import annotations

import jax.numpy as jnp
import numpy as np

from .dtb import ScalarField


def w_tilde(z):
    """Raw 5-D test function; ``z`` is one point in ``[-1, 1]^5``."""
    c = jnp.cos(jnp.pi * z)
    s = jnp.sin(jnp.pi * z)
    cz1, cz2, cz3, cz4, cz5 = c[0], c[1], c[2], c[3], c[4]
    sz1, sz2, sz3, sz4, sz5 = s[0], s[1], s[2], s[3], s[4]
    return (
        cz1**2
        + sz2**3
        + 1.5 * sz1**2 * cz5
        + 3 * (1 - jnp.exp(sz2)) / (1 + jnp.exp(cz4))
        + 2 * sz1 * cz3
        + jnp.log(2 + cz4 * sz1**2) / jnp.exp(cz5 + 0.3 * sz4)
        + 3 * jnp.log(3 + cz2 + sz5) / (3 + sz3)
    )


def w5(z):
    """``w = -1 + 2 (w_tilde + 6) / 13``, which stays inside ``[-1, 1]`` on the box."""
    return -1.0 + 2.0 * (w_tilde(z) + 6.0) / 13.0


def heat_initial(z):
    """2-D initial condition built from ``s_i = sin(pi z_i)`` (periodic on ``[-1, 1]^2``)."""
    s1, s2 = jnp.sin(jnp.pi * z[0]), jnp.sin(jnp.pi * z[1])
    return 0.01 * (jnp.exp(3 * s1 + s2) + jnp.exp(-3 * s1 + s2) - jnp.exp(3 * s1 - s2) - jnp.exp(-3 * s1 - s2))


def sine_mode(z):
    return jnp.sin(jnp.pi * z[0])


def constant(value: float):
    def fn(z):
        return value + 0.0 * z[0]

    fn.__name__ = f"constant_{value:g}"
    return fn


def field(name: str, d: int, **kw) -> ScalarField:
    """Named initial condition / target as a :class:`ScalarField`."""
    if name == "w5":
        return ScalarField(w5, 5, "w5")
    if name == "heat_initial":
        return ScalarField(heat_initial, 2, "heat_initial")
    if name == "sine":
        return ScalarField(sine_mode, d, "sine")
    if name == "constant":
        return ScalarField(constant(float(kw.get("value", 0.0))), d, f"constant_{kw.get('value', 0.0)}")
    raise ValueError(f"unknown field {name!r}")


WGF_MEAN = (1.25, 1.25)
WGF_STD = 0.6


def whf_initial_velocity(Z):
    """Velocity ``grad Phi(0, Z)`` with ``Phi = 1/2 sum_{i>=2} z_i^2``: first coordinate zeroed."""
    V = np.array(Z, dtype=np.float64, copy=True)
    V[:, 0] = 0.0
    return V


WHF_OMEGA = np.array([np.sqrt(3.0) / 2.0] + [1.0] * 9)
