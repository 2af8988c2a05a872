"""One-input, single-hidden-layer sigmoid network with a linear output layer.

    N_j(x) = sum_i v[j, i] * sigmoid(w[i] * x + b[i]) + c[j]

All derivatives (with respect to x and to every parameter) are written out
in closed form.  The flat parameter vector is ordered ``w, b, v (row-major),
c``; Jacobians returned by :func:`gradients` use the same ordering.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit as sigmoid


@dataclass(frozen=True)
class MlpParams:
    w: np.ndarray  # (m,)
    b: np.ndarray  # (m,)
    v: np.ndarray  # (n, m)
    c: np.ndarray  # (n,)

    def __post_init__(self):
        m = self.w.shape[0]
        n = self.c.shape[0]
        if self.w.shape != (m,) or self.b.shape != (m,) or self.v.shape != (n, m):
            raise ValueError("inconsistent parameter shapes")
        if not all(np.all(np.isfinite(a)) for a in (self.w, self.b, self.v, self.c)):
            raise ValueError("parameters must be finite")

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def size(self) -> int:
        return param_count(self.m, self.n)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w, self.b, self.v.ravel(), self.c])

    @classmethod
    def unflatten(cls, theta, m: int, n: int) -> "MlpParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (param_count(m, n),):
            raise ValueError(f"expected {param_count(m, n)} parameters, got {theta.shape}")
        w = theta[:m].copy()
        b = theta[m : 2 * m].copy()
        v = theta[2 * m : 2 * m + n * m].reshape(n, m).copy()
        c = theta[2 * m + n * m :].copy()
        return cls(w, b, v, c)

    @classmethod
    def _from_flat(cls, theta: np.ndarray, m: int, n: int) -> "MlpParams":
        # no validation: for optimiser loops that already checked theta
        p = object.__new__(cls)
        k = 2 * m + n * m
        object.__setattr__(p, "w", theta[:m])
        object.__setattr__(p, "b", theta[m : 2 * m])
        object.__setattr__(p, "v", theta[2 * m : k].reshape(n, m))
        object.__setattr__(p, "c", theta[k:])
        return p

    @classmethod
    def zeros(cls, m: int, n: int) -> "MlpParams":
        return cls.unflatten(np.zeros(param_count(m, n)), m, n)


def param_count(m: int, n: int) -> int:
    return 2 * m + n * m + n


def init(m: int = 3, n: int = 1, seed: int = 0) -> MlpParams:
    """Parameters drawn i.i.d. from U[-0.5, 0.5] with a seeded generator."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    rng = np.random.default_rng(seed)
    return MlpParams.unflatten(rng.uniform(-0.5, 0.5, param_count(m, n)), m, n)


def _hidden(p: MlpParams, x):
    x = np.asarray(x, dtype=float)
    z = np.multiply.outer(x, p.w) + p.b  # (..., m)
    s = sigmoid(z)
    return x, s


def forward(p: MlpParams, x):
    """Network output; shape ``(n,)`` for scalar x, ``(K, n)`` for x of shape (K,)."""
    _, s = _hidden(p, x)
    return s @ p.v.T + p.c


def dforward_dx(p: MlpParams, x):
    """Derivative of the output with respect to the input x."""
    _, s = _hidden(p, x)
    ds = s * (1.0 - s)
    return (ds * p.w) @ p.v.T


def gradients(p: MlpParams, x):
    """Value, x-derivative and their parameter Jacobians in one pass.

    Returns ``(N, dN, JN, JdN)``.  For x of shape (K,) the shapes are
    (K, n), (K, n), (K, n, P), (K, n, P) with P the parameter count; for a
    scalar x the leading K axis is dropped.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m, n = p.m, p.n
    K = x.shape[0]
    s = sigmoid(np.outer(x, p.w) + p.b)  # (K, m)
    s1 = s * (1.0 - s)
    s2 = s1 * (1.0 - 2.0 * s)

    N = s @ p.v.T + p.c
    dN = (s1 * p.w) @ p.v.T

    P = param_count(m, n)
    JN = np.zeros((K, n, P))
    JdN = np.zeros((K, n, P))
    iw, ib, iv, ic = 0, m, 2 * m, 2 * m + n * m
    xs = x[:, None]
    # (K, n, m) blocks
    vs1 = p.v[None, :, :] * s1[:, None, :]
    vs2w = p.v[None, :, :] * (s2 * p.w)[:, None, :]
    JN[:, :, iw:ib] = vs1 * xs[:, :, None]
    JN[:, :, ib:iv] = vs1
    JdN[:, :, iw:ib] = vs2w * xs[:, :, None] + vs1
    JdN[:, :, ib:iv] = vs2w
    for j in range(n):
        JN[:, j, iv + j * m : iv + (j + 1) * m] = s
        JdN[:, j, iv + j * m : iv + (j + 1) * m] = s1 * p.w
        JN[:, j, ic + j] = 1.0
    if scalar:
        return N[0], dN[0], JN[0], JdN[0]
    return N, dN, JN, JdN


def save(p: MlpParams, path, seed: int | None = None) -> None:
    """Write a flat text record: header line then one value per line."""
    lines = [f"# m={p.m} n={p.n} seed={'' if seed is None else seed}"]
    lines += [repr(float(t)) for t in p.flatten()]
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> tuple[MlpParams, int | None]:
    text = Path(path).read_text().splitlines()
    header = dict(item.split("=", 1) for item in text[0].lstrip("# ").split())
    m, n = int(header["m"]), int(header["n"])
    seed = int(header["seed"]) if header.get("seed") else None
    theta = np.array([float(t) for t in text[1:] if t.strip()])
    return MlpParams.unflatten(theta, m, n), seed
