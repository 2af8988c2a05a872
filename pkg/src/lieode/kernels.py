"""Compiled collocation loss and optimiser loops.

The right-hand side and its Jacobian are turned into scalar Python source
and compiled with numba together with the loss/gradient routine, so a
training iteration costs a few microseconds.  The optimiser loops are plain
Python functions; they run as-is on top of the numpy loss (for checking)
and are jitted for the compiled loss.

Loss/gradient callables have the signature ``loss_grad(theta, grad) -> L``
and fill ``grad`` in place.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from . import expr as ex
from .problem import IvpSystem

# optimiser exit status
OK = 0
DIVERGED = 1
STALLED = 2

_MATH = {"sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
         "log": math.log, "sqrt": math.sqrt}


def rhs_jac_source(system: IvpSystem) -> str:
    """Source of ``rhs_jac(y, out, J)``: f(y) into out, df/dy_unknowns into J."""
    names = {v: f"y[{i}]" for i, v in enumerate(system.variables)}
    lines = ["def rhs_jac(y, out, J):"]
    for i, f in enumerate(system.rhs):
        lines.append(f"    out[{i}] = {ex.to_python(f, names, scalar=True)}")
    for i, f in enumerate(system.rhs):
        for slot, j in enumerate(system.unknowns):
            d = ex.diff(f, system.variables[j])
            lines.append(f"    J[{i}, {slot}] = {ex.to_python(d, names, scalar=True)}")
    return "\n".join(lines) + "\n"


def compile_rhs_jac(system: IvpSystem):
    ns = dict(_MATH)
    exec(rhs_jac_source(system), ns)  # noqa: S102 - source generated from our AST
    return numba.njit(error_model="numpy")(ns["rhs_jac"])


def compiled_loss_grad(system: IvpSystem, grid, ybar, dybar, m: int, boundary=None):
    """Jitted ``loss_grad(theta, grad)`` for one problem and grid.

    ``boundary`` is ``(point, component, value, weight, ybar_at_point)`` or None.
    """
    rhs_jac = compile_rhs_jac(system)
    X = np.ascontiguousarray(grid, dtype=float)
    YB = np.ascontiguousarray(ybar, dtype=float)
    DYB = np.ascontiguousarray(dybar, dtype=float)
    unk = np.array(system.unknowns, dtype=np.int64)
    n = len(unk)
    dim = system.dim
    slot_of = -np.ones(dim, dtype=np.int64)
    slot_of[unk] = np.arange(n)
    if boundary is None:
        bnd = np.zeros(6)
    else:
        point, comp, value, weight, ybar_b = boundary
        bnd = np.array([1.0, point, float(slot_of[comp]), value, weight, ybar_b])

    @numba.njit(error_model="numpy")
    def loss_grad(th, grad):
        K = X.shape[0]
        P = th.shape[0]
        w = th[:m]
        b = th[m:2 * m]
        v = th[2 * m:2 * m + n * m].reshape((n, m))
        c = th[2 * m + n * m:]
        grad[:] = 0.0
        total = 0.0
        y = np.empty(dim)
        fo = np.empty(dim)
        J = np.zeros((dim, n))
        s = np.empty(m)
        s1 = np.empty(m)
        s2 = np.empty(m)
        N = np.empty(n)
        dN = np.empty(n)
        JN = np.zeros((n, P))
        JdN = np.zeros((n, P))
        for k in range(K):
            x = X[k]
            for i in range(m):
                si = 1.0 / (1.0 + math.exp(-(x * w[i] + b[i])))
                s[i] = si
                s1[i] = si * (1.0 - si)
                s2[i] = s1[i] * (1.0 - 2.0 * si)
            for j in range(n):
                acc = c[j]
                acc2 = 0.0
                for i in range(m):
                    acc += v[j, i] * s[i]
                    acc2 += v[j, i] * s1[i] * w[i]
                N[j] = acc
                dN[j] = acc2
            for d in range(dim):
                y[d] = YB[k, d]
            for j in range(n):
                y[unk[j]] += x * N[j]
            rhs_jac(y, fo, J)
            for j in range(n):
                for i in range(m):
                    JN[j, i] = v[j, i] * s1[i] * x
                    JN[j, m + i] = v[j, i] * s1[i]
                    JdN[j, i] = v[j, i] * (s2[i] * w[i] * x + s1[i])
                    JdN[j, m + i] = v[j, i] * s2[i] * w[i]
                    JN[j, 2 * m + j * m + i] = s[i]
                    JdN[j, 2 * m + j * m + i] = s1[i] * w[i]
                JN[j, 2 * m + n * m + j] = 1.0
            for d in range(dim):
                slot = slot_of[d]
                r = DYB[k, d] - fo[d]
                if slot >= 0:
                    r += N[slot] + x * dN[slot]
                total += r * r
                scale = 2.0 * r / K
                for p in range(P):
                    dr = 0.0
                    if slot >= 0:
                        dr = JN[slot, p] + x * JdN[slot, p]
                    for j in range(n):
                        dr -= J[d, j] * x * JN[j, p]
                    grad[p] += scale * dr
        total /= K
        if bnd[0] > 0.0:
            xb = bnd[1]
            sb = int(bnd[2])
            acc = c[sb]
            for i in range(m):
                si = 1.0 / (1.0 + math.exp(-(xb * w[i] + b[i])))
                acc += v[sb, i] * si
            gap = bnd[5] + xb * acc - bnd[3]
            total += bnd[4] * gap * gap
            coef = 2.0 * bnd[4] * gap * xb
            for i in range(m):
                si = 1.0 / (1.0 + math.exp(-(xb * w[i] + b[i])))
                d1 = si * (1.0 - si)
                grad[i] += coef * v[sb, i] * d1 * xb
                grad[m + i] += coef * v[sb, i] * d1
                grad[2 * m + sb * m + i] += coef * si
            grad[2 * m + n * m + sb] += coef
        return total

    return loss_grad


# ---------------------------------------------------------------------------
# optimiser loops (shared by the numpy and compiled paths)


def adam_loop(loss_grad, th, m1, m2, step, loss, grad, eta, iters, target, traj, offset,
              best, best_loss):
    """Run up to ``iters`` Adam steps in place.

    Returns (loss, done, status, step, best_loss).  ``loss``/``grad`` must
    belong to the current ``th``.  ``traj[offset + k]`` receives the loss
    after step k (k = 1..done); ``best`` holds the lowest-loss iterate seen.
    """
    b1, b2, eps = 0.9, 0.999, 1e-8
    done = 0
    status = OK
    while done < iters and loss > target:
        step += 1
        done += 1
        m1[:] = b1 * m1 + (1.0 - b1) * grad
        m2[:] = b2 * m2 + (1.0 - b2) * grad * grad
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step
        th[:] = th - eta * (m1 / c1) / (np.sqrt(m2 / c2) + eps)
        loss = loss_grad(th, grad)
        traj[offset + done] = loss
        if not (loss <= 1e12):  # also catches nan
            status = DIVERGED
            break
        if loss < best_loss:
            best_loss = loss
            best[:] = th
    return loss, done, status, step, best_loss


def gd_loop(loss_grad, th, loss, grad, eta, iters, target, traj, offset, cand, cgrad):
    """Gradient descent that halves ``eta`` and keeps ``th`` when a step raises the loss.

    Returns (loss, done, status, eta).
    """
    done = 0
    status = OK
    while done < iters and loss > target:
        done += 1
        cand[:] = th - eta * grad
        closs = loss_grad(cand, cgrad)
        if closs <= loss:  # false for nan
            th[:] = cand
            grad[:] = cgrad
            loss = closs
        else:
            eta *= 0.5
            if eta < 1e-300:
                traj[offset + done] = loss
                status = STALLED
                break
        traj[offset + done] = loss
    return loss, done, status, eta


adam_loop_jit = numba.njit(error_model="numpy")(adam_loop)
gd_loop_jit = numba.njit(error_model="numpy")(gd_loop)
