"""Pure numpy versions of the compiled kernels (same signatures as ``_core``)."""

from __future__ import annotations

import numpy as np


def _monomials(y, coef, group, ptr, var, exp, scales):
    B = y.shape[0]
    M = coef.shape[0]
    vals = np.broadcast_to(coef * scales[group], (B, M)).copy()
    if M == 0:
        return vals
    nf = np.diff(ptr)
    owner = np.repeat(np.arange(M), nf)
    if owner.size:
        factors = y[:, var] ** exp  # (B, F)
        # multiply factors into their monomials; at most max(nf) factors each
        for slot in range(int(nf.max())):
            sel = ptr[:-1] + slot < ptr[1:]
            idx = ptr[:-1][sel] + slot
            vals[:, owner[idx]] *= factors[:, idx]
    return vals


def evaluate(y, coef, target, group, ptr, var, exp, scales):
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _monomials(y, coef, group, ptr, var, exp, scales).sum(axis=1)


def vector_field(y, coef, target, group, ptr, var, exp, scales):
    y = np.ascontiguousarray(y, dtype=np.float64)
    B, D = y.shape
    if coef.shape[0] == 0 or D == 0:
        return np.zeros((B, D))
    vals = _monomials(y, coef, group, ptr, var, exp, scales)
    scatter = np.zeros((coef.shape[0], D))
    scatter[np.arange(coef.shape[0]), target] = 1.0
    return vals @ scatter


def gauss_step(y, dt, A, bw, coef, target, group, ptr, var, exp, scales, tol, maxit):
    y = np.ascontiguousarray(y, dtype=np.float64)
    B, D = y.shape
    s = bw.shape[0]
    field = (coef, target, group, ptr, var, exp, scales)
    f0 = vector_field(y, *field)
    K = np.repeat(f0[:, None, :], s, axis=1)  # (B, s, D)
    iters = np.zeros(B, dtype=np.intp)
    resid = np.zeros(B)
    active = np.arange(B)
    done = np.zeros(B, dtype=bool)
    it = 0
    while active.size and it < maxit:
        it += 1
        Ka = K[active]
        Kn = np.empty_like(Ka)
        for i in range(s):
            Yi = y[active] + dt * np.einsum("j,bjd->bd", A[i], Ka)
            Kn[:, i, :] = vector_field(Yi, *field)
        err = np.abs(dt * (Kn - Ka)).reshape(active.size, -1).max(axis=1) if D else np.zeros(active.size)
        K[active] = Kn
        resid[active] = err
        conv = err <= tol
        iters[active[conv]] = it
        done[active[conv]] = True
        active = active[~conv]
    iters[~done] = -1
    ynew = y + dt * np.einsum("i,bid->bd", bw, K)
    return ynew, iters, resid
