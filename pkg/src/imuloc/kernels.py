"""Hot numeric kernels, in numba and pure-numpy variants.

The public names (``integrate_forward``, ``integrate_backward``,
``fb_loss_grad``, ``l1_distances``) dispatch to the numba build unless
``IMULOC_NO_NUMBA=1`` (see :mod:`imuloc.backend`).  Both variants are kept
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.

Integration scheme (velocity updated first, new velocity moves position):

    v[k+1] = v[k] + a[k] * dt[k]
    x[k+1] = x[k] + v[k+1] * dt[k]

and its exact inverse for the backward pass:

    v[k] = v[k+1] - a[k] * dt[k]
    x[k] = x[k+1] - v[k+1] * dt[k]

``fb_loss_grad`` evaluates the correction objective

    wx * Lx + wv * Lv + wr * Lreg

where Lx and Lv are mean squared forward/backward position and velocity
misalignments over the N+1 states and Lreg is the mean squared correction
over the N steps.  States flagged in ``anchor_mask`` replace their Lx term
with ``|xF - anchor|^2 + |xB - anchor|^2`` (model-anchored refinement).
Means rather than raw sums keep plain gradient descent stable at the
default learning rate for any segment length; with raw sums the
regularizer alone sits exactly at the divergence boundary (see README).
The gradient is exact reverse accumulation through the two linear
recurrences.
"""
from __future__ import annotations

import numpy as np

from .backend import NUMBA_ENABLED, njit, prange

# ---------------------------------------------------------------------------
# pure-numpy variants (cumulative-sum formulations)
# ---------------------------------------------------------------------------


def integrate_forward_np(accel: np.ndarray, dt: np.ndarray, x0: np.ndarray,
                         v0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, d = accel.shape
    v = np.empty((n + 1, d))
    x = np.empty((n + 1, d))
    v[0] = v0
    x[0] = x0
    v[1:] = v0 + np.cumsum(accel * dt[:, None], axis=0)
    x[1:] = x0 + np.cumsum(v[1:] * dt[:, None], axis=0)
    return x, v


def integrate_backward_np(accel: np.ndarray, dt: np.ndarray, xn: np.ndarray,
                          vn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, d = accel.shape
    v = np.empty((n + 1, d))
    x = np.empty((n + 1, d))
    v[n] = vn
    x[n] = xn
    v[:-1] = vn - np.cumsum((accel * dt[:, None])[::-1], axis=0)[::-1]
    x[:-1] = xn - np.cumsum((v[1:] * dt[:, None])[::-1], axis=0)[::-1]
    return x, v


def fb_loss_grad_np(cor, accel, dt, x0, v0, xn, vn, wx, wv, wr,
                    anchors, anchor_mask):
    n, d = accel.shape
    at = accel + cor
    xf, vf = integrate_forward_np(at, dt, x0, v0)
    xb, vb = integrate_backward_np(at, dt, xn, vn)
    nx = float(n + 1)

    dv = vf - vb
    lv = np.sum(dv * dv) / nx
    lr = np.sum(cor * cor) / n
    dvf = (2.0 * wv / nx) * dv
    dvb = -dvf

    mask = anchor_mask[:, None]
    diff_p = xf - xb
    diff_fa = xf - anchors
    diff_ba = xb - anchors
    lx = np.sum(np.where(mask, diff_fa ** 2 + diff_ba ** 2, diff_p ** 2)) / nx
    dxf = np.where(mask, diff_fa, diff_p) * (2.0 * wx / nx)
    dxb = np.where(mask, diff_ba, -diff_p) * (2.0 * wx / nx)

    # reverse sweep through the forward recurrence
    dt_state = np.zeros(n + 1)
    dt_state[1:] = dt
    xbar = np.cumsum(dxf[::-1], axis=0)[::-1]
    vbar = np.cumsum((dvf + xbar * dt_state[:, None])[::-1], axis=0)[::-1]
    grad = vbar[1:] * dt[:, None]

    # forward sweep through the backward recurrence
    xbarb = np.cumsum(dxb, axis=0)
    shift = np.zeros((n + 1, d))
    if n:
        shift[1:] = np.cumsum(xbarb[:-1] * dt[:, None], axis=0)
    vbarb = np.cumsum(dvb, axis=0) - shift
    grad -= vbarb[:-1] * dt[:, None]

    grad += (2.0 * wr / n) * cor
    total = wx * lx + wv * lv + wr * lr
    return total, lx, lv, lr, grad


def l1_distances_np(queries: np.ndarray, train: np.ndarray) -> np.ndarray:
    nq = queries.shape[0]
    out = np.empty((nq, train.shape[0]))
    # chunk queries to cap the broadcast temporary near 200 MB
    chunk = max(1, int(2e8 / max(1, train.size * 8)))
    for i in range(0, nq, chunk):
        out[i:i + chunk] = np.abs(
            queries[i:i + chunk, None, :] - train[None, :, :]).sum(axis=-1)
    return out


# ---------------------------------------------------------------------------
# numba variants (fused loops; no-op shim makes these plain python otherwise)
# ---------------------------------------------------------------------------


@njit(cache=True)
def integrate_forward_nb(accel, dt, x0, v0):
    n, d = accel.shape
    x = np.empty((n + 1, d))
    v = np.empty((n + 1, d))
    for j in range(d):
        x[0, j] = x0[j]
        v[0, j] = v0[j]
    for k in range(n):
        for j in range(d):
            v[k + 1, j] = v[k, j] + accel[k, j] * dt[k]
            x[k + 1, j] = x[k, j] + v[k + 1, j] * dt[k]
    return x, v


@njit(cache=True)
def integrate_backward_nb(accel, dt, xn, vn):
    n, d = accel.shape
    x = np.empty((n + 1, d))
    v = np.empty((n + 1, d))
    for j in range(d):
        x[n, j] = xn[j]
        v[n, j] = vn[j]
    for k in range(n - 1, -1, -1):
        for j in range(d):
            v[k, j] = v[k + 1, j] - accel[k, j] * dt[k]
            x[k, j] = x[k + 1, j] - v[k + 1, j] * dt[k]
    return x, v


@njit(cache=True)
def fb_loss_grad_nb(cor, accel, dt, x0, v0, xn, vn, wx, wv, wr,
                    anchors, anchor_mask):
    n, d = accel.shape
    xf = np.empty((n + 1, d))
    vf = np.empty((n + 1, d))
    xb = np.empty((n + 1, d))
    vb = np.empty((n + 1, d))
    for j in range(d):
        xf[0, j] = x0[j]
        vf[0, j] = v0[j]
        xb[n, j] = xn[j]
        vb[n, j] = vn[j]
    for k in range(n):
        for j in range(d):
            a = accel[k, j] + cor[k, j]
            vf[k + 1, j] = vf[k, j] + a * dt[k]
            xf[k + 1, j] = xf[k, j] + vf[k + 1, j] * dt[k]
    for k in range(n - 1, -1, -1):
        for j in range(d):
            a = accel[k, j] + cor[k, j]
            vb[k, j] = vb[k + 1, j] - a * dt[k]
            xb[k, j] = xb[k + 1, j] - vb[k + 1, j] * dt[k]

    nx = float(n + 1)
    lx = 0.0
    lv = 0.0
    lr = 0.0
    dxf = np.empty((n + 1, d))
    dxb = np.empty((n + 1, d))
    dvf = np.empty((n + 1, d))
    dvb = np.empty((n + 1, d))
    for i in range(n + 1):
        for j in range(d):
            dv = vf[i, j] - vb[i, j]
            lv += dv * dv
            dvf[i, j] = 2.0 * wv * dv / nx
            dvb[i, j] = -dvf[i, j]
            if anchor_mask[i]:
                fa = xf[i, j] - anchors[i, j]
                ba = xb[i, j] - anchors[i, j]
                lx += fa * fa + ba * ba
                dxf[i, j] = 2.0 * wx * fa / nx
                dxb[i, j] = 2.0 * wx * ba / nx
            else:
                dp = xf[i, j] - xb[i, j]
                lx += dp * dp
                dxf[i, j] = 2.0 * wx * dp / nx
                dxb[i, j] = -dxf[i, j]
    lx /= nx
    lv /= nx
    for k in range(n):
        for j in range(d):
            lr += cor[k, j] * cor[k, j]
    lr /= n

    grad = np.zeros((n, d))
    xbar = np.zeros(d)
    vbar = np.zeros(d)
    for i in range(n, 0, -1):
        for j in range(d):
            xbar[j] += dxf[i, j]
            vbar[j] += dvf[i, j] + xbar[j] * dt[i - 1]
            grad[i - 1, j] += vbar[j] * dt[i - 1]
    xbarb = np.zeros(d)
    vbarb = np.zeros(d)
    for i in range(n + 1):
        for j in range(d):
            if i > 0:
                vbarb[j] += dvb[i, j] - xbarb[j] * dt[i - 1]
            else:
                vbarb[j] = dvb[0, j]
            xbarb[j] += dxb[i, j]
            if i < n:
                grad[i, j] -= vbarb[j] * dt[i]
    for k in range(n):
        for j in range(d):
            grad[k, j] += 2.0 * wr * cor[k, j] / n

    total = wx * lx + wv * lv + wr * lr
    return total, lx, lv, lr, grad


@njit(cache=True, parallel=True)
def l1_distances_nb(queries, train):
    nq, f = queries.shape
    nt = train.shape[0]
    out = np.empty((nq, nt))
    for i in prange(nq):
        for s in range(nt):
            acc = 0.0
            for k in range(f):
                acc += abs(queries[i, k] - train[s, k])
            out[i, s] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    integrate_forward = integrate_forward_nb
    integrate_backward = integrate_backward_nb
    fb_loss_grad = fb_loss_grad_nb
    l1_distances = l1_distances_nb
else:
    integrate_forward = integrate_forward_np
    integrate_backward = integrate_backward_np
    fb_loss_grad = fb_loss_grad_np
    l1_distances = l1_distances_np
