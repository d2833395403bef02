"""Pure-numpy fallbacks mirroring the jit kernel signatures.

Banded systems go through scipy's LAPACK wrapper instead of the hand-rolled
Thomas sweep, so trajectories agree with the jit path to roundoff rather than
bit-for-bit.  The pointwise Newton iteration freezes converged nodes exactly
like the scalar loop does.
"""

import numpy as np
from scipy.linalg import solve_banded

NEWTON_TOL = 1e-14
NEWTON_MAXIT = 60


def _ab(dl, d, du):
    n = d.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = du[:-1]
    ab[1, :] = d
    ab[2, :-1] = dl[1:]
    return ab


def _apply_band(dl, d, du, x):
    out = d * x
    out[1:] += dl[1:] * x[:-1]
    out[:-1] += du[:-1] * x[1:]
    return out


def _newton_vec(v, dt, c2, c3, c4):
    z = v.copy()
    active = np.ones(v.shape, dtype=bool)
    for _ in range(NEWTON_MAXIT):
        za = z[active]
        z2 = za * za
        f = c2 * z2 + c3 * z2 * za + c4 * z2 * z2
        fp = 2.0 * c2 * za + 3.0 * c3 * z2 + 4.0 * c4 * z2 * za
        gp = 1.0 - dt * fp
        if np.any(gp == 0.0):
            return z, False
        dz = (za - dt * f - v[active]) / gp
        za = za - dz
        z[active] = za
        done = np.abs(dz) <= NEWTON_TOL * (1.0 + np.abs(za))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            return z, True
    return z, False


def forward_poly_1d(y0, U, Bmat, sdl, sd, sdu, adl, ad, adu, use_cn,
                    c2, c3, c4, dt, guard_limit, w):
    nsteps = U.shape[0] - 1
    n = y0.shape[0]
    Y = np.zeros((nsteps + 1, n))
    Y[0] = y0
    ab = _ab(sdl, sd, sdu)
    for k in range(1, nsteps + 1):
        if use_cn:
            rhs = _apply_band(adl, ad, adu, Y[k - 1])
        else:
            rhs = Y[k - 1].copy()
        rhs += dt * (Bmat @ U[k])
        z = solve_banded((1, 1), ab, rhs)
        yk, ok = _newton_vec(z, dt, c2, c3, c4)
        if not ok:
            return Y, 2, k
        Y[k] = yk
        nrm2 = float(w @ (yk * yk))
        if not np.isfinite(nrm2) or nrm2 > guard_limit:
            return Y, 1, k
    return Y, 0, -1


def adjoint_1d(src, fp, sdl, sd, sdu, adl, ad, adu, use_cn, dt):
    np1, n = src.shape
    nsteps = np1 - 1
    Q = np.zeros((np1, n))
    W = np.zeros((np1, n))
    ab = _ab(sdl, sd, sdu)
    phi = dt * src[nsteps].copy()
    for k in range(nsteps, 0, -1):
        tmp = phi / (1.0 - dt * fp[k])
        W[k] = tmp
        q = solve_banded((1, 1), ab, tmp)
        Q[k] = q
        if use_cn:
            phi = _apply_band(adl, ad, adu, q) + dt * src[k - 1]
        else:
            phi = q + dt * src[k - 1]
    Q[0] = phi
    W[0] = phi
    return Q, W


def linforward_1d(dy0, dU, rsrc, fp, Bmat, sdl, sd, sdu, adl, ad, adu,
                  use_cn, dt):
    nsteps = dU.shape[0] - 1
    n = dy0.shape[0]
    dY = np.zeros((nsteps + 1, n))
    dY[0] = dy0
    ab = _ab(sdl, sd, sdu)
    for k in range(1, nsteps + 1):
        if use_cn:
            rhs = _apply_band(adl, ad, adu, dY[k - 1])
        else:
            rhs = dY[k - 1].copy()
        rhs += dt * (Bmat @ dU[k]) + dt * rsrc[k]
        z = solve_banded((1, 1), ab, rhs)
        dY[k] = z / (1.0 - dt * fp[k])
    return dY


def _apply_a2_np(x2, txdl, txd, txdu, tydl, tyd, tydu, cshift):
    out = (txd[:, None] + tyd[None, :] + cshift) * x2
    out[1:, :] += txdl[1:, None] * x2[:-1, :]
    out[:-1, :] += txdu[:-1, None] * x2[1:, :]
    out[:, 1:] += tydl[None, 1:] * x2[:, :-1]
    out[:, :-1] += tydu[None, :-1] * x2[:, 1:]
    return out


def cg_shift_2d(a0, a1, txdl, txd, txdu, tydl, tyd, tydu, cshift,
                b2, w2, x2, tol_rel, maxiter):
    mv = lambda v: a0 * v + a1 * _apply_a2_np(v, txdl, txd, txdu,
                                              tydl, tyd, tydu, cshift)
    r = b2 - mv(x2)
    p = r.copy()
    rr = float((w2 * r * r).sum())
    bnorm2 = float((w2 * b2 * b2).sum())
    tol2 = tol_rel * tol_rel * max(bnorm2, 1e-300)
    if rr <= tol2:
        return 0, True
    for it in range(maxiter):
        ap = mv(p)
        pap = float((w2 * p * ap).sum())
        if pap <= 0.0:
            return it, False
        alpha = rr / pap
        x2 += alpha * p
        r -= alpha * ap
        rrnew = float((w2 * r * r).sum())
        if rrnew <= tol2:
            return it + 1, True
        beta = rrnew / rr
        rr = rrnew
        p = r + beta * p
    return maxiter, False


def forward_poly_2d(y0, U, Bmat, txdl, txd, txdu, tydl, tyd, tydu, cshift,
                    use_cn, c2, c3, c4, dt, guard_limit, w2, lin_tol):
    nsteps = U.shape[0] - 1
    nx = txd.shape[0]
    ny = tyd.shape[0]
    n = nx * ny
    theta = 0.5 if use_cn else 1.0
    Y = np.zeros((nsteps + 1, n))
    Y[0] = y0
    z = y0.reshape(nx, ny).copy()
    for k in range(1, nsteps + 1):
        yprev = Y[k - 1].reshape(nx, ny)
        if use_cn:
            rhs = yprev + 0.5 * dt * _apply_a2_np(yprev, txdl, txd, txdu,
                                                  tydl, tyd, tydu, cshift)
        else:
            rhs = yprev.copy()
        rhs += dt * (Bmat @ U[k]).reshape(nx, ny)
        _, ok = cg_shift_2d(1.0, -theta * dt, txdl, txd, txdu, tydl, tyd,
                            tydu, cshift, rhs, w2, z, lin_tol, 40 * n)
        if not ok:
            return Y, 3, k
        yk, okn = _newton_vec(z.ravel(), dt, c2, c3, c4)
        if not okn:
            return Y, 2, k
        Y[k] = yk
        z = yk.reshape(nx, ny).copy()
        nrm2 = float((w2.ravel() @ (yk * yk)))
        if not np.isfinite(nrm2) or nrm2 > guard_limit:
            return Y, 1, k
    return Y, 0, -1


def adjoint_2d(src, fp, txdl, txd, txdu, tydl, tyd, tydu, cshift,
               use_cn, dt, w2, lin_tol):
    np1, n = src.shape
    nsteps = np1 - 1
    nx = txd.shape[0]
    ny = tyd.shape[0]
    theta = 0.5 if use_cn else 1.0
    Q = np.zeros((np1, n))
    W = np.zeros((np1, n))
    phi = dt * src[nsteps].reshape(nx, ny).copy()
    q = np.zeros((nx, ny))
    ok_all = True
    for k in range(nsteps, 0, -1):
        tmp = phi / (1.0 - dt * fp[k].reshape(nx, ny))
        W[k] = tmp.ravel()
        _, ok = cg_shift_2d(1.0, -theta * dt, txdl, txd, txdu, tydl, tyd,
                            tydu, cshift, tmp, w2, q, lin_tol, 40 * n)
        if not ok:
            ok_all = False
        Q[k] = q.ravel()
        if use_cn:
            phi = q + 0.5 * dt * _apply_a2_np(q, txdl, txd, txdu, tydl, tyd,
                                              tydu, cshift) \
                + dt * src[k - 1].reshape(nx, ny)
        else:
            phi = q + dt * src[k - 1].reshape(nx, ny)
    Q[0] = phi.ravel()
    W[0] = phi.ravel()
    return Q, W, ok_all


def linforward_2d(dy0, dU, rsrc, fp, Bmat, txdl, txd, txdu, tydl, tyd, tydu,
                  cshift, use_cn, dt, w2, lin_tol):
    nsteps = dU.shape[0] - 1
    nx = txd.shape[0]
    ny = tyd.shape[0]
    n = nx * ny
    theta = 0.5 if use_cn else 1.0
    dY = np.zeros((nsteps + 1, n))
    dY[0] = dy0
    z = np.zeros((nx, ny))
    ok_all = True
    for k in range(1, nsteps + 1):
        yprev = dY[k - 1].reshape(nx, ny)
        if use_cn:
            rhs = yprev + 0.5 * dt * _apply_a2_np(yprev, txdl, txd, txdu,
                                                  tydl, tyd, tydu, cshift)
        else:
            rhs = yprev.copy()
        rhs += dt * (Bmat @ dU[k]).reshape(nx, ny)
        rhs += dt * rsrc[k].reshape(nx, ny)
        _, ok = cg_shift_2d(1.0, -theta * dt, txdl, txd, txdu, tydl, tyd,
                            tydu, cshift, rhs, w2, z, lin_tol, 40 * n)
        if not ok:
            ok_all = False
        dY[k] = z.ravel() / (1.0 - dt * fp[k])
        z = dY[k].reshape(nx, ny).copy()
    return dY, ok_all
