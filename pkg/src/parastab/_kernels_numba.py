"""Jit-compiled time-stepping kernels.

All loops are written against raw arrays so the same signatures can be served
by the numpy fallbacks in ``_kernels_numpy``.  Band triplets (dl, d, du) follow
the usual convention: dl[i] multiplies x[i-1] in row i (dl[0] unused), du[i]
multiplies x[i+1] (du[n-1] unused).

Scheme encoding: ``use_cn`` False means backward Euler in the linear part,
True means the trapezoid variant.  The nonlinear substep solves
z = v + dt*f(z) pointwise by a scalar Newton iteration; f is the normalized
polynomial c2*y^2 + c3*y^3 + c4*y^4.

fastmath stays off: reports must be reproducible run to run.
"""

import numpy as np
from numba import njit

NEWTON_TOL = 1e-14
NEWTON_MAXIT = 60


@njit(cache=True)
def thomas_prep(dl, d, du):
    n = d.shape[0]
    cp = np.zeros(n)
    denom = np.zeros(n)
    denom[0] = d[0]
    if denom[0] != 0.0 and n > 1:
        cp[0] = du[0] / denom[0]
    for i in range(1, n):
        denom[i] = d[i] - dl[i] * cp[i - 1]
        if i < n - 1 and denom[i] != 0.0:
            cp[i] = du[i] / denom[i]
    return cp, denom


@njit(cache=True)
def thomas_solve(dl, cp, denom, b, out):
    n = b.shape[0]
    out[0] = b[0] / denom[0]
    for i in range(1, n):
        out[i] = (b[i] - dl[i] * out[i - 1]) / denom[i]
    for i in range(n - 2, -1, -1):
        out[i] = out[i] - cp[i] * out[i + 1]


@njit(cache=True)
def _newton_scalar(v, dt, c2, c3, c4):
    z = v
    for _ in range(NEWTON_MAXIT):
        z2 = z * z
        f = c2 * z2 + c3 * z2 * z + c4 * z2 * z2
        fp = 2.0 * c2 * z + 3.0 * c3 * z2 + 4.0 * c4 * z2 * z
        gp = 1.0 - dt * fp
        if gp == 0.0:
            return z, False
        dz = (z - dt * f - v) / gp
        z = z - dz
        if abs(dz) <= NEWTON_TOL * (1.0 + abs(z)):
            return z, True
    return z, False


@njit(cache=True)
def forward_poly_1d(y0, U, Bmat, sdl, sd, sdu, adl, ad, adu, use_cn,
                    c2, c3, c4, dt, guard_limit, w):
    """Nonlinear forward sweep on a 1d mesh.

    Returns (Y, status, kbad): status 0 ok, 1 blow-up, 2 pointwise Newton
    failure; kbad is the offending step index (-1 when ok).
    """
    nsteps = U.shape[0] - 1
    n = y0.shape[0]
    m = Bmat.shape[1]
    Y = np.zeros((nsteps + 1, n))
    for i in range(n):
        Y[0, i] = y0[i]
    cp, denom = thomas_prep(sdl, sd, sdu)
    rhs = np.empty(n)
    z = np.empty(n)
    for k in range(1, nsteps + 1):
        if use_cn:
            for i in range(n):
                acc = ad[i] * Y[k - 1, i]
                if i > 0:
                    acc += adl[i] * Y[k - 1, i - 1]
                if i < n - 1:
                    acc += adu[i] * Y[k - 1, i + 1]
                rhs[i] = acc
        else:
            for i in range(n):
                rhs[i] = Y[k - 1, i]
        for j in range(m):
            ukj = U[k, j]
            if ukj != 0.0:
                for i in range(n):
                    rhs[i] += dt * Bmat[i, j] * ukj
        thomas_solve(sdl, cp, denom, rhs, z)
        nrm2 = 0.0
        for i in range(n):
            zi, ok = _newton_scalar(z[i], dt, c2, c3, c4)
            if not ok:
                return Y, 2, k
            Y[k, i] = zi
            nrm2 += w[i] * zi * zi
        if not np.isfinite(nrm2) or nrm2 > guard_limit:
            return Y, 1, k
    return Y, 0, -1


@njit(cache=True)
def adjoint_1d(src, fp, sdl, sd, sdu, adl, ad, adu, use_cn, dt):
    """Generic backward sweep (exact transpose of the linearized step).

    src is the already-weighted running source, fp the frozen pointwise
    derivative f'(ybar_k).  Returns (Q, W): Q[k] holds the smoothed adjoint
    sample for k >= 1 and the initial-time multiplier at k = 0; W[k] holds the
    pre-smoothing product used as the curvature weight.
    """
    np1, n = src.shape
    nsteps = np1 - 1
    Q = np.zeros((np1, n))
    W = np.zeros((np1, n))
    cp, denom = thomas_prep(sdl, sd, sdu)
    phi = np.empty(n)
    tmp = np.empty(n)
    q = np.empty(n)
    for i in range(n):
        phi[i] = dt * src[nsteps, i]
    for k in range(nsteps, 0, -1):
        for i in range(n):
            tmp[i] = phi[i] / (1.0 - dt * fp[k, i])
            W[k, i] = tmp[i]
        thomas_solve(sdl, cp, denom, tmp, q)
        for i in range(n):
            Q[k, i] = q[i]
        if use_cn:
            for i in range(n):
                acc = ad[i] * q[i]
                if i > 0:
                    acc += adl[i] * q[i - 1]
                if i < n - 1:
                    acc += adu[i] * q[i + 1]
                phi[i] = acc + dt * src[k - 1, i]
        else:
            for i in range(n):
                phi[i] = q[i] + dt * src[k - 1, i]
    for i in range(n):
        Q[0, i] = phi[i]
        W[0, i] = phi[i]
    return Q, W


@njit(cache=True)
def linforward_1d(dy0, dU, rsrc, fp, Bmat, sdl, sd, sdu, adl, ad, adu,
                  use_cn, dt):
    """Forward sweep of the dynamics linearized around a frozen trajectory."""
    nsteps = dU.shape[0] - 1
    n = dy0.shape[0]
    m = Bmat.shape[1]
    dY = np.zeros((nsteps + 1, n))
    for i in range(n):
        dY[0, i] = dy0[i]
    cp, denom = thomas_prep(sdl, sd, sdu)
    rhs = np.empty(n)
    z = np.empty(n)
    for k in range(1, nsteps + 1):
        if use_cn:
            for i in range(n):
                acc = ad[i] * dY[k - 1, i]
                if i > 0:
                    acc += adl[i] * dY[k - 1, i - 1]
                if i < n - 1:
                    acc += adu[i] * dY[k - 1, i + 1]
                rhs[i] = acc
        else:
            for i in range(n):
                rhs[i] = dY[k - 1, i]
        for j in range(m):
            dukj = dU[k, j]
            if dukj != 0.0:
                for i in range(n):
                    rhs[i] += dt * Bmat[i, j] * dukj
        for i in range(n):
            rhs[i] += dt * rsrc[k, i]
        thomas_solve(sdl, cp, denom, rhs, z)
        for i in range(n):
            dY[k, i] = z[i] / (1.0 - dt * fp[k, i])
    return dY


# ---------------------------------------------------------------------------
# 2d kernels: the operator is the tensor sum of two band triplets plus a
# scalar shift; shifted systems are solved by weighted conjugate gradients.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _apply_a2(x2, txdl, txd, txdu, tydl, tyd, tydu, cshift, out2):
    nx, ny = x2.shape
    for i in range(nx):
        for j in range(ny):
            acc = (txd[i] + tyd[j] + cshift) * x2[i, j]
            if i > 0:
                acc += txdl[i] * x2[i - 1, j]
            if i < nx - 1:
                acc += txdu[i] * x2[i + 1, j]
            if j > 0:
                acc += tydl[j] * x2[i, j - 1]
            if j < ny - 1:
                acc += tydu[j] * x2[i, j + 1]
            out2[i, j] = acc


@njit(cache=True)
def cg_shift_2d(a0, a1, txdl, txd, txdu, tydl, tyd, tydu, cshift,
                b2, w2, x2, tol_rel, maxiter):
    """Solve (a0*I + a1*A2) x = b by CG in the mass inner product.

    x2 doubles as the initial guess and the output.  Returns (iters, ok).
    """
    nx, ny = b2.shape
    r = np.empty((nx, ny))
    p = np.empty((nx, ny))
    ap = np.empty((nx, ny))
    _apply_a2(x2, txdl, txd, txdu, tydl, tyd, tydu, cshift, ap)
    bnorm2 = 0.0
    rr = 0.0
    for i in range(nx):
        for j in range(ny):
            r[i, j] = b2[i, j] - (a0 * x2[i, j] + a1 * ap[i, j])
            p[i, j] = r[i, j]
            rr += w2[i, j] * r[i, j] * r[i, j]
            bnorm2 += w2[i, j] * b2[i, j] * b2[i, j]
    tol2 = tol_rel * tol_rel * max(bnorm2, 1e-300)
    if rr <= tol2:
        return 0, True
    for it in range(maxiter):
        _apply_a2(p, txdl, txd, txdu, tydl, tyd, tydu, cshift, ap)
        pap = 0.0
        for i in range(nx):
            for j in range(ny):
                ap[i, j] = a0 * p[i, j] + a1 * ap[i, j]
                pap += w2[i, j] * p[i, j] * ap[i, j]
        if pap <= 0.0:
            return it, False
        alpha = rr / pap
        rrnew = 0.0
        for i in range(nx):
            for j in range(ny):
                x2[i, j] += alpha * p[i, j]
                r[i, j] -= alpha * ap[i, j]
                rrnew += w2[i, j] * r[i, j] * r[i, j]
        if rrnew <= tol2:
            return it + 1, True
        beta = rrnew / rr
        rr = rrnew
        for i in range(nx):
            for j in range(ny):
                p[i, j] = r[i, j] + beta * p[i, j]
    return maxiter, False


@njit(cache=True)
def forward_poly_2d(y0, U, Bmat, txdl, txd, txdu, tydl, tyd, tydu, cshift,
                    use_cn, c2, c3, c4, dt, guard_limit, w2, lin_tol):
    """2d analogue of forward_poly_1d; status 3 flags a CG breakdown."""
    nsteps = U.shape[0] - 1
    nx = txd.shape[0]
    ny = tyd.shape[0]
    n = nx * ny
    m = Bmat.shape[1]
    theta = 0.5 if use_cn else 1.0
    Y = np.zeros((nsteps + 1, n))
    for i in range(n):
        Y[0, i] = y0[i]
    rhs = np.empty((nx, ny))
    z = np.empty((nx, ny))
    tmp = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            z[i, j] = y0[i * ny + j]
    for k in range(1, nsteps + 1):
        yprev = Y[k - 1].reshape(nx, ny)
        if use_cn:
            _apply_a2(yprev, txdl, txd, txdu, tydl, tyd, tydu, cshift, tmp)
            for i in range(nx):
                for j in range(ny):
                    rhs[i, j] = yprev[i, j] + 0.5 * dt * tmp[i, j]
        else:
            for i in range(nx):
                for j in range(ny):
                    rhs[i, j] = yprev[i, j]
        for jm in range(m):
            ukj = U[k, jm]
            if ukj != 0.0:
                for i in range(nx):
                    for j in range(ny):
                        rhs[i, j] += dt * Bmat[i * ny + j, jm] * ukj
        _, ok = cg_shift_2d(1.0, -theta * dt, txdl, txd, txdu, tydl, tyd,
                            tydu, cshift, rhs, w2, z, lin_tol, 40 * n)
        if not ok:
            return Y, 3, k
        nrm2 = 0.0
        for i in range(nx):
            for j in range(ny):
                zi, okn = _newton_scalar(z[i, j], dt, c2, c3, c4)
                if not okn:
                    return Y, 2, k
                Y[k, i * ny + j] = zi
                z[i, j] = zi
                nrm2 += w2[i, j] * zi * zi
        if not np.isfinite(nrm2) or nrm2 > guard_limit:
            return Y, 1, k
    return Y, 0, -1


@njit(cache=True)
def adjoint_2d(src, fp, txdl, txd, txdu, tydl, tyd, tydu, cshift,
               use_cn, dt, w2, lin_tol):
    np1, n = src.shape
    nsteps = np1 - 1
    nx = txd.shape[0]
    ny = tyd.shape[0]
    theta = 0.5 if use_cn else 1.0
    Q = np.zeros((np1, n))
    W = np.zeros((np1, n))
    phi = np.empty((nx, ny))
    tmp = np.empty((nx, ny))
    q = np.zeros((nx, ny))
    app = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            phi[i, j] = dt * src[nsteps, i * ny + j]
    ok_all = True
    for k in range(nsteps, 0, -1):
        for i in range(nx):
            for j in range(ny):
                tmp[i, j] = phi[i, j] / (1.0 - dt * fp[k, i * ny + j])
                W[k, i * ny + j] = tmp[i, j]
        _, ok = cg_shift_2d(1.0, -theta * dt, txdl, txd, txdu, tydl, tyd,
                            tydu, cshift, tmp, w2, q, lin_tol, 40 * n)
        if not ok:
            ok_all = False
        for i in range(nx):
            for j in range(ny):
                Q[k, i * ny + j] = q[i, j]
        if use_cn:
            _apply_a2(q, txdl, txd, txdu, tydl, tyd, tydu, cshift, app)
            for i in range(nx):
                for j in range(ny):
                    phi[i, j] = q[i, j] + 0.5 * dt * app[i, j] \
                        + dt * src[k - 1, i * ny + j]
        else:
            for i in range(nx):
                for j in range(ny):
                    phi[i, j] = q[i, j] + dt * src[k - 1, i * ny + j]
    for i in range(nx):
        for j in range(ny):
            Q[0, i * ny + j] = phi[i, j]
            W[0, i * ny + j] = phi[i, j]
    return Q, W, ok_all


@njit(cache=True)
def linforward_2d(dy0, dU, rsrc, fp, Bmat, txdl, txd, txdu, tydl, tyd, tydu,
                  cshift, use_cn, dt, w2, lin_tol):
    nsteps = dU.shape[0] - 1
    nx = txd.shape[0]
    ny = tyd.shape[0]
    n = nx * ny
    m = Bmat.shape[1]
    theta = 0.5 if use_cn else 1.0
    dY = np.zeros((nsteps + 1, n))
    for i in range(n):
        dY[0, i] = dy0[i]
    rhs = np.empty((nx, ny))
    z = np.zeros((nx, ny))
    tmp = np.empty((nx, ny))
    ok_all = True
    for k in range(1, nsteps + 1):
        yprev = dY[k - 1].reshape(nx, ny)
        if use_cn:
            _apply_a2(yprev, txdl, txd, txdu, tydl, tyd, tydu, cshift, tmp)
            for i in range(nx):
                for j in range(ny):
                    rhs[i, j] = yprev[i, j] + 0.5 * dt * tmp[i, j]
        else:
            for i in range(nx):
                for j in range(ny):
                    rhs[i, j] = yprev[i, j]
        for jm in range(m):
            dukj = dU[k, jm]
            if dukj != 0.0:
                for i in range(nx):
                    for j in range(ny):
                        rhs[i, j] += dt * Bmat[i * ny + j, jm] * dukj
        for i in range(nx):
            for j in range(ny):
                rhs[i, j] += dt * rsrc[k, i * ny + j]
        _, ok = cg_shift_2d(1.0, -theta * dt, txdl, txd, txdu, tydl, tyd,
                            tydu, cshift, rhs, w2, z, lin_tol, 40 * n)
        if not ok:
            ok_all = False
        for i in range(nx):
            for j in range(ny):
                dY[k, i * ny + j] = z[i, j] / (1.0 - dt * fp[k, i * ny + j])
                z[i, j] = dY[k, i * ny + j]
    return dY, ok_all
