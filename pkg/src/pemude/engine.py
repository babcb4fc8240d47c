"""Compiled fixed-step kernels for the prediction-error corrected ODE.

The corrected right-hand side is

    F(x, t) = f(x, p, u(t)) + gain * (y_obs(t) - x) + scatter(corr(x))

integrated with classical RK4 on a uniform grid. Observations and stimulus
are pre-interpolated at the three distinct stage times of every step
(``t``, ``t + h/2``, ``t + h``), so ``ystage`` has shape ``(n_steps, 3, d)``.

Gradients of the discretised loss are exact: ``loss_grad`` runs the discrete
adjoint of the unrolled RK4 steps (reverse mode) and ``loss_grad_tangent``
propagates the full state sensitivity matrix (forward mode). Both must agree
with each other and with central differences.

A correction model is a pair of compiled functions with signatures

    eval(theta, meta, aux, x, out, work)
    vjp(theta, meta, aux, x, cot, xbar, tbar, work)   # accumulates into xbar, tbar

Two are provided: the RBF network (``net_eval``/``net_vjp``) and a sparse
polynomial over the state plus constant exogenous inputs
(``poly_eval``/``poly_vjp``).
"""

import numba as nb
import numpy as np

SENTINEL = 1e10


# ------------------------------------------------------------------ network
# meta = [n_in, h1, h2, n_out]; aux = [shift (n_in), scale (n_in), out_scale (n_out)]
# work needs at least n_in + 2*(h1 + h2)

@nb.njit(cache=True)
def net_eval(theta, meta, aux, x, out, work):
    n_in, h1, h2, n_out = meta[0], meta[1], meta[2], meta[3]
    ob1 = h1 * n_in
    ow2 = ob1 + h1
    ob2 = ow2 + h2 * h1
    ow3 = ob2 + h2
    ob3 = ow3 + n_out * h2
    xin = work[:n_in]
    a1 = work[n_in:n_in + h1]
    a2 = work[n_in + h1:n_in + h1 + h2]
    for i in range(n_in):
        xin[i] = (x[i] - aux[i]) / aux[n_in + i]
    for j in range(h1):
        z = theta[ob1 + j]
        for i in range(n_in):
            z += theta[j * n_in + i] * xin[i]
        a1[j] = np.exp(-z * z)
    for j in range(h2):
        z = theta[ob2 + j]
        for i in range(h1):
            z += theta[ow2 + j * h1 + i] * a1[i]
        a2[j] = np.exp(-z * z)
    for k in range(n_out):
        z = theta[ob3 + k]
        for i in range(h2):
            z += theta[ow3 + k * h2 + i] * a2[i]
        out[k] = z * aux[2 * n_in + k]


@nb.njit(cache=True)
def net_vjp(theta, meta, aux, x, cot, xbar, tbar, work):
    n_in, h1, h2, n_out = meta[0], meta[1], meta[2], meta[3]
    ob1 = h1 * n_in
    ow2 = ob1 + h1
    ob2 = ow2 + h2 * h1
    ow3 = ob2 + h2
    ob3 = ow3 + n_out * h2
    xin = work[:n_in]
    o = n_in
    a1 = work[o:o + h1]
    g1 = work[o + h1:o + 2 * h1]
    o += 2 * h1
    a2 = work[o:o + h2]
    g2 = work[o + h2:o + 2 * h2]
    for i in range(n_in):
        xin[i] = (x[i] - aux[i]) / aux[n_in + i]
    for j in range(h1):
        z = theta[ob1 + j]
        for i in range(n_in):
            z += theta[j * n_in + i] * xin[i]
        a1[j] = np.exp(-z * z)
        g1[j] = -2.0 * z * a1[j]  # d exp(-z^2)/dz, cotangent applied below
    for j in range(h2):
        z = theta[ob2 + j]
        for i in range(h1):
            z += theta[ow2 + j * h1 + i] * a1[i]
        a2[j] = np.exp(-z * z)
        g2[j] = -2.0 * z * a2[j]
    # output layer
    for j in range(h2):
        s = 0.0
        for k in range(n_out):
            s += theta[ow3 + k * h2 + j] * cot[k] * aux[2 * n_in + k]
        g2[j] *= s
    for k in range(n_out):
        c = cot[k] * aux[2 * n_in + k]
        tbar[ob3 + k] += c
        for j in range(h2):
            tbar[ow3 + k * h2 + j] += c * a2[j]
    # second hidden layer
    for i in range(h1):
        s = 0.0
        for j in range(h2):
            s += theta[ow2 + j * h1 + i] * g2[j]
        g1[i] *= s
    for j in range(h2):
        tbar[ob2 + j] += g2[j]
        for i in range(h1):
            tbar[ow2 + j * h1 + i] += g2[j] * a1[i]
    # first hidden layer
    for j in range(h1):
        tbar[ob1 + j] += g1[j]
        for i in range(n_in):
            tbar[j * n_in + i] += g1[j] * xin[i]
            xbar[i] += theta[j * n_in + i] * g1[j] / aux[n_in + i]


# --------------------------------------------------------------- polynomial
# meta = [n_vars, n_terms, n_out, exponents (n_terms x n_vars) ...]
# aux  = values of the exogenous variables appended after the state
# theta = coefficients, row-major (n_terms x n_out)

@nb.njit(cache=True)
def _poly_inputs(meta, aux, x, v):
    n_vars = meta[0]
    n_exog = aux.shape[0]
    d = n_vars - n_exog
    for i in range(d):
        v[i] = x[i]
    for i in range(n_exog):
        v[d + i] = aux[i]


@nb.njit(cache=True)
def poly_eval(theta, meta, aux, x, out, work):
    n_vars, n_terms, n_out = meta[0], meta[1], meta[2]
    v = work[:n_vars]
    _poly_inputs(meta, aux, x, v)
    for o in range(n_out):
        out[o] = 0.0
    for k in range(n_terms):
        phi = 1.0
        for i in range(n_vars):
            e = meta[3 + k * n_vars + i]
            for _ in range(e):
                phi *= v[i]
        for o in range(n_out):
            out[o] += theta[k * n_out + o] * phi


@nb.njit(cache=True)
def poly_vjp(theta, meta, aux, x, cot, xbar, tbar, work):
    n_vars, n_terms, n_out = meta[0], meta[1], meta[2]
    d = n_vars - aux.shape[0]
    v = work[:n_vars]
    _poly_inputs(meta, aux, x, v)
    for k in range(n_terms):
        phi = 1.0
        for i in range(n_vars):
            e = meta[3 + k * n_vars + i]
            for _ in range(e):
                phi *= v[i]
        s = 0.0
        for o in range(n_out):
            tbar[k * n_out + o] += cot[o] * phi
            s += cot[o] * theta[k * n_out + o]
        if s == 0.0:
            continue
        for i in range(d):
            e = meta[3 + k * n_vars + i]
            if e == 0:
                continue
            dphi = float(e)
            for j in range(n_vars):
                ej = meta[3 + k * n_vars + j]
                if j == i:
                    ej -= 1
                for _ in range(ej):
                    dphi *= v[j]
            xbar[i] += s * dphi


# ----------------------------------------------------------- corrected RHS

@nb.njit
def _rhs(f, p, u, corr, theta, meta, aux, targets, gain, x, yobs, out, tmp, work):
    f(x, p, u, out)
    for i in range(x.shape[0]):
        out[i] += gain[i] * (yobs[i] - x[i])
    corr(theta, meta, aux, x, tmp, work)
    for k in range(targets.shape[0]):
        out[targets[k]] += tmp[k]


@nb.njit(cache=True)
def _bad(x, bound):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]) or abs(x[i]) > bound:
            return True
    return False


@nb.njit
def rhs_eval(f, p, u, corr, theta, meta, aux, targets, gain, x, yobs):
    d = x.shape[0]
    out = np.empty(d)
    tmp = np.empty(max(targets.shape[0], 1))
    work = np.empty(4 * (d + 64) + meta.shape[0])
    _rhs(f, p, u, corr, theta, meta, aux, targets, gain, x, yobs, out, tmp, work)
    return out


@nb.njit
def simulate(f, p, corr, theta, meta, aux, targets, gain, lower, x0, h, n_steps,
             ustage, ystage, bound):
    """RK4 trajectory on the step grid; returns (states, n_valid)."""
    d = x0.shape[0]
    states = np.empty((n_steps + 1, d))
    states[0] = x0
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    xs = np.empty(d)
    tmp = np.empty(max(targets.shape[0], 1))
    work = np.empty(4 * (d + 64) + meta.shape[0])
    for n in range(n_steps):
        x = states[n]
        _rhs(f, p, ustage[n, 0], corr, theta, meta, aux, targets, gain, x, ystage[n, 0], k1, tmp, work)
        for i in range(d):
            xs[i] = x[i] + 0.5 * h * k1[i]
        _rhs(f, p, ustage[n, 1], corr, theta, meta, aux, targets, gain, xs, ystage[n, 1], k2, tmp, work)
        for i in range(d):
            xs[i] = x[i] + 0.5 * h * k2[i]
        _rhs(f, p, ustage[n, 1], corr, theta, meta, aux, targets, gain, xs, ystage[n, 1], k3, tmp, work)
        for i in range(d):
            xs[i] = x[i] + h * k3[i]
        _rhs(f, p, ustage[n, 2], corr, theta, meta, aux, targets, gain, xs, ystage[n, 2], k4, tmp, work)
        for i in range(d):
            v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if v < lower[i]:
                v = lower[i]
            states[n + 1, i] = v
        if _bad(states[n + 1], bound):
            return states, n + 1
    return states, n_steps + 1


@nb.njit(cache=True)
def trajectory_loss(states, sub, obs, wts):
    loss = 0.0
    for j in range(obs.shape[0]):
        for i in range(obs.shape[1]):
            if wts[i] != 0.0:
                r = states[j * sub, i] - obs[j, i]
                loss += wts[i] * r * r
    return loss


@nb.njit
def loss_only(f, p, corr, theta, meta, aux, targets, gain, lower, x0, h, n_steps,
              ustage, ystage, sub, obs, wts, bound):
    states, n_ok = simulate(f, p, corr, theta, meta, aux, targets, gain, lower, x0, h,
                            n_steps, ustage, ystage, bound)
    if n_ok < n_steps + 1:
        return SENTINEL, True
    return trajectory_loss(states, sub, obs, wts), False


@nb.njit
def _vjp_rhs(jac, p, u, corr_vjp, theta, meta, aux, targets, gain, x, g, J, gt, out, tbar, work):
    """out = (dF/dx)^T g ; tbar += (dF/dtheta)^T g."""
    d = x.shape[0]
    jac(x, p, u, J)
    for i in range(d):
        s = 0.0
        for k in range(d):
            s += J[k, i] * g[k]
        out[i] = s - gain[i] * g[i]
    for k in range(targets.shape[0]):
        gt[k] = g[targets[k]]
    corr_vjp(theta, meta, aux, x, gt, out, tbar, work)


@nb.njit
def loss_grad(f, jac, p, corr, corr_vjp, theta, meta, aux, targets, gain, lower, x0, h,
              n_steps, ustage, ystage, sub, obs, wts, bound):
    """Loss and its exact gradient via the discrete adjoint of RK4.

    Returns (loss, grad, diverged). A diverged solve returns the sentinel loss
    and a zero gradient.
    """
    d = x0.shape[0]
    P = theta.shape[0]
    grad = np.zeros(P)
    states = np.empty((n_steps + 1, d))
    stages = np.empty((n_steps, 4, d))
    clamped = np.zeros((n_steps + 1, d), dtype=np.bool_)
    states[0] = x0
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(max(targets.shape[0], 1))
    work = np.empty(4 * (d + 64) + meta.shape[0])
    for n in range(n_steps):
        x = states[n]
        stages[n, 0] = x
        _rhs(f, p, ustage[n, 0], corr, theta, meta, aux, targets, gain, x, ystage[n, 0], k1, tmp, work)
        for i in range(d):
            stages[n, 1, i] = x[i] + 0.5 * h * k1[i]
        _rhs(f, p, ustage[n, 1], corr, theta, meta, aux, targets, gain, stages[n, 1], ystage[n, 1], k2, tmp, work)
        for i in range(d):
            stages[n, 2, i] = x[i] + 0.5 * h * k2[i]
        _rhs(f, p, ustage[n, 1], corr, theta, meta, aux, targets, gain, stages[n, 2], ystage[n, 1], k3, tmp, work)
        for i in range(d):
            stages[n, 3, i] = x[i] + h * k3[i]
        _rhs(f, p, ustage[n, 2], corr, theta, meta, aux, targets, gain, stages[n, 3], ystage[n, 2], k4, tmp, work)
        for i in range(d):
            v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if v < lower[i]:
                v = lower[i]
                clamped[n + 1, i] = True
            states[n + 1, i] = v
        if _bad(states[n + 1], bound):
            return SENTINEL, grad, True
    loss = trajectory_loss(states, sub, obs, wts)

    lam = np.zeros(d)
    lam_new = np.empty(d)
    g1 = np.empty(d)
    g2 = np.empty(d)
    g3 = np.empty(d)
    g4 = np.empty(d)
    a = np.empty(d)
    J = np.empty((d, d))
    gt = np.empty(max(targets.shape[0], 1))
    for n in range(n_steps - 1, -1, -1):
        m = n + 1
        if m % sub == 0:
            j = m // sub
            for i in range(d):
                lam[i] += 2.0 * wts[i] * (states[m, i] - obs[j, i])
        for i in range(d):
            if clamped[m, i]:
                lam[i] = 0.0
            lam_new[i] = lam[i]
            g4[i] = h / 6.0 * lam[i]
            g3[i] = h / 3.0 * lam[i]
            g2[i] = h / 3.0 * lam[i]
            g1[i] = h / 6.0 * lam[i]
        _vjp_rhs(jac, p, ustage[n, 2], corr_vjp, theta, meta, aux, targets, gain, stages[n, 3], g4, J, gt, a, grad, work)
        for i in range(d):
            lam_new[i] += a[i]
            g3[i] += h * a[i]
        _vjp_rhs(jac, p, ustage[n, 1], corr_vjp, theta, meta, aux, targets, gain, stages[n, 2], g3, J, gt, a, grad, work)
        for i in range(d):
            lam_new[i] += a[i]
            g2[i] += 0.5 * h * a[i]
        _vjp_rhs(jac, p, ustage[n, 1], corr_vjp, theta, meta, aux, targets, gain, stages[n, 1], g2, J, gt, a, grad, work)
        for i in range(d):
            lam_new[i] += a[i]
            g1[i] += 0.5 * h * a[i]
        _vjp_rhs(jac, p, ustage[n, 0], corr_vjp, theta, meta, aux, targets, gain, stages[n, 0], g1, J, gt, a, grad, work)
        for i in range(d):
            lam[i] = lam_new[i] + a[i]
    return loss, grad, False


@nb.njit
def _tangent_rhs(jac, p, u, corr_vjp, theta, meta, aux, targets, gain, x, S, dk, J, cot, xrow, trow, work):
    """dk = (dF/dx) S + dF/dtheta for the stage state x with sensitivity S (d x P)."""
    d = x.shape[0]
    P = theta.shape[0]
    jac(x, p, u, J)
    for i in range(d):
        J[i, i] -= gain[i]
    for k in range(targets.shape[0]):
        for q in range(cot.shape[0]):
            cot[q] = 0.0
        cot[k] = 1.0
        for i in range(d):
            xrow[i] = 0.0
        for q in range(P):
            trow[q] = 0.0
        corr_vjp(theta, meta, aux, x, cot, xrow, trow, work)
        t = targets[k]
        for i in range(d):
            J[t, i] += xrow[i]
        for q in range(P):
            dk[t, q] = trow[q]
    for i in range(d):
        is_target = False
        for k in range(targets.shape[0]):
            if targets[k] == i:
                is_target = True
        if not is_target:
            for q in range(P):
                dk[i, q] = 0.0
    for i in range(d):
        for q in range(P):
            s = 0.0
            for k in range(d):
                s += J[i, k] * S[k, q]
            dk[i, q] += s


@nb.njit
def loss_grad_tangent(f, jac, p, corr, corr_vjp, theta, meta, aux, targets, gain, lower, x0, h,
                      n_steps, ustage, ystage, sub, obs, wts, bound):
    """Forward-mode counterpart of :func:`loss_grad` (state sensitivities)."""
    d = x0.shape[0]
    P = theta.shape[0]
    grad = np.zeros(P)
    x = x0.copy()
    S = np.zeros((d, P))
    Xs = np.empty(d)
    Ss = np.empty((d, P))
    dk1 = np.empty((d, P))
    dk2 = np.empty((d, P))
    dk3 = np.empty((d, P))
    dk4 = np.empty((d, P))
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    J = np.empty((d, d))
    nt = max(targets.shape[0], 1)
    cot = np.empty(nt)
    tmp = np.empty(nt)
    xrow = np.empty(d)
    trow = np.empty(P)
    work = np.empty(4 * (d + 64) + meta.shape[0])
    loss = 0.0
    for i in range(d):
        if wts[i] != 0.0:
            r = x[i] - obs[0, i]
            loss += wts[i] * r * r
    for n in range(n_steps):
        _rhs(f, p, ustage[n, 0], corr, theta, meta, aux, targets, gain, x, ystage[n, 0], k1, tmp, work)
        _tangent_rhs(jac, p, ustage[n, 0], corr_vjp, theta, meta, aux, targets, gain, x, S, dk1, J, cot, xrow, trow, work)
        for i in range(d):
            Xs[i] = x[i] + 0.5 * h * k1[i]
            for q in range(P):
                Ss[i, q] = S[i, q] + 0.5 * h * dk1[i, q]
        _rhs(f, p, ustage[n, 1], corr, theta, meta, aux, targets, gain, Xs, ystage[n, 1], k2, tmp, work)
        _tangent_rhs(jac, p, ustage[n, 1], corr_vjp, theta, meta, aux, targets, gain, Xs, Ss, dk2, J, cot, xrow, trow, work)
        for i in range(d):
            Xs[i] = x[i] + 0.5 * h * k2[i]
            for q in range(P):
                Ss[i, q] = S[i, q] + 0.5 * h * dk2[i, q]
        _rhs(f, p, ustage[n, 1], corr, theta, meta, aux, targets, gain, Xs, ystage[n, 1], k3, tmp, work)
        _tangent_rhs(jac, p, ustage[n, 1], corr_vjp, theta, meta, aux, targets, gain, Xs, Ss, dk3, J, cot, xrow, trow, work)
        for i in range(d):
            Xs[i] = x[i] + h * k3[i]
            for q in range(P):
                Ss[i, q] = S[i, q] + h * dk3[i, q]
        _rhs(f, p, ustage[n, 2], corr, theta, meta, aux, targets, gain, Xs, ystage[n, 2], k4, tmp, work)
        _tangent_rhs(jac, p, ustage[n, 2], corr_vjp, theta, meta, aux, targets, gain, Xs, Ss, dk4, J, cot, xrow, trow, work)
        for i in range(d):
            v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            clamp = v < lower[i]
            x[i] = lower[i] if clamp else v
            for q in range(P):
                if clamp:
                    S[i, q] = 0.0
                else:
                    S[i, q] += h / 6.0 * (dk1[i, q] + 2.0 * dk2[i, q] + 2.0 * dk3[i, q] + dk4[i, q])
        if _bad(x, bound):
            return SENTINEL, np.zeros(P), True
        m = n + 1
        if m % sub == 0:
            j = m // sub
            for i in range(d):
                if wts[i] != 0.0:
                    r = x[i] - obs[j, i]
                    loss += wts[i] * r * r
                    for q in range(P):
                        grad[q] += 2.0 * wts[i] * r * S[i, q]
    return loss, grad, False
