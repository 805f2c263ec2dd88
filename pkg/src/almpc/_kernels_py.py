"""Pure-Python (numpy) implementations of the hot loops.

These mirror ``_kernels.pyx`` line for line and are used when the compiled
extension is missing or ``ALMPC_PURE_PYTHON`` is set.
"""
import numpy as np

# status codes shared with the compiled kernels
RUNNING = 0
SOLVED = 1
PRIMAL_INFEASIBLE = 2
DUAL_INFEASIBLE = 3
UNBOUNDED_CHORD = 4

BIG = 1e20


def _norm_inf(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def admm_loop(Kinv, P, A, q, l, u, rho, sigma, alpha, x, z, y,
              max_iter, eps_abs, eps_rel, eps_inf, check_every):
    """Run OSQP-style ADMM iterations in place on ``x``, ``z``, ``y``.

    Returns ``(iterations, status)``.
    """
    n = x.shape[0]
    m = z.shape[0]
    rho_inv = 1.0 / rho
    status = RUNNING
    it = 0
    for it in range(1, max_iter + 1):
        x_prev = x.copy()
        y_prev = y.copy()
        rhs = sigma * x - q
        if m:
            rhs = rhs + A.T @ (rho * z - y)
        xt = Kinv @ rhs
        zt = A @ xt if m else np.zeros(0)
        x[:] = alpha * xt + (1.0 - alpha) * x
        if m:
            zr = alpha * zt + (1.0 - alpha) * z
            z_new = np.minimum(np.maximum(zr + rho_inv * y, l), u)
            y[:] = y + rho * (zr - z_new)
            z[:] = z_new

        if it % check_every and it != max_iter:
            continue

        Ax = A @ x if m else np.zeros(0)
        Px = P @ x
        Aty = A.T @ y if m else np.zeros(n)
        r_prim = _norm_inf(Ax - z)
        r_dual = _norm_inf(Px + q + Aty)
        e_prim = eps_abs + eps_rel * max(_norm_inf(Ax), _norm_inf(z))
        e_dual = eps_abs + eps_rel * max(_norm_inf(Px), _norm_inf(Aty), _norm_inf(q))
        if r_prim <= e_prim and r_dual <= e_dual:
            status = SOLVED
            break

        dy = y - y_prev
        ndy = _norm_inf(dy)
        if m and ndy > 1e-30:
            Atdy = A.T @ dy
            pos = np.maximum(dy, 0.0)
            neg = np.minimum(dy, 0.0)
            ub = np.where(u < BIG, u, 0.0)
            lb = np.where(l > -BIG, l, 0.0)
            # certificate invalid if mass on an infinite bound
            inf_mass = np.any((u >= BIG) & (pos > eps_inf * ndy)) or np.any(
                (l <= -BIG) & (neg < -eps_inf * ndy))
            if (not inf_mass and _norm_inf(Atdy) <= eps_inf * ndy
                    and ub @ pos + lb @ neg <= -eps_inf * ndy):
                status = PRIMAL_INFEASIBLE
                break

        dx = x - x_prev
        ndx = _norm_inf(dx)
        if ndx > 1e-30:
            tol = eps_inf * ndx
            if _norm_inf(P @ dx) <= tol and q @ dx <= -tol:
                Adx = A @ dx if m else np.zeros(0)
                ok = True
                for i in range(m):
                    if u[i] < BIG and Adx[i] > tol:
                        ok = False
                        break
                    if l[i] > -BIG and Adx[i] < -tol:
                        ok = False
                        break
                if ok:
                    status = DUAL_INFEASIBLE
                    break
    return it, status


def hit_and_run(H, h, x0, n_samples, burn_in, thin, directions, uniforms):
    """Hit-and-run chain over ``{x : Hx <= h}``.

    ``directions`` (steps x dim) and ``uniforms`` (steps,) are pre-drawn so the
    chain is a deterministic function of its inputs.  Returns
    ``(samples, status)``.
    """
    dim = x0.shape[0]
    out = np.empty((n_samples, dim))
    x = x0.astype(float).copy()
    slack = h - H @ x
    steps = burn_in + n_samples * thin
    k = 0
    for t in range(steps):
        d = directions[t]
        d = d / np.sqrt(d @ d)
        Hd = H @ d
        if t % 50 == 0:
            slack = h - H @ x
        lo = -np.inf
        hi = np.inf
        pos = Hd > 1e-14
        neg = Hd < -1e-14
        if np.any(pos):
            hi = float(np.min(slack[pos] / Hd[pos]))
        if np.any(neg):
            lo = float(np.max(slack[neg] / Hd[neg]))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            return out[:k], UNBOUNDED_CHORD
        if hi < lo:
            step = 0.0
        else:
            step = lo + uniforms[t] * (hi - lo)
        x += step * d
        slack -= step * Hd
        if t >= burn_in and (t - burn_in + 1) % thin == 0:
            out[k] = x
            k += 1
    return out, SOLVED
