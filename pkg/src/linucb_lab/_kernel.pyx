# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LinUCB trial loop.

Mirrors ``_pykernel.run_loop`` step for step: secular rank-one eigen update with
deflation and Gu-Eisenstat vector recomputation, closed-form KKT inner solve,
ridge estimate through the maintained eigenbasis.  The periodic refactor calls
back into ``eigencore.eig_sym``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot, INFINITY

from .eigencore import eig_sym, SecularError
from .engine import _sphere_ascent

cnp.import_array()

cdef double DEFLATE_Z = 1e-12
cdef double DEFLATE_GAP = 1e-12
cdef double SECULAR_RTOL = 1e-13
cdef int SECULAR_MAXITER = 200
cdef double KKT_RTOL = 1e-13
cdef double ROUNDOFF = 4 * 2.220446049250313e-16
cdef int KKT_MAXITER = 200
cdef double HARD_CASE_B = 1e-12
cdef double DEGENERATE_NORM = 1e-12


cdef struct Work:
    int d
    double *z
    double *lam
    double *za
    double *delta
    double *tau
    int *origin
    int *act
    double *zhat
    double *coeff
    double *newval
    double *newvec
    double *tmp
    int *order


cdef int secular_root(int k, double *delta, double *z2, double lo, double hi,
                      double *out) noexcept nogil:
    cdef double tau = 0.5 * (lo + hi)
    cdef double f, fp, diff, term, nxt, scale, mag
    cdef int it, j
    for it in range(SECULAR_MAXITER):
        f = 1.0
        fp = 0.0
        mag = 1.0
        for j in range(k):
            diff = delta[j] - tau
            term = z2[j] / diff
            f += term
            fp += term / diff
            mag += fabs(term)
        if fabs(f) <= ROUNDOFF * mag:
            out[0] = tau
            return 0
        if f < 0.0:
            lo = tau
        else:
            hi = tau
        if fp > 0.0:
            nxt = tau - f / fp
        else:
            nxt = 0.5 * (lo + hi)
        if not (lo < nxt and nxt < hi):
            nxt = 0.5 * (lo + hi)
        # relative to the offset from the origin pole, which can be far
        # smaller than the root itself
        scale = fabs(nxt)
        if scale < 1e-300:
            scale = 1e-300
        if fabs(nxt - tau) <= SECULAR_RTOL * scale or hi - lo <= SECULAR_RTOL * scale:
            out[0] = nxt
            return 0
        tau = nxt
    return -1


cdef void fix_signs(int d, double[:, ::1] V) noexcept nogil:
    cdef int i, j, best
    cdef double m
    for j in range(d):
        best = 0
        m = fabs(V[0, j])
        for i in range(1, d):
            if fabs(V[i, j]) > m:
                m = fabs(V[i, j])
                best = i
        if V[best, j] < 0.0:
            for i in range(d):
                V[i, j] = -V[i, j]


cdef int rank_one(Work *w, double[::1] values, double[:, ::1] V, double[::1] u) noexcept nogil:
    """In-place eigen update of (values, V) by u u^T.  Returns -1 on failure."""
    cdef int d = w.d
    cdef int i, j, m, lead, k, a, jj
    cdef double unorm2 = 0.0, unorm, top, r, c, s, vl, prod, den, nrm, lower, upper, mid, fmid, val
    for i in range(d):
        unorm2 += u[i] * u[i]
    if unorm2 == 0.0:
        return 0
    unorm = sqrt(unorm2)
    for j in range(d):
        s = 0.0
        for i in range(d):
            s += V[i, j] * u[i]
        w.z[j] = s
    # rotate equal-eigenvalue groups so only the lead carries weight
    top = fabs(values[0])
    if top < 1.0:
        top = 1.0
    i = 0
    while i < d:
        j = i + 1
        while j < d and values[i] - values[j] <= DEFLATE_GAP * top:
            j += 1
        lead = i
        for m in range(i + 1, j):
            if w.z[m] == 0.0:
                continue
            r = hypot(w.z[lead], w.z[m])
            c = w.z[lead] / r
            s = w.z[m] / r
            for a in range(d):
                vl = V[a, lead]
                V[a, lead] = c * vl + s * V[a, m]
                V[a, m] = -s * vl + c * V[a, m]
            w.z[lead] = r
            w.z[m] = 0.0
        i = j
    k = 0
    for i in range(d):
        if fabs(w.z[i]) >= DEFLATE_Z * unorm:
            w.act[k] = i
            w.lam[k] = values[i]
            w.za[k] = w.z[i]
            k += 1
    if k == 0:
        return 0
    # squared weights reuse the zhat buffer
    for j in range(k):
        w.zhat[j] = w.za[j] * w.za[j]
    s = 0.0
    for j in range(k):
        s += w.zhat[j]
    for j in range(k):
        w.delta[j] = w.lam[j] - w.lam[0]
    w.origin[0] = 0
    # the top root can equal |z|^2 exactly; widen so it is interior
    if secular_root(k, w.delta, w.zhat, 0.0, s * (1.0 + 1e-12), &w.tau[0]) != 0:
        return -1
    for i in range(1, k):
        upper = w.lam[i - 1]
        lower = w.lam[i]
        mid = 0.5 * (upper - lower)
        fmid = 1.0
        for j in range(k):
            fmid += w.zhat[j] / ((w.lam[j] - lower) - mid)
        if fmid >= 0.0:
            w.origin[i] = i
            for j in range(k):
                w.delta[j] = w.lam[j] - lower
            if secular_root(k, w.delta, w.zhat, 0.0, mid, &w.tau[i]) != 0:
                return -1
        else:
            w.origin[i] = i - 1
            for j in range(k):
                w.delta[j] = w.lam[j] - upper
            if secular_root(k, w.delta, w.zhat, mid - (upper - lower), 0.0, &w.tau[i]) != 0:
                return -1
    # Gu-Eisenstat: zhat_j^2 = prod_i (x_i - lam_j) / prod_{i != j} (lam_i - lam_j)
    for j in range(k):
        prod = 1.0
        for i in range(k):
            prod *= (w.lam[w.origin[i]] - w.lam[j]) + w.tau[i]
        den = 1.0
        for i in range(k):
            if i != j:
                den *= w.lam[i] - w.lam[j]
        val = sqrt(fabs(prod / den))
        w.coeff[j] = val if w.za[j] >= 0.0 else -val
    for j in range(k):
        w.zhat[j] = w.coeff[j]
    # new vectors in a scratch buffer: column a of newvec for active root i
    for i in range(k):
        nrm = 0.0
        for j in range(k):
            w.coeff[j] = -w.zhat[j] / ((w.lam[w.origin[i]] - w.lam[j]) + w.tau[i])
            nrm += w.coeff[j] * w.coeff[j]
        nrm = sqrt(nrm)
        for a in range(d):
            s = 0.0
            for j in range(k):
                s += V[a, w.act[j]] * w.coeff[j]
            w.newvec[a * d + i] = s / nrm
        w.newval[i] = w.lam[w.origin[i]] + w.tau[i]
    for i in range(k):
        jj = w.act[i]
        values[jj] = w.newval[i]
        for a in range(d):
            V[a, jj] = w.newvec[a * d + i]
    # stable insertion sort, descending
    for i in range(d):
        w.order[i] = i
    for i in range(1, d):
        m = w.order[i]
        j = i - 1
        while j >= 0 and values[w.order[j]] < values[m]:
            w.order[j + 1] = w.order[j]
            j -= 1
        w.order[j + 1] = m
    for i in range(d):
        w.newval[i] = values[w.order[i]]
        for a in range(d):
            w.newvec[a * d + i] = V[a, w.order[i]]
    for i in range(d):
        values[i] = w.newval[i]
        for a in range(d):
            V[a, i] = w.newvec[a * d + i]
    fix_signs(d, V)
    return 0


cdef int kkt_solve(int d, double[::1] values, double *nu, double beta, double *wout,
                   double *b, double *gaps, int *group) noexcept nogil:
    """Inner maximiser w in the eigenbasis.  Returns -1 if the root fails."""
    cdef double lmin = values[d - 1]
    cdef int i, it, first = -1
    cdef double bg = 0.0, phi0 = 0.0, btot = 0.0, lo, hi, s, f, fp, phi, dphi, den, term, root, nxt, nrm
    for i in range(d):
        group[i] = (values[i] - lmin) <= DEFLATE_GAP * values[0]
        if group[i] and first < 0:
            first = i
    if beta == 0.0:
        for i in range(d):
            wout[i] = 0.0
        wout[first] = 1.0
        return 0
    for i in range(d):
        b[i] = beta / sqrt(values[i]) * nu[i]
        if group[i]:
            gaps[i] = 0.0
            bg += b[i] * b[i]
        else:
            gaps[i] = beta * beta * (values[i] - lmin) / (values[i] * lmin)
        btot += b[i] * b[i]
    bg = sqrt(bg)
    if bg < HARD_CASE_B:
        for i in range(d):
            if not group[i]:
                phi0 += b[i] * b[i] / (gaps[i] * gaps[i])
        if phi0 <= 1.0:
            for i in range(d):
                wout[i] = 0.0 if group[i] else b[i] / gaps[i]
            wout[first] = sqrt(1.0 - phi0) if phi0 < 1.0 else 0.0
            return 0
    lo = bg
    hi = sqrt(btot)
    s = hi
    for it in range(KKT_MAXITER):
        phi = 0.0
        dphi = 0.0
        for i in range(d):
            den = s + gaps[i]
            term = b[i] * b[i] / (den * den)
            phi += term
            dphi -= 2.0 * term / den
        root = sqrt(phi)
        f = 1.0 / root - 1.0
        fp = -0.5 * dphi / (phi * root)
        if fabs(f) <= ROUNDOFF:
            break
        if f > 0.0:
            hi = s
        else:
            lo = s
        if fp > 0.0:
            nxt = s - f / fp
        else:
            nxt = 0.5 * (lo + hi)
        if nxt <= lo:
            if f > 0.0 and lo > 0.0:
                nxt = lo
            else:
                nxt = 0.5 * (lo + hi)
        elif nxt >= hi:
            nxt = 0.5 * (lo + hi)
        if fabs(nxt - s) <= KKT_RTOL * s or hi - lo <= KKT_RTOL * hi:
            s = nxt
            break
        s = nxt
    else:
        return -1
    if not s > 0.0:
        return -1
    nrm = 0.0
    for i in range(d):
        wout[i] = b[i] / (s + gaps[i])
        nrm += wout[i] * wout[i]
    nrm = sqrt(nrm)
    for i in range(d):
        wout[i] /= nrm
    return 0


def run_loop(int d, int T, double beta, double ridge, theta_star, theta_hat0, noise,
             fallback_pool, int refactor_period, snap_rounds):
    cdef double[::1] ts = np.ascontiguousarray(theta_star, dtype=float)
    cdef double[::1] eps = np.ascontiguousarray(noise, dtype=float)
    cdef double[:, ::1] pool = np.ascontiguousarray(fallback_pool, dtype=float)
    cdef long[::1] snaps = np.ascontiguousarray(snap_rounds, dtype=np.int64)
    cdef Py_ssize_t n = snaps.shape[0]

    lam_np = ridge * np.eye(d)
    values_np = np.full(d, float(ridge))
    vectors_np = np.eye(d)
    actions_np = np.empty((T, d))
    rewards_np = np.empty(T)
    b_np = np.zeros(d)
    eta_np = np.zeros(d)
    tbar_np = np.zeros(d)
    that_np = np.array(theta_hat0, dtype=float)
    sv_np = np.empty((n, d))
    sv1_np = np.empty((n, d))
    stb_np = np.empty((n, d))
    sth_np = np.empty((n, d))
    swe_np = np.empty(n)
    srg_np = np.empty(n)
    srm_np = np.empty(n)
    scratch = np.zeros(14 * d + d * d)
    iscratch = np.zeros(5 * d, dtype=np.intc)

    cdef double[:, ::1] L = lam_np
    cdef double[::1] values = values_np
    cdef double[:, ::1] V = vectors_np
    cdef double[:, ::1] A = actions_np
    cdef double[::1] R = rewards_np
    cdef double[::1] bvec = b_np
    cdef double[::1] eta = eta_np
    cdef double[::1] tbar = tbar_np
    cdef double[::1] that = that_np
    cdef double[:, ::1] sv = sv_np
    cdef double[:, ::1] sv1 = sv1_np
    cdef double[:, ::1] stb = stb_np
    cdef double[:, ::1] sth = sth_np
    cdef double[::1] swe = swe_np
    cdef double[::1] srg = srg_np
    cdef double[::1] srm = srm_np
    cdef double[::1] sc = scratch
    cdef int[::1] isc = iscratch
    cdef double[::1] a = np.zeros(d)

    cdef double *nu = &sc[0]
    cdef double *wv = &sc[d]
    cdef double *y = &sc[2 * d]
    cdef double *kb = &sc[3 * d]
    cdef double *kg = &sc[4 * d]
    cdef double *e = &sc[5 * d]
    cdef Work work
    work.d = d
    work.z = &sc[6 * d]
    work.lam = &sc[7 * d]
    work.za = &sc[8 * d]
    work.delta = &sc[9 * d]
    work.tau = &sc[10 * d]
    work.zhat = &sc[11 * d]
    work.coeff = &sc[12 * d]
    work.newval = &sc[13 * d]
    work.newvec = &sc[14 * d]
    work.origin = &isc[0]
    work.act = &isc[d]
    work.order = &isc[2 * d]
    cdef int *kgroup = &isc[3 * d]

    cdef int t, i, j, k = 0, updates = 0, fallbacks = 0, pool_next = 0, status
    cdef double r, s, norm, regret = 0.0, werr, runmax = 0.0, reward_mean

    for t in range(1, T + 1):
        # nu = V^T theta_hat
        for j in range(d):
            s = 0.0
            for i in range(d):
                s += V[i, j] * that[i]
            nu[j] = s
        status = kkt_solve(d, values, nu, beta, wv, kb, kg, kgroup)
        if status != 0:
            w_np = _sphere_ascent(values_np.copy(), np.array([nu[i] for i in range(d)]), beta)
            for i in range(d):
                wv[i] = w_np[i]
            fallbacks += 1
        norm = 0.0
        for i in range(d):
            y[i] = nu[i] + beta * wv[i] / sqrt(values[i])
            norm += y[i] * y[i]
        norm = sqrt(norm)
        reward_mean = 0.0
        for i in range(d):
            s = 0.0
            for j in range(d):
                s += V[i, j] * y[j]
            a[i] = s / norm
            reward_mean += a[i] * ts[i]
        r = reward_mean + eps[t - 1]
        for i in range(d):
            A[t - 1, i] = a[i]
        R[t - 1] = r
        regret += 1.0 - reward_mean

        for i in range(d):
            for j in range(d):
                L[i, j] += a[i] * a[j]
        updates += 1
        status = 0
        if refactor_period > 0 and updates >= refactor_period:
            status = -1
        elif rank_one(&work, values, V, a) != 0:
            status = -1
        if status != 0:
            pairs = eig_sym(lam_np)
            values_np[:] = pairs.values
            vectors_np[:, :] = pairs.vectors
            updates = 0

        for i in range(d):
            bvec[i] += r * a[i]
            eta[i] += eps[t - 1] * a[i]
        # theta_bar = V diag(1/values) V^T b
        for j in range(d):
            s = 0.0
            for i in range(d):
                s += V[i, j] * bvec[i]
            y[j] = s / values[j]
        norm = 0.0
        for i in range(d):
            s = 0.0
            for j in range(d):
                s += V[i, j] * y[j]
            tbar[i] = s
            norm += s * s
        norm = sqrt(norm)
        if norm >= DEGENERATE_NORM:
            for i in range(d):
                that[i] = tbar[i] / norm
        else:
            for i in range(d):
                that[i] = pool[pool_next % pool.shape[0], i]
            pool_next += 1

        werr = 0.0
        for i in range(d):
            e[i] = tbar[i] - ts[i]
        for i in range(d):
            s = 0.0
            for j in range(d):
                s += L[i, j] * e[j]
            werr += e[i] * s
        werr = sqrt(werr) if werr > 0.0 else 0.0
        if werr > runmax:
            runmax = werr
        while k < n and snaps[k] == t:
            for i in range(d):
                sv[k, i] = values[i]
                sv1[k, i] = V[i, 0]
                stb[k, i] = tbar[i]
                sth[k, i] = that[i]
            swe[k] = werr
            srg[k] = regret
            srm[k] = runmax
            k += 1

    return {
        "actions": actions_np,
        "rewards": rewards_np,
        "lambda_matrix": lam_np,
        "values": values_np,
        "vectors": vectors_np,
        "updates_since_refactor": updates,
        "b_vec": b_np,
        "theta_bar": tbar_np,
        "theta_hat": that_np,
        "eta": eta_np,
        "fallback_count": fallbacks,
        "snap_values": sv_np,
        "snap_v1": sv1_np,
        "snap_theta_bar": stb_np,
        "snap_theta_hat": sth_np,
        "snap_werr": swe_np,
        "snap_regret": srg_np,
        "snap_werr_runmax": srm_np,
    }
