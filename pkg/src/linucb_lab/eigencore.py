"""Dense symmetric eigen machinery.

Eigenvalues are always kept in non-increasing order with the matching
eigenvectors stored as columns.  Eigenvectors follow a fixed sign convention
(largest-magnitude coordinate non-negative) so that outputs are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-10
DEFLATE_Z = 1e-12
DEFLATE_GAP = 1e-12
SECULAR_RTOL = 1e-13
SECULAR_MAXITER = 200
DEGENERATE_NORM = 1e-12
ROUNDOFF = 4 * np.finfo(float).eps
TINY = np.finfo(float).tiny


class EigenError(ArithmeticError):
    """Raised when an eigen computation cannot be trusted."""


class SecularError(EigenError):
    """Secular root bracketing broke down; callers refactor with eig_sym."""


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def matrix(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is non-negative."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[idx, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs


def eig_sym(matrix) -> EigenPairs:
    """Eigendecomposition of a symmetric positive-definite matrix."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise ValueError(f"expected a square matrix with d >= 2, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    values, vectors = np.linalg.eigh(0.5 * (a + a.T))
    values = values[::-1].copy()
    vectors = vectors[:, ::-1]
    if values[-1] <= 0.0:
        raise EigenError(f"non-positive eigenvalue {values[-1]!r}")
    return EigenPairs(values, np.ascontiguousarray(fix_signs(vectors)))


def _secular_root(delta, z2, lo, hi):
    # Root of 1 + sum z2/(delta - tau) on (lo, hi); f increases across the bracket.
    tau = 0.5 * (lo + hi)
    for _ in range(SECULAR_MAXITER):
        diff = delta - tau
        terms = z2 / diff
        f = 1.0 + terms.sum()
        if abs(f) <= ROUNDOFF * (1.0 + np.abs(terms).sum()):
            return tau
        if f < 0.0:
            lo = tau
        else:
            hi = tau
        fp = (terms / diff).sum()
        step = f / fp if fp > 0.0 else np.inf
        nxt = tau - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        # relative to the offset from the origin pole, which can be far
        # smaller than the root itself
        scale = max(abs(nxt), TINY)
        if abs(nxt - tau) <= SECULAR_RTOL * scale or hi - lo <= SECULAR_RTOL * scale:
            return nxt
        tau = nxt
    raise SecularError("secular iteration did not converge")


def secular_roots(values, z):
    """Roots of 1 + sum z_i^2 / (values_i - x) for strictly decreasing values.

    Returns ``(origins, taus)`` with each root equal to ``values[origins[i]] +
    taus[i]``; keeping the offset separate preserves accuracy of differences
    to nearby poles.
    """
    k = values.shape[0]
    z2 = z * z
    origins = np.empty(k, dtype=np.intp)
    taus = np.empty(k)
    znorm2 = z2.sum()
    # top root in (values[0], values[0] + |z|^2]; the bracket is widened so a
    # root sitting exactly on the right end stays interior
    delta = values - values[0]
    origins[0] = 0
    taus[0] = _secular_root(delta, z2, 0.0, znorm2 * (1.0 + 1e-12))
    for i in range(1, k):
        upper, lower = values[i - 1], values[i]
        mid = 0.5 * (upper - lower)
        delta = values - lower
        fmid = 1.0 + (z2 / (delta - mid)).sum()
        if fmid >= 0.0:
            origins[i] = i
            taus[i] = _secular_root(delta, z2, 0.0, mid)
        else:
            delta = values - upper
            origins[i] = i - 1
            taus[i] = _secular_root(delta, z2, mid - (upper - lower), 0.0)
    return origins, taus


def _deflate(values, vectors, z, unorm):
    """Givens-rotate equal-eigenvalue groups and mark negligible coordinates."""
    d = values.shape[0]
    vectors = vectors.copy()
    z = z.copy()
    top = max(abs(values[0]), 1.0)
    i = 0
    while i < d:
        j = i + 1
        while j < d and values[i] - values[j] <= DEFLATE_GAP * top:
            j += 1
        lead = i
        for m in range(i + 1, j):
            if abs(z[m]) == 0.0:
                continue
            r = np.hypot(z[lead], z[m])
            c, s = z[lead] / r, z[m] / r
            vl = vectors[:, lead].copy()
            vectors[:, lead] = c * vl + s * vectors[:, m]
            vectors[:, m] = -s * vl + c * vectors[:, m]
            z[lead], z[m] = r, 0.0
        i = j
    active = np.abs(z) >= DEFLATE_Z * unorm
    return vectors, z, active


def rank_one_update(pairs: EigenPairs, u) -> EigenPairs:
    """Eigenpairs of ``A + u u^T`` from those of ``A`` via the secular equation."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("update vector must be finite")
    unorm = float(np.linalg.norm(u))
    if unorm == 0.0:
        return pairs
    values = pairs.values
    vectors, z, active = _deflate(values, pairs.vectors, pairs.vectors.T @ u, unorm)
    act = np.flatnonzero(active)
    new_values = values.copy()
    new_vectors = vectors.copy()
    if act.size:
        lam = values[act]
        za = z[act]
        origins, taus = secular_roots(lam, za)
        roots = lam[origins] + taus
        # differences root_i - lam_j computed from the stored offsets
        diff = (lam[origins][:, None] - lam[None, :]) + taus[:, None]
        k = act.size
        # Gu-Eisenstat recomputation of z for orthogonal eigenvectors
        zhat2 = np.empty(k)
        for j in range(k):
            num = np.prod(diff[:, j])
            den = np.prod(np.delete(lam - lam[j], j)) if k > 1 else 1.0
            zhat2[j] = num / den
        zhat = np.sign(za) * np.sqrt(np.abs(zhat2))
        basis = vectors[:, act]
        for i in range(k):
            coeff = zhat / (-diff[i])
            coeff /= np.linalg.norm(coeff)
            new_vectors[:, act[i]] = basis @ coeff
            new_values[act[i]] = roots[i]
    order = np.argsort(-new_values, kind="stable")
    return EigenPairs(new_values[order], np.ascontiguousarray(fix_signs(new_vectors[:, order])))


def project_sphere(x, rng: np.random.Generator | None = None) -> np.ndarray:
    """Radial projection onto the unit sphere.

    Inputs with norm below ``DEGENERATE_NORM`` are replaced by a uniformly
    random unit vector drawn from ``rng`` (required in that case).
    """
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x)
    if norm >= DEGENERATE_NORM:
        return x / norm
    if rng is None:
        raise ValueError("degenerate projection needs a seeded generator")
    return random_unit(rng, x.shape[0])


def random_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    while True:
        g = rng.standard_normal(d)
        n = np.linalg.norm(g)
        if n > DEGENERATE_NORM:
            return g / n


def orthonormal_complement(v) -> np.ndarray:
    """Column-orthonormal ``d x (d-1)`` basis of the complement of unit ``v``.

    Built from a Householder reflection mapping ``v`` to a signed axis, so the
    result is a deterministic function of ``v``.
    """
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("orthonormal_complement needs a unit vector")
    d = v.shape[0]
    k = int(np.argmax(np.abs(v)))
    sign = 1.0 if v[k] >= 0 else -1.0
    w = v.copy()
    w[k] += sign
    # H = I - 2 w w^T / |w|^2 maps v to -sign e_k
    h = np.eye(d) - 2.0 * np.outer(w, w) / (w @ w)
    return np.ascontiguousarray(np.delete(h, k, axis=1))
