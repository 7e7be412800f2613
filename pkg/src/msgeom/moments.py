"""Best-L2 affine subspace fitting via second directional moments, the
k-dimensional displacement of a weighted point set, dyadic displacement
profiles, summability checks, and effective-spanning detection.

The displacement of a measure mu at (x, r) is the scale-normalized residual
of the best k-plane fit over the ball B_r(x),

    D(x, r) = r^{-(k+2)} * min_L  sum_{x_j in B_r(x)} w_j d^2(x_j, L),

set to zero when the ball carries less than a configured mass cutoff.  The
minimizing plane passes through the center of mass and is spanned by the top
eigenvectors of the second-moment matrix; the minimum equals the sum of the
trailing eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySupportError
from .geometry import AffinePlane, AtomicMeasure, Ball

MAX_MOMENT_DIM = 16


def unit_ball_volume(k):
    """Volume of the unit ball in R^k (omega_k); omega_0 = 1."""
    return math.pi ** (k / 2.0) / math.gamma(k / 2.0 + 1.0)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisplacementConfig:
    """Coefficients steering the displacement machinery.

    eps_mass   : mass cutoff; D(x,r) = 0 when mu(B_r(x)) < eps_mass * r^k.
    gamma_good : good-ball threshold; a ball is good when its mass is at
                 least gamma_good * r^k.
    rho        : scale ratio between consecutive construction scales, a
                 power of 1/2.
    delta      : smallness threshold for summability-type hypotheses.
    """

    eps_mass: float
    gamma_good: float
    rho: float = 0.5
    delta: float = 0.1

    def __post_init__(self):
        if self.eps_mass < 0 or self.gamma_good <= 0 or self.delta <= 0:
            raise ValueError("displacement coefficients must be positive")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        q = math.log2(1.0 / self.rho)
        if not (abs(q - round(q)) < 1e-12 and round(q) >= 1):
            raise ValueError("rho must be 2^-q for an integer q >= 1")

    @classmethod
    def default(cls, k, delta=0.1):
        """Desk-scale coefficients: non-vacuous cutoffs for small point sets."""
        wk = unit_ball_volume(k)
        return cls(eps_mass=1e-3 * wk, gamma_good=wk * 4.0 ** (-k), delta=delta)

    @classmethod
    def strict(cls, n, k, delta=0.1):
        """Literal worst-case constants; vacuously small for numerical work.

        eps_mass = (1000 n)^(-7 n^2), gamma_good = omega_k 40^-k, and
        rho = 10^-10 (100 n)^(-3n) rounded down to a power of 1/2.  These
        underflow to zero for moderate n, which is a valid lower bound.
        """
        eps = math.exp(-7.0 * n * n * math.log(1000.0 * n))
        rho_raw = 1e-10 * (100.0 * n) ** (-3.0 * n)
        q = max(1, math.ceil(-math.log2(rho_raw)))
        return cls(
            eps_mass=eps,
            gamma_good=unit_ball_volume(k) * 40.0 ** (-k),
            rho=2.0 ** (-q),
            delta=delta,
        )


# ---------------------------------------------------------------------------
# eigensolver: cyclic Jacobi for small symmetric matrices
# ---------------------------------------------------------------------------

def jacobi_eigh(A, tol=1e-14, max_sweeps=64, check_symmetry=True):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run in a fixed row-major order of the upper triangle so results
    are reproducible.  Supports n <= 16.  Returns eigenvalues in descending
    order with matching eigenvector rows.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > MAX_MOMENT_DIM:
        raise ValueError(f"jacobi_eigh supports n <= {MAX_MOMENT_DIM}, got {n}")
    if check_symmetry:
        if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("matrix must be symmetric")
        A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.abs(A).max()
    if scale == 0.0 or n == 1:
        ev = np.diag(A).copy()
        order = np.argsort(-ev, kind="stable")
        return ev[order], V[order]

    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= tol * scale:
                    continue
                off = max(off, abs(apq))
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(1.0, theta))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                rot_p = c * A[p] - s * A[q]
                rot_q = s * A[p] + c * A[q]
                A[p], A[q] = rot_p, rot_q
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                A[p, q] = A[q, p] = 0.0
                rot_p = c * V[p] - s * V[q]
                rot_q = s * V[p] + c * V[q]
                V[p], V[q] = rot_p, rot_q
        if off <= tol * scale:
            break
    ev = np.diag(A).copy()
    order = np.argsort(-ev, kind="stable")
    return ev[order], V[order]


# ---------------------------------------------------------------------------
# moment spectra and best planes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentSpectrum:
    """Center of mass, descending second-moment eigenvalues, eigenvector rows."""

    x_cm: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # row i is the eigenvector of eigenvalues[i]
    mass: float

    def residual(self, k):
        """lambda_{k+1} + ... + lambda_n: the optimal k-plane fitting residual."""
        return float(self.eigenvalues[k:].sum())

    def plane(self, k):
        """Best k-dimensional affine plane: through x_cm, top-k eigenvectors."""
        return AffinePlane(self.x_cm, self.eigenvectors[:k], _skip_checks=True)


def center_of_mass(mu, ball):
    """Mass-weighted mean of the atoms inside the ball."""
    idx = mu.indices_in_ball(ball)
    w = mu.weights[idx]
    total = w.sum()
    if total <= 0.0:
        raise EmptySupportError("empty support: no mass in the requested ball")
    return (mu.positions[idx] * w[:, None]).sum(axis=0) / total


def second_moment_spectrum(mu, ball):
    """Second directional moments of mu restricted to the ball.

    The eigenpairs (lambda_i, v_i) of M = sum w_j (x_j - x_cm)(x_j - x_cm)^T
    satisfy the stationarity identity sum w_j <x_j - x_cm, v_i>(x_j - x_cm)
    = lambda_i v_i, and lambda_i = sum w_j <x_j - x_cm, v_i>^2.
    """
    idx = mu.indices_in_ball(ball)
    w = mu.weights[idx]
    total = w.sum()
    if total <= 0.0:
        raise EmptySupportError("empty support: no mass in the requested ball")
    pts = mu.positions[idx]
    x_cm = (pts * w[:, None]).sum(axis=0) / total
    centered = pts - x_cm
    M = (centered * w[:, None]).T @ centered
    ev, vecs = jacobi_eigh(M)
    ev = np.maximum(ev, 0.0)  # clamp rounding noise on rank-deficient clouds
    return MomentSpectrum(x_cm=x_cm, eigenvalues=ev, eigenvectors=vecs, mass=float(total))


def best_affine_plane(mu, ball, k):
    """The k-plane minimizing sum w_j d^2(x_j, L) over atoms in the ball."""
    return second_moment_spectrum(mu, ball).plane(k)


def displacement(mu, x, r, k, cfg):
    """k-dimensional displacement D(x, r) of mu, with mass cutoff.

    Returns r^{-(k+2)} (lambda_{k+1} + ... + lambda_n) of mu restricted to
    B_r(x) when mu(B_r(x)) >= eps_mass * r^k, else exactly 0.  The value is
    invariant under the rescaling (x, r, mu) -> (0, 1, pushforward).
    """
    if r <= 0:
        raise ValueError("displacement needs r > 0")
    ball = Ball(x, r)
    idx = mu.indices_in_ball(ball)
    return _displacement_from_atoms(mu.positions[idx], mu.weights[idx], r, k, cfg)


def _displacement_from_atoms(pts, w, r, k, cfg):
    mass = w.sum()
    if mass < cfg.eps_mass * r ** k or mass <= 0.0:
        return 0.0
    if pts.shape[0] <= k + 1:
        return 0.0  # k+1 or fewer points fit a k-plane exactly
    x_cm = (pts * w[:, None]).sum(axis=0) / mass
    centered = pts - x_cm
    M = (centered * w[:, None]).T @ centered
    ev, _ = jacobi_eigh(M, check_symmetry=False)
    return float(max(0.0, ev[k:].sum()) * r ** (-(k + 2)))


def _batched_jacobi_eigenvalues(Ms, tol=1e-14, max_sweeps=64):
    """Descending eigenvalues of a stack of symmetric matrices.

    Same cyclic sweep order as jacobi_eigh, with each rotation applied to the
    whole stack at once.
    """
    A = np.array(Ms, dtype=float)
    c_count, n, _ = A.shape
    scale = np.abs(A).max(axis=(1, 2))
    scale[scale == 0.0] = 1.0
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                act = np.abs(apq) > tol * scale
                if not act.any():
                    continue
                off = max(off, float((np.abs(apq) / scale).max()))
                theta = np.zeros(c_count)
                theta[act] = 0.5 * (A[act, q, q] - A[act, p, p]) / apq[act]
                t = np.where(
                    act,
                    np.sign(np.where(theta == 0.0, 1.0, theta))
                    / (np.abs(theta) + np.hypot(1.0, theta)),
                    0.0,
                )
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rp = c[:, None] * A[:, p, :] - s[:, None] * A[:, q, :]
                rq = s[:, None] * A[:, p, :] + c[:, None] * A[:, q, :]
                A[:, p, :], A[:, q, :] = rp, rq
                cp = c[:, None] * A[:, :, p] - s[:, None] * A[:, :, q]
                cq = s[:, None] * A[:, :, p] + c[:, None] * A[:, :, q]
                A[:, :, p], A[:, :, q] = cp, cq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
        if off <= tol:
            break
    diag = np.diagonal(A, axis1=1, axis2=2)
    return -np.sort(-diag, axis=1)


def displacement_profile_many(mu, centers, r, k, cfg):
    """Displacement at one scale for many centers in a single batch.

    Centers whose ball holds at most k+1 atoms are zero without any fit;
    the remaining moment matrices are accumulated chunk-wise and solved by
    one batched Jacobi sweep set.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    out = np.zeros(centers.shape[0])
    if mu.count == 0:
        return out
    counts = mu._index.query_counts(centers, r)
    active = np.flatnonzero(counts > k + 1)
    if len(active) == 0:
        return out
    n = mu.ambient_dim
    pts_all = mu.positions
    w_all = mu.weights
    total_work = int(counts[active].sum())

    if total_work <= 20_000_000:
        # exact centered accumulation, vectorized over flattened neighborhoods
        raw = mu._index._tree.query_ball_point(centers[active], r)
        lengths = np.array([len(lst) for lst in raw])
        nonempty = lengths > 0
        if not nonempty.any():
            return out
        active = active[nonempty]
        idx_flat = np.concatenate([np.asarray(lst, dtype=int) for lst, ne in zip(raw, nonempty) if ne])
        lengths = lengths[nonempty]
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        w_flat = w_all[idx_flat]
        p_flat = pts_all[idx_flat]
        masses = np.add.reduceat(w_flat, starts)
        sums = np.add.reduceat(w_flat[:, None] * p_flat, starts, axis=0)
        ok = masses >= np.maximum(cfg.eps_mass * r ** k, 1e-300)
        if not ok.any():
            return out
        cm = np.zeros_like(sums)
        cm[ok] = sums[ok] / masses[ok, None]
        centered = p_flat - np.repeat(cm, lengths, axis=0)
        prods = (centered[:, :, None] * centered[:, None, :]).reshape(len(idx_flat), n * n)
        mats = np.add.reduceat(w_flat[:, None] * prods, starts, axis=0).reshape(-1, n, n)
        ev = _batched_jacobi_eigenvalues(mats[ok])
        out[active[ok]] = np.maximum(ev[:, k:], 0.0).sum(axis=1) * r ** (-(k + 2))
        return out

    # coarse scales: dense masked accumulation (spreads are O(r), so the
    # uncentered second-moment algebra is numerically safe here)
    mats = np.zeros((len(active), n, n))
    masses = np.zeros(len(active))
    sums = np.zeros((len(active), n))
    pair_prods = (pts_all[:, :, None] * pts_all[:, None, :]).reshape(mu.count, n * n)
    pt_sq = np.einsum("ja,ja->j", pts_all, pts_all)
    chunk = max(1, int(4e6 // max(mu.count, 1)))
    for lo in range(0, len(active), chunk):
        sel = active[lo : lo + chunk]
        C = centers[sel]
        d2 = (C * C).sum(axis=1)[:, None] + pt_sq[None, :] - 2.0 * (C @ pts_all.T)
        wm = np.where(d2 <= r * r, w_all[None, :], 0.0)
        masses[lo : lo + chunk] = wm.sum(axis=1)
        sums[lo : lo + chunk] = wm @ pts_all
        mats[lo : lo + chunk] = (wm @ pair_prods).reshape(-1, n, n)
    ok = masses >= np.maximum(cfg.eps_mass * r ** k, 1e-300)
    if not ok.any():
        return out
    cm = sums[ok] / masses[ok, None]
    M = mats[ok] - masses[ok, None, None] * np.einsum("ca,cb->cab", cm, cm)
    ev = _batched_jacobi_eigenvalues(M)
    out[active[ok]] = np.maximum(ev[:, k:], 0.0).sum(axis=1) * r ** (-(k + 2))
    return out


def _neighbors_many(mu, centers, r):
    """Per-center lists of atom indices within the closed radius r."""
    if mu.count == 0:
        return [np.array([], dtype=int) for _ in centers]
    raw = mu._index._tree.query_ball_point(np.atleast_2d(centers), r)
    return [np.sort(np.asarray(lst, dtype=int)) for lst in raw]


# ---------------------------------------------------------------------------
# dyadic profiles and summability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DyadicProfile:
    """Displacement and mass of mu around one center across dyadic scales."""

    center: np.ndarray
    k: int
    scales: np.ndarray        # r_alpha = 2^-alpha, strictly decreasing
    displacements: np.ndarray
    masses: np.ndarray

    def entries(self):
        return list(zip(self.scales, self.displacements, self.masses))


def dyadic_profile(mu, x, k, alpha_min, alpha_max, cfg):
    """Displacement profile alpha -> D(x, 2^-alpha) for alpha_min..alpha_max."""
    if alpha_min > alpha_max:
        raise ValueError("alpha_min must not exceed alpha_max")
    x = np.asarray(x, dtype=float)
    alphas = np.arange(alpha_min, alpha_max + 1)
    scales = 2.0 ** (-alphas.astype(float))
    disps = np.empty(len(alphas))
    masses = np.empty(len(alphas))
    for i, r in enumerate(scales):
        disps[i] = displacement(mu, x, r, k, cfg)
        masses[i] = mu.mass_in_ball(Ball(x, r))
    return DyadicProfile(center=x, k=k, scales=scales, displacements=disps, masses=masses)


def _dyadic_scales_below(r, mu, k, max_scales=60):
    """Dyadic radii r_alpha <= r, truncated once every r_alpha-ball around an
    atom holds at most k+1 atoms (all finer displacements vanish: k+1 points
    always fit a k-plane exactly)."""
    alpha = math.ceil(-math.log2(r) - 1e-12)
    scales = []
    for a in range(alpha, alpha + max_scales):
        s = 2.0 ** (-a)
        scales.append(s)
        counts = mu._index.query_counts(mu.positions, s)
        if counts.size == 0 or counts.max() <= k + 1:
            break
    return scales


def ball_masses_many(mu, centers, r):
    """mu(B_r(center)) for many centers at once."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if mu.count == 0:
        return np.zeros(centers.shape[0])
    w = mu.weights
    if np.ptp(w) == 0.0:
        return mu._index.query_counts(centers, r) * float(w[0]) if w.size else np.zeros(centers.shape[0])
    hoods = _neighbors_many(mu, centers, r)
    return np.array([w[idx].sum() for idx in hoods])


def summability_check(mu, ball, k, cfg):
    """Discrete summed-displacement hypothesis on a ball.

    value = r^-k * sum_{r_alpha <= r} sum_{x_j in ball} w_j D(x_j, r_alpha);
    holds when value < delta^2.  The dyadic sum is truncated once all finer
    scales provably contribute zero.
    """
    r = ball.radius
    idx = mu.indices_in_ball(ball)
    if len(idx) == 0:
        return True, 0.0
    w = mu.weights[idx]
    pts = mu.positions[idx]
    total = 0.0
    for s in _dyadic_scales_below(r, mu, k):
        contributions = displacement_profile_many(mu, pts, s, k, cfg)
        total += float(np.add.reduce(contributions * w))
    value = total * r ** (-k)
    return value < cfg.delta ** 2, value


# ---------------------------------------------------------------------------
# effective spanning
# ---------------------------------------------------------------------------

def effective_spanning_points(mu, ball, k, alpha):
    """Greedy search for k+1 atoms that alpha-effectively span a k-plane.

    Returned points p_0..p_k satisfy |p_i - p_0| <= 1/alpha and each p_i lies
    farther than alpha from the affine span of its predecessors.  Returns
    None when the greedy search cannot complete the chain.
    """
    idx = mu.indices_in_ball(ball)
    idx = idx[mu.weights[idx] > 0]
    if len(idx) == 0:
        return None
    pts = mu.positions[idx]
    order = np.argsort(np.linalg.norm(pts - ball.center, axis=1), kind="stable")
    inv_alpha = 1.0 / alpha
    for start in order[: min(len(order), 8)]:
        p0 = pts[start]
        near = pts[np.linalg.norm(pts - p0, axis=1) <= inv_alpha]
        chosen = [p0]
        dirs = np.zeros((0, pts.shape[1]))
        ok = True
        for _ in range(k):
            rel = near - p0
            if dirs.shape[0]:
                rel = rel - rel @ dirs.T @ dirs
            dist = np.linalg.norm(rel, axis=1)
            j = int(np.argmax(dist))
            if dist[j] <= alpha:
                ok = False
                break
            chosen.append(near[j])
            dirs = np.vstack([dirs, rel[j] / dist[j]])
        if ok:
            return [np.array(p) for p in chosen]
    return None
