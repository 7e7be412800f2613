"""Analytic energy-field testbed: closed-form maps with known singular
structure, normalized Dirichlet energy by ball-adapted quadrature, energy
drops across scales, quantitative symmetry distance, quantitative strata,
and the regularity scale.

The normalized energy of a field f over B_r(x) is

    theta_r(x) = r^(2-n) * integral_{B_r(x)} |grad f|^2,

computed on a tensor grid of radial midpoint panels (dyadically refined
toward radii where the integrand is singular) times a high-order angular
rule, with a two-level refinement comparison enforcing the accuracy target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import EmptySupportError, EnergyInfiniteError
from .geometry import AffinePlane, AtomicMeasure, Ball
from .moments import second_moment_spectrum, unit_ball_volume

QUAD_REL_TOL = 1e-4


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class EnergyField:
    """A map f: R^n -> R^m with closed-form gradient.

    `fn(X)` maps (N, n) -> (N, m); `grad(X)` maps (N, n) -> (N, m, n).
    `singular` is None, ("point", p), or ("subspace", AffinePlane); the
    integrand |grad f|^2 is assumed to blow up like distance^-2 there.
    """

    def __init__(self, n, m, fn, grad, tag, singular=None, sphere_valued=False,
                 domain_radius=64.0):
        self.n = n
        self.m = m
        self.fn = fn
        self.grad = grad
        self.tag = tag
        self.singular = singular
        self.sphere_valued = sphere_valued
        self.domain_radius = domain_radius
        self._theta_cache = {}

    def __call__(self, X):
        return self.fn(np.atleast_2d(np.asarray(X, dtype=float)))

    def gradient(self, X):
        return self.grad(np.atleast_2d(np.asarray(X, dtype=float)))

    def grad_sq(self, X):
        G = self.gradient(X)
        return np.einsum("qmi,qmi->q", G, G)

    def singular_codim(self):
        if self.singular is None:
            return None
        kind, obj = self.singular
        if kind == "point":
            return self.n
        return self.n - obj.k

    def singular_distance(self, X):
        """Distance of points to the singular set (inf when there is none)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.singular is None:
            return np.full(X.shape[0], np.inf)
        kind, obj = self.singular
        if kind == "point":
            return np.linalg.norm(X - obj, axis=1)
        return obj.distance(X)


def radial_projection(n=3):
    """f(x) = x/|x|, the degree-zero cone map onto the sphere."""
    if n < 2:
        raise ValueError("needs n >= 2")

    def fn(X):
        nrm = np.linalg.norm(X, axis=1, keepdims=True)
        nrm = np.where(nrm == 0.0, 1.0, nrm)
        return X / nrm

    def grad(X):
        nrm = np.linalg.norm(X, axis=1)
        nrm = np.where(nrm == 0.0, np.inf, nrm)
        eye = np.eye(n)
        return (eye[None, :, :] / nrm[:, None, None]
                - X[:, :, None] * X[:, None, :] / nrm[:, None, None] ** 3)

    return EnergyField(n, n, fn, grad, "radial_projection",
                       singular=("point", np.zeros(n)), sphere_valued=True)


def smoothed_projection(n=3, core=0.05):
    """f(x) = x / sqrt(|x|^2 + core^2): conical far out, smooth at the origin."""

    def fn(X):
        g = np.sqrt((X**2).sum(axis=1, keepdims=True) + core**2)
        return X / g

    def grad(X):
        g = np.sqrt((X**2).sum(axis=1) + core**2)
        eye = np.eye(n)
        return (eye[None, :, :] / g[:, None, None]
                - X[:, :, None] * X[:, None, :] / g[:, None, None] ** 3)

    return EnergyField(n, n, fn, grad, "homogeneous_custom")


def linear_field(A):
    """f(x) = A x; theta_1(0) = |A|_F^2 * vol(B_1)."""
    A = np.asarray(A, dtype=float)
    m, n = A.shape

    def fn(X):
        return X @ A.T

    def grad(X):
        return np.broadcast_to(A[None, :, :], (X.shape[0], m, n)).copy()

    return EnergyField(n, m, fn, grad, "smooth")


def smooth_wave(n=3, freq=1.0):
    """A bounded smooth field with no symmetry and no singular set."""
    a = freq * np.arange(1, n + 1) / math.sqrt(n)

    def fn(X):
        t = X @ a
        return np.stack([np.sin(t), np.cos(0.7 * t + 0.3)], axis=1)

    def grad(X):
        t = X @ a
        g1 = np.cos(t)[:, None] * a[None, :]
        g2 = (-0.7 * np.sin(0.7 * t + 0.3))[:, None] * a[None, :]
        return np.stack([g1, g2], axis=1)

    return EnergyField(n, 2, fn, grad, "smooth")


def k_symmetric_cone(n, k):
    """f(x) = w/|w| with w the component orthogonal to span(e_1..e_k).

    Exactly k-symmetric: 0-homogeneous about the origin and invariant along
    the first k axes; singular on that subspace.
    """
    if n - k < 2:
        raise ValueError("needs n - k >= 2 for a nonconstant cone")
    d = n - k

    def fn(X):
        W = X[:, k:]
        nrm = np.linalg.norm(W, axis=1, keepdims=True)
        nrm = np.where(nrm == 0.0, 1.0, nrm)
        return W / nrm

    def grad(X):
        W = X[:, k:]
        nrm = np.linalg.norm(W, axis=1)
        nrm = np.where(nrm == 0.0, np.inf, nrm)
        eye = np.eye(d)
        inner = (eye[None, :, :] / nrm[:, None, None]
                 - W[:, :, None] * W[:, None, :] / nrm[:, None, None] ** 3)
        out = np.zeros((X.shape[0], d, n))
        out[:, :, k:] = inner
        return out

    plane = AffinePlane.coordinate(n, list(range(k)))
    return EnergyField(n, d, fn, grad, "k_symmetric_extension",
                       singular=("subspace", plane), sphere_valued=True)


def translation_invariant(n, k):
    """A smooth nonhomogeneous field invariant along the first k axes."""
    a = np.zeros(n)
    a[k:] = np.arange(1, n - k + 1, dtype=float)

    def fn(X):
        t = X @ a
        return np.stack([np.sin(t), np.cos(1.3 * t)], axis=1)

    def grad(X):
        t = X @ a
        g1 = np.cos(t)[:, None] * a[None, :]
        g2 = (-1.3 * np.sin(1.3 * t))[:, None] * a[None, :]
        return np.stack([g1, g2], axis=1)

    return EnergyField(n, 2, fn, grad, "k_symmetric_extension")


FIELD_CATALOG = {
    "radial_projection": lambda n=3: radial_projection(n),
    "smoothed_projection": lambda n=3: smoothed_projection(n),
    "smooth": lambda n=3: smooth_wave(n),
}


# ---------------------------------------------------------------------------
# ball quadrature
# ---------------------------------------------------------------------------

_SPHERE_RULE_CACHE = {}
_ROTATION_CACHE = {}


def _sphere_rule(n, order):
    """Nodes/weights on S^{n-1}; exact for high angular polynomial degree."""
    hit = _SPHERE_RULE_CACHE.get((n, order))
    if hit is not None:
        return hit
    out = _sphere_rule_build(n, order)
    _SPHERE_RULE_CACHE[(n, order)] = out
    return out


def _sphere_rule_build(n, order):
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        m = max(8, 4 * order)
        ang = (np.arange(m) + 0.5) * (2 * np.pi / m)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(m, 2 * np.pi / m)
    # polar angle via Gauss-Jacobi in z = cos(theta), weight (1-z^2)^((n-3)/2)
    if n == 3:
        z, wz = roots_legendre(order)
    else:
        z, wz = roots_jacobi(order, (n - 3) / 2.0, (n - 3) / 2.0)
    sub_nodes, sub_w = _sphere_rule(n - 1, order)
    sin_t = np.sqrt(np.maximum(1.0 - z**2, 0.0))
    nodes = np.zeros((len(z) * len(sub_w), n))
    weights = np.zeros(len(z) * len(sub_w))
    row = 0
    for zi, wzi, si in zip(z, wz, sin_t):
        cnt = len(sub_w)
        nodes[row : row + cnt, 0] = zi
        nodes[row : row + cnt, 1:] = si * sub_nodes
        weights[row : row + cnt] = wzi * sub_w
        row += cnt
    return nodes, weights


def _radial_panels(r, critical, base_count, min_width_factor=1e-10):
    """Midpoint panels on [0, r], dyadically split toward critical radii."""
    edges = list(np.linspace(0.0, r, base_count + 1))
    out = []
    min_width = r * min_width_factor
    stack = list(zip(edges[:-1], edges[1:]))
    while stack:
        a, b = stack.pop()
        width = b - a
        near = any(a - width <= c <= b + width for c in critical)
        if near and width > min_width:
            mid = 0.5 * (a + b)
            stack.append((a, mid))
            stack.append((mid, b))
        else:
            out.append((a, b))
    out.sort()
    return out


def _theta_level(field, x, r, panel_count, angular_order):
    n = field.n
    d_sing = float(field.singular_distance(x)[0])
    point_singular = field.singular is not None and field.singular[0] == "point"
    if point_singular and 1e-14 < d_sing <= 1.5 * r:
        return _theta_cap_shells(field, x, r, d_sing, panel_count, angular_order)
    critical = []
    if np.isfinite(d_sing) and d_sing <= r * 1.5:
        critical.append(d_sing)
    panels = _radial_panels(r, critical, panel_count)
    omega, w_ang = _sphere_rule(n, angular_order)
    mids = np.array([0.5 * (a + b) for a, b in panels])
    widths = np.array([b - a for a, b in panels])
    nodes = (x[None, None, :] + mids[:, None, None] * omega[None, :, :]).reshape(-1, n)
    g2 = field.grad_sq(nodes).reshape(len(panels), len(w_ang))
    g2 = np.minimum(g2, 1e30)  # quadrature guard on exactly-singular nodes
    shell = g2 @ w_ang
    integral = float(np.add.reduce(widths * mids ** (n - 1) * shell))
    return integral * r ** (2 - n)


def _theta_cap_shells(field, x, r, d, panel_count, angular_order):
    """Shells centered at the singular point p, clipped to B_r(x).

    The sphere of radius s about p meets the ball in the polar cap
    cos(angle to x - p) >= (s^2 + d^2 - r^2) / (2 s d); the integrand is
    smooth on every such shell, so the angular rule converges fast and the
    only radial kinks sit at s = |d - r| and s = d + r.
    """
    n = field.n
    p = np.asarray(field.singular[1], dtype=float)
    e = (x - p) / d
    basis = _perp_basis(e[None, :], n)  # rows: complement of e
    lo, hi = max(0.0, d - r), d + r
    panels = _radial_panels(hi, [abs(d - r), d], panel_count)
    panels = [(a, b) for a, b in panels if b > lo]
    panels = [(max(a, lo), b) for a, b in panels]
    z_nodes, z_weights = roots_legendre(max(8, angular_order))
    if n > 2:
        sub_nodes, sub_w = _sphere_rule(n - 1, angular_order)
    integral = 0.0
    for a, b in panels:
        s = 0.5 * (a + b)
        width = b - a
        zstar = (s * s + d * d - r * r) / (2.0 * s * d)
        if zstar >= 1.0:
            continue
        zstar = max(zstar, -1.0)
        if n == 2:
            phi_star = math.acos(zstar)
            ang = np.linspace(-phi_star, phi_star, 4 * angular_order + 9)
            mid_ang = 0.5 * (ang[:-1] + ang[1:])
            w_row = np.full(len(mid_ang), ang[1] - ang[0])
            dirs = np.cos(mid_ang)[:, None] * e[None, :] + np.sin(mid_ang)[:, None] * basis
            nodes = p[None, :] + s * dirs
            g2 = np.minimum(field.grad_sq(nodes), 1e30)
            shell_val = float(np.add.reduce(w_row * g2))
        else:
            z = 0.5 * (zstar + 1.0) + 0.5 * (1.0 - zstar) * z_nodes
            wz = 0.5 * (1.0 - zstar) * z_weights * (1.0 - z * z) ** ((n - 3) / 2.0)
            sin_t = np.sqrt(np.maximum(1.0 - z * z, 0.0))
            dirs = (z[:, None, None] * e[None, None, :]
                    + sin_t[:, None, None] * (sub_nodes @ basis)[None, :, :])
            nodes = (p[None, None, :] + s * dirs).reshape(-1, n)
            g2 = np.minimum(field.grad_sq(nodes), 1e30).reshape(len(z), len(sub_w))
            shell_val = float(wz @ g2 @ sub_w)
        integral += width * s ** (n - 1) * shell_val
    return integral * r ** (2 - n)


def theta(field, x, r, panels=24, order=10):
    """Normalized energy theta_r(x), accurate to about 1e-4 relative.

    Two refinement levels are compared and a third is used when they
    disagree beyond the target.  `panels`/`order` set the base radial panel
    count and angular order (raise them to halve the quadrature step).

    Raises EnergyInfiniteError when the ball meets a singular set of
    codimension <= 2 (the dist^-2 integrand is not locally integrable).
    """
    x = np.asarray(x, dtype=float)
    if r <= 0:
        raise ValueError("theta needs r > 0")
    if np.linalg.norm(x) + r > field.domain_radius:
        raise ValueError("ball exceeds the field domain")
    codim = field.singular_codim()
    if codim is not None and codim <= 2:
        if float(field.singular_distance(x)[0]) <= r:
            raise EnergyInfiniteError(
                "energy infinite: singular set of codimension <= 2 meets the ball"
            )
    key = (x.tobytes(), float(r), panels, order)
    hit = field._theta_cache.get(key)
    if hit is not None:
        return hit
    coarse = _theta_level(field, x, r, panels, order)
    fine = _theta_level(field, x, r, 2 * panels, order + 6)
    if abs(fine - coarse) > QUAD_REL_TOL * max(abs(fine), 1e-12):
        fine = _theta_level(field, x, r, 4 * panels, order + 14)
    field._theta_cache[key] = fine
    return fine


def energy_drop(field, x, s, r):
    """W_{s,r}(x) = theta_r(x) - theta_s(x) >= 0 up to quadrature slack."""
    if s > r:
        raise ValueError("energy_drop needs s <= r")
    return theta(field, x, r) - theta(field, x, s)


@dataclass
class EnergyPoint:
    x: np.ndarray
    r: float
    theta: float
    drops: list  # (alpha, W_alpha) with W_alpha = theta_{2^-(a-3)} - theta_{2^-a}


def energy_point(field, x, r, alpha_range=(3, 6)):
    """theta at (x, r) plus the standard three-scale dyadic drops."""
    drops = []
    for a in range(alpha_range[0], alpha_range[1] + 1):
        drops.append((a, theta(field, x, 2.0 ** (3 - a)) - theta(field, x, 2.0**-a)))
    return EnergyPoint(x=np.asarray(x, dtype=float), r=r, theta=theta(field, x, r),
                       drops=drops)


# ---------------------------------------------------------------------------
# symmetry distance
# ---------------------------------------------------------------------------

@dataclass
class SymmetryResult:
    value: float
    plane: AffinePlane | None
    homogeneity_point: np.ndarray


def grassmann_candidates(n, k, count, seed=0):
    """Deterministic low-discrepancy sample of k-frames in R^n."""
    if k == 0:
        return [np.zeros((0, n))]
    from scipy.stats import qmc
    from scipy.special import ndtri

    h = qmc.Halton(d=n * k, scramble=True, seed=seed)
    raw = h.random(count)
    raw = np.clip(raw, 1e-12, 1 - 1e-12)
    gauss = ndtri(raw).reshape(count, n, k)
    frames = []
    for G in gauss:
        Q, _ = np.linalg.qr(G)
        frames.append(Q.T.copy())
    return frames


def _panel_rotation(n, index):
    hit = _ROTATION_CACHE.get((n, index))
    if hit is not None:
        return hit
    rng = np.random.default_rng(1000 + index)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    _ROTATION_CACHE[(n, index)] = Q
    return Q


def _ball_quadrature(field, center, r, panel_count=10, angular_order=10):
    """Nodes/weights over the ball; the angular rule is rotated per shell so
    the node directions do not repeat (repetition lets an adversarial plane
    overfit the binned competitor)."""
    d_sing = float(field.singular_distance(center)[0])
    critical = [d_sing] if np.isfinite(d_sing) and d_sing <= 1.5 * r else []
    panels = _radial_panels(r, critical, panel_count, min_width_factor=1e-6)
    omega, w_ang = _sphere_rule(field.n, angular_order)
    mids = np.array([0.5 * (a + b) for a, b in panels])
    widths = np.array([b - a for a, b in panels])
    blocks = []
    for i, s in enumerate(mids):
        blocks.append(s * omega @ _panel_rotation(field.n, i).T)
    offsets = np.concatenate(blocks, axis=0)
    weights = (widths * mids ** (field.n - 1))[:, None] * w_ang[None, :]
    return offsets, weights.reshape(-1)


def _direction_bins(dirs, bin_spec):
    """Assign unit vectors to direction bins; returns integer labels."""
    d = dirs.shape[1]
    if d == 1:
        return (dirs[:, 0] < 0).astype(int)
    if d == 2:
        count = bin_spec
        ang = np.arctan2(dirs[:, 1], dirs[:, 0])
        return np.floor((ang + np.pi) / (2 * np.pi) * count).astype(int) % count
    # d >= 3: latitude-longitude boxes on the first two angles
    lat = np.clip(dirs[:, 0], -1.0, 1.0)
    band = np.floor((lat + 1.0) / 2.0 * bin_spec).astype(int) % bin_spec
    ang = np.arctan2(dirs[:, 2] if d > 2 else dirs[:, 1], dirs[:, 1])
    sector = np.floor((ang + np.pi) / (2 * np.pi) * (2 * bin_spec)).astype(int) % (2 * bin_spec)
    return band * (2 * bin_spec) + sector


def _conditional_mean_residual(values, weights, labels):
    """Weighted mean of |v - E[v | label]|^2: the optimal symmetric competitor
    among label-measurable functions."""
    total = weights.sum()
    order = np.argsort(labels, kind="stable")
    lab = labels[order]
    v = values[order]
    w = weights[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(lab)) + 1])
    w_sums = np.add.reduceat(w, starts)
    means = np.add.reduceat(w[:, None] * v, starts, axis=0) / w_sums[:, None]
    expanded = np.repeat(means, np.diff(np.concatenate([starts, [len(lab)]])), axis=0)
    res = float((w * ((v - expanded) ** 2).sum(axis=1)).sum() / total)
    return res


def symmetry_distance(field, ball, k, plane_candidates=None, bins=24,
                      panel_count=10, angular_order=8, stop_below=None):
    """Upper bound for the L2 distance of f on the ball from the nearest
    k-symmetric competitor.

    For each candidate plane V the competitor is the conditional mean of f
    over orbits {center + s * (v + V-shift)}: binned by the direction of the
    V-orthogonal component, which makes it exactly 0-homogeneous about the
    center and V-invariant.  The reported value is the minimum over the
    candidates; it is an upper bound of the true infimum.
    """
    center = ball.center
    offsets, weights = _ball_quadrature(field, center, ball.radius,
                                        panel_count, angular_order)
    values = field(center[None, :] + offsets)
    total = weights.sum()
    mean = (weights[:, None] * values).sum(axis=0) / total
    const_value = float((weights * ((values - mean) ** 2).sum(axis=1)).sum() / total)

    if k >= field.n:
        return SymmetryResult(value=const_value, plane=None, homogeneity_point=center)
    if stop_below is not None and const_value < stop_below:
        return SymmetryResult(value=const_value, plane=None, homogeneity_point=center)
    if plane_candidates is None:
        plane_candidates = grassmann_candidates(field.n, k, 64)

    best = const_value  # the constant map is k-symmetric for every k
    best_plane = None
    unit = offsets / np.linalg.norm(offsets, axis=1, keepdims=True)
    for frame in plane_candidates:
        frame = np.atleast_2d(frame) if k > 0 else np.zeros((0, field.n))
        if k == 0:
            perp_unit = unit
        else:
            perp = offsets - offsets @ frame.T @ frame
            nrm = np.linalg.norm(perp, axis=1, keepdims=True)
            safe = np.where(nrm <= 1e-14, 1.0, nrm)
            perp_unit = np.where(nrm <= 1e-14, 0.0, perp / safe)
        # competitor 1: conditional mean over direction bins
        if k == 0:
            dirs = perp_unit
        else:
            basis = _perp_basis(frame, field.n)
            dirs = perp_unit @ basis.T
            renrm = np.linalg.norm(dirs, axis=1, keepdims=True)
            dirs = dirs / np.where(renrm == 0.0, 1.0, renrm)
        labels = _direction_bins(dirs, bins)
        val = _conditional_mean_residual(values, weights, labels)
        # competitor 2: pullback through the orbit representative; exact
        # for fields that are k-symmetric with this plane
        rep_values = field(center[None, :] + perp_unit)
        val_rep = float(
            (weights * ((values - rep_values) ** 2).sum(axis=1)).sum() / total
        )
        val = min(val, val_rep)
        if val < best:
            best = val
            best_plane = (AffinePlane(center, frame, _skip_checks=True)
                          if k > 0 else AffinePlane(center))
            if stop_below is not None and best < stop_below:
                break
    return SymmetryResult(value=best, plane=best_plane, homogeneity_point=center)


def _perp_basis(frame, n):
    frame = np.atleast_2d(frame)
    if frame.shape[0] == 0:
        return np.eye(n)
    Q, _ = np.linalg.qr(np.hstack([frame.T, np.eye(n)]))
    return Q[:, frame.shape[0] :].T


# ---------------------------------------------------------------------------
# quantitative strata
# ---------------------------------------------------------------------------

def _dyadic_scales_in(r_min, r_max):
    """Dyadic radii 2^-a with r_min <= 2^-a < r_max, ascending."""
    out = []
    a = math.floor(-math.log2(max(r_min, 1e-300)))
    while 2.0**-a < r_min - 1e-15:
        a -= 1
    while 2.0**-a >= r_min - 1e-15:
        if 2.0**-a < r_max - 1e-15:
            out.append(2.0**-a)
        a += 1
        if a > 60:
            break
    return sorted(out)


def quantitative_stratum(field, k, epsilon, r, grid_step, center=None, radius=1.0,
                         plane_count=48, bins=16):
    """Grid points of B_radius(center) with no (k+1, epsilon)-symmetric ball
    at any dyadic scale in [r, radius).

    Membership uses the sampled upper bound of the symmetry distance, so it
    is approximate in the outward direction (see module docs).  Weights are
    the k-content grid_step^k of each grid cell.
    """
    n = field.n
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    axes = [np.arange(-radius, radius + grid_step * 0.5, grid_step)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1) + center
    pts = pts[np.linalg.norm(pts - center, axis=1) <= radius]
    scales = _dyadic_scales_in(r, radius)
    sym_k = k + 1
    candidates = grassmann_candidates(n, sym_k, plane_count) if sym_k < n else None
    members = []
    for p in pts:
        symmetric_somewhere = False
        for s in scales:
            res = symmetry_distance(field, Ball(p, s), sym_k,
                                    plane_candidates=candidates, bins=bins,
                                    stop_below=epsilon)
            if res.value < epsilon:
                symmetric_somewhere = True
                break
        if not symmetric_somewhere:
            members.append(p)
    if not members:
        return AtomicMeasure(np.zeros((0, n)), np.zeros(0))
    members = np.array(members)
    return AtomicMeasure(members, np.full(len(members), grid_step**k))


# ---------------------------------------------------------------------------
# regularity scale
# ---------------------------------------------------------------------------

def _sampled_grad_sup(field, x, r, angular_order=6, radial_count=6):
    """Sampled sup of |grad f| over the closed ball, biased toward the
    nearest singular point (where the true sup is attained for cone maps)."""
    samples = [x[None, :]]
    omega, _ = _sphere_rule(field.n, angular_order)
    for frac in np.linspace(1.0 / radial_count, 1.0, radial_count):
        samples.append(x[None, :] + frac * r * omega)
    if field.singular is not None:
        kind, obj = field.singular
        target = np.asarray(obj) if kind == "point" else obj.project(x)
        gap = np.linalg.norm(target - x)
        if gap > 0:
            step = min(r, gap) * (target - x) / gap
            samples.append((x + step)[None, :])
            samples.append((x + step * (1.0 - 1e-9))[None, :])
        else:
            return np.inf
    pts = np.vstack(samples)
    d = field.singular_distance(pts)
    if np.any(d <= 1e-14):
        return np.inf
    G = field.gradient(pts)
    return float(np.sqrt(np.einsum("qmi,qmi->q", G, G)).max())


def regularity_scale(field, x, cap=1.0):
    """Largest r <= cap with sampled sup_{B_r(x)} |grad f| <= 1/r.

    Bisection keeps a monotone bracket; returns 0 at singular points.
    """
    x = np.asarray(x, dtype=float)

    def ok(r):
        return _sampled_grad_sup(field, x, r) <= 1.0 / r

    if ok(cap):
        return cap
    lo, hi = 0.0, cap
    if float(field.singular_distance(x)[0]) <= 1e-14:
        return 0.0
    tiny = cap * 1e-9
    if not ok(tiny):
        return 0.0
    lo = tiny
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# best-approximation inequality check
# ---------------------------------------------------------------------------

def best_approx_check(field, mu, p, r, k, epsilon, delta=0.1, plane_count=48,
                      quad_panels=24, quad_order=10):
    """Evaluate both sides of the subspace-approximation inequality.

    lhs: displacement of mu at (p, r) with the mass cutoff disabled (the
    fitted infimum).  rhs: r^-k times the mu-integral of the three-octave
    energy drop theta_{8r} - theta_r.  Symmetry preconditions on B_{9r}(p)
    are evaluated and reported, not enforced.
    """
    p = np.asarray(p, dtype=float)
    ball = Ball(p, r)
    idx = mu.indices_in_ball(ball)
    if len(idx) == 0:
        raise EmptySupportError("no atoms in the evaluation ball")
    sub = mu.subset(idx)
    spec = second_moment_spectrum(sub, ball)
    lhs = spec.residual(k) * r ** (-(k + 2))
    drops = np.array([
        theta(field, q, 8 * r, panels=quad_panels, order=quad_order)
        - theta(field, q, r, panels=quad_panels, order=quad_order)
        for q in sub.positions
    ])
    rhs = float(np.dot(sub.weights, np.maximum(drops, 0.0))) * r ** (-k)
    big = Ball(p, 9 * r)
    zero_sym = symmetry_distance(field, big, 0).value
    k1_sym = symmetry_distance(
        field, big, k + 1,
        plane_candidates=grassmann_candidates(field.n, k + 1, plane_count)
        if k + 1 < field.n else None,
    ).value
    return {
        "lhs": float(lhs),
        "rhs": rhs,
        "ratio": float(lhs / rhs) if rhs > 0 else math.inf,
        "zero_symmetric_ok": bool(zero_sym < delta),
        "zero_symmetry_value": float(zero_sym),
        "not_k1_symmetric_ok": bool(k1_sym > epsilon),
        "k1_symmetry_value": float(k1_sym),
    }
