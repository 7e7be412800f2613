import numpy as np
import pytest

from msgeom.errors import SeparationError
from msgeom.fixtures import circle_cloud, perturbed_plane_cloud, plane_cloud, sine_graph_cloud
from msgeom.geometry import AffinePlane, AtomicMeasure, Ball
from msgeom.moments import DisplacementConfig, dyadic_profile
from msgeom.reifenberg import (
    PartitionOfUnity,
    SigmaMap,
    bilipschitz_distortion,
    build_partition,
    measure_estimate,
    reconstruct,
    sigma_apply,
)


def grid_points(low, high, count, dim, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, size=(count, dim))


class TestPartition:
    def test_single_center(self):
        pou = build_partition([[0.0, 0.0]], 1.0)
        inside = grid_points(-2, 2, 400, 2, seed=1)
        w = pou.weights(inside)
        near = np.linalg.norm(inside, axis=1) <= 2.0
        far = np.linalg.norm(inside, axis=1) >= 3.0
        assert np.allclose(w[near, 0], 1.0)
        assert np.allclose(w[far, 0], 0.0)

    def test_two_centers_sum_to_one(self):
        r = 0.8
        pou = build_partition([[0.0, 0.0], [r, 0.0]], r)
        pts = grid_points(-3, 3, 3000, 2, seed=2)
        w = pou.weights(pts)
        assert np.all(w >= 0) and np.all(w <= 1)
        d = np.minimum(
            np.linalg.norm(pts, axis=1), np.linalg.norm(pts - [r, 0.0], axis=1)
        )
        on_union = d <= 2 * r
        assert np.allclose(w[on_union].sum(axis=1), 1.0, atol=1e-8)

    def test_support_radius(self):
        pou = build_partition([[1.0, -1.0, 0.0]], 0.5)
        pts = grid_points(-3, 3, 2000, 3, seed=3)
        w = pou.weights(pts)
        outside = np.linalg.norm(pts - [1.0, -1.0, 0.0], axis=1) >= 1.5
        assert np.allclose(w[outside, 0], 0.0)

    def test_gradient_bound(self):
        # sampled |grad lambda| * r <= C(n); record C
        for r in (0.25, 1.0, 3.0):
            pou = build_partition([[0.0, 0.0], [1.5 * r, 0.0], [0.0, 1.7 * r]], r)
            pts = grid_points(-3 * r, 3 * r, 200, 2, seed=4)
            worst = 0.0
            for p in pts:
                g = pou.weight_gradients(p)
                worst = max(worst, np.abs(g).max())
            assert worst * r <= 8.0  # measured C(2) ~ 1.5 with normalization slack

    def test_separation_violation(self):
        with pytest.raises(SeparationError) as err:
            build_partition([[0.0, 0.0], [0.3, 0.0]], 1.0)
        assert err.value.pair == (0, 1)

    def test_leftover(self):
        pou = build_partition([[0.0, 0.0]], 1.0)
        assert pou.leftover([[0.0, 0.0]])[0] == pytest.approx(0.0)
        assert pou.leftover([[10.0, 0.0]])[0] == pytest.approx(1.0)


class TestSigma:
    def test_exact_projection_when_planes_coincide(self):
        # all V_i equal, p_i on the plane: sigma is the affine projection
        plane = AffinePlane.coordinate(2, [0])
        centers = [[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]
        planes = [AffinePlane([c[0], 0.0], [[1.0, 0.0]]) for c in centers]
        sig = SigmaMap(build_partition(centers, 1.0), planes)
        pts = grid_points(-1, 1, 100, 2, seed=5)
        pts[:, 1] *= 0.5
        full = np.abs(pts[:, 0]) <= 1.0  # within B_2r of some center
        got = sig.apply(pts)
        expected = np.stack([pts[:, 0], np.zeros(len(pts))], axis=1)
        assert np.allclose(got[full], expected[full], atol=1e-12)

    def test_identity_outside_support(self):
        plane = AffinePlane.coordinate(3, [0, 1])
        sig = SigmaMap(build_partition([[0.0, 0.0, 0.0]], 0.5), [plane])
        x = np.array([5.0, 0.0, 2.0])
        assert np.allclose(sigma_apply(sig, x), x)

    def test_identity_where_psi_one(self):
        plane = AffinePlane.coordinate(2, [0])
        sig = SigmaMap(build_partition([[0.0, 0.0]], 1.0), [plane])
        x = np.array([2.9, 0.1])  # outside B_2r... inside B_3r: moved
        y = np.array([3.5, 0.1])  # outside B_3r: fixed
        assert np.allclose(sig.apply(y), y)

    def test_near_projection_error_bound(self):
        # coherent planes (d_G <= delta, offsets <= delta r):
        # sigma = projection + e with |e| <= c delta / r * r = c delta,
        # and |grad e| <= c delta / r via finite differences.
        rng = np.random.default_rng(6)
        delta = 0.01
        r = 1.0
        base_plane = AffinePlane.coordinate(3, [0, 1])
        centers = np.array(
            [[x, y, 0.0] for x in (-1.0, 0.0, 1.0) for y in (-1.0, 0.0, 1.0)]
        )
        planes = []
        for c in centers:
            tilt = rng.normal(size=(2, 3)) * delta * 0.4
            dirs = base_plane.directions + tilt
            base = c + np.array([0.0, 0.0, rng.uniform(-delta, delta) * r * 0.5])
            planes.append(AffinePlane.from_spanning(base, dirs))
        sig = SigmaMap(build_partition(centers, r), planes)
        sup_e = 0.0
        sup_grad = 0.0
        pou = sig.partition
        for _ in range(300):
            x = rng.uniform(-0.8, 0.8, size=3)
            x[2] *= delta
            if pou.leftover([x])[0] > 1e-12:
                continue
            e = sig.apply(x) - base_plane.project(x)
            sup_e = max(sup_e, np.linalg.norm(e))
            J = sig.jacobian(x)
            Je = J - base_plane.projection_matrix()
            sup_grad = max(sup_grad, np.abs(Je).max())
        c = 30.0
        assert sup_e <= c * delta / r
        assert sup_grad <= c * delta / r

    def test_jacobian_finite(self):
        plane = AffinePlane.coordinate(2, [0])
        sig = SigmaMap(build_partition([[0.0, 0.0]], 1.0), [plane])
        for x in ([0.0, 0.0], [2.5, 0.3], [2.999, 0.0], [4.0, 4.0]):
            assert np.all(np.isfinite(sig.jacobian(np.array(x))))

    def test_graph_image_stays_graph(self):
        # the image of a sampled graph under sigma with delta-coherent data is
        # again a graph over the base plane, with norm <= c (delta + delta');
        # the measured constant must be stable and monotone across delta
        rng = np.random.default_rng(77)
        base = AffinePlane.coordinate(3, [0, 1])
        r = 1.0
        centers = np.array([[x, y, 0.0] for x in (-1.2, 0.0, 1.2)
                            for y in (-1.2, 0.0, 1.2)])
        norms = []
        for delta in (0.02, 0.01, 0.005):
            planes = []
            for c in centers:
                dirs = base.directions + delta * 0.4 * rng.normal(size=(2, 3))
                p = c + np.array([0.0, 0.0, delta * 0.4 * rng.uniform(-1, 1)])
                planes.append(AffinePlane.from_spanning(p, dirs))
            sig = SigmaMap(build_partition(centers, r), planes)
            delta_prime = delta  # input graph g(u) with |g|/r + Lip(g) ~ delta
            us = rng.uniform(-0.9, 0.9, size=(400, 2))
            g = delta_prime * np.sin(3.0 * us[:, :1]) * np.cos(2.0 * us[:, 1:])
            pts = np.concatenate([us, g], axis=1)
            out = sig.apply(pts)
            heights = np.abs(out[:, 2])
            norms.append(heights.max() / (delta + delta_prime))
        assert max(norms) <= 10.0  # measured c(n)/rho for this layout
        # larger delta never produces a relatively smaller graph by luck alone;
        # the normalized norms stay within one band
        assert max(norms) <= 4.0 * max(min(norms), 1e-6)


class TestReconstructFlat:
    @pytest.mark.parametrize("n,k,count", [(2, 1, 600), (3, 2, 3000)])
    def test_plane_reproduced_at_all_scales(self, n, k, count):
        mu = plane_cloud(n, k, count=count, extent=1.0, seed=7)
        cfg = DisplacementConfig.default(k)
        atlas = reconstruct(mu, k, cfg, max_scale_count=4)
        plane = AffinePlane.coordinate(n, list(range(k)))
        for rec, samples in zip(atlas.scales, atlas.samples_per_scale):
            assert np.max(plane.distance(samples)) <= 1e-10
            for patch in rec.patches:
                assert plane.distance(patch.plane.base) <= 1e-10
                assert np.max(plane.distance(patch.plane.base + patch.plane.directions)) <= 1e-10
        # phi = identity on samples
        moved = atlas.apply_phi(atlas.initial_samples)
        assert np.max(np.linalg.norm(moved - atlas.initial_samples, axis=1)) <= 1e-10
        for step in range(1, len(atlas.scales)):
            assert bilipschitz_distortion(atlas, step) == pytest.approx(1.0, abs=1e-9)

    def test_flat_measure_matches_disk(self):
        from msgeom.moments import unit_ball_volume

        for n, k in [(2, 1), (3, 2)]:
            mu = plane_cloud(n, k, count=800, extent=1.0, seed=8)
            cfg = DisplacementConfig.default(k)
            atlas = reconstruct(mu, k, cfg, max_scale_count=3)
            r = 0.4
            got = measure_estimate(atlas, Ball(np.zeros(n), r))
            assert got == pytest.approx(unit_ball_volume(k) * r**k, abs=1e-6)

    def test_coverage_of_atoms(self):
        mu = plane_cloud(2, 1, count=500, extent=1.0, seed=9)
        cfg = DisplacementConfig.default(1)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=4)
        assert atlas.covered.all()
        assert atlas.summability_ok


class TestReconstructCircle:
    def test_circle_hausdorff_and_length(self):
        noise = 1e-3
        mu = circle_cloud(count=2000, noise=noise, seed=10)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=6, flat_tol=0.12)
        # distance from manifold samples to the true circle
        radial = np.abs(np.linalg.norm(atlas.final_samples, axis=1) - 1.0)
        assert radial.max() <= 10 * noise
        # every atom is close to the manifold
        assert atlas.atom_distances.max() <= 10 * noise + atlas.coverage_tol
        # total length ~ 2 pi
        length = measure_estimate(atlas, Ball(np.zeros(2), 1.3))
        assert length == pytest.approx(2 * np.pi, rel=0.02)

    def test_circle_arc_measure(self):
        # B_1 around a point on the circle cuts an arc of length 2 pi / 3
        mu = circle_cloud(count=2000, noise=0.0, seed=11)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=6, flat_tol=0.12)
        got = measure_estimate(atlas, Ball([1.0, 0.0], 1.0))
        # oracle: arc-length integral; chord <= 1 iff |theta| <= pi/3
        assert got == pytest.approx(2 * np.pi / 3, rel=0.02)

    def test_per_step_motion_bound(self):
        mu = circle_cloud(count=1500, noise=1e-3, seed=12)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=5, flat_tol=0.12)
        for rec in atlas.scales[1:]:
            if rec.sigma is None:
                continue
            # motion <= c * flatness * r with a measured constant
            bound = max(rec.flatness, 1e-3) * rec.radius
            assert rec.motion_max <= 25.0 * bound

    def test_total_distortion_accumulates(self):
        # circle: curvature-driven per-step terms; product stays bounded
        mu = circle_cloud(count=1500, noise=1e-3, seed=13)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=5, flat_tol=0.12)
        assert atlas.total_distortion_bound() <= 1.12
        # low-curvature graph: the quadratic accumulation keeps phi near isometric
        mu2 = sine_graph_cloud(count=6000, amplitude=0.05)
        atlas2 = reconstruct(mu2, 1, cfg, max_scale_count=5, check_summability=False)
        assert atlas2.total_distortion_bound() <= 1.01


class TestReconstructGraph:
    def test_sine_graph_patches_flat(self):
        mu = sine_graph_cloud(count=10_000, amplitude=0.05)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=5, check_summability=False)
        # measured flatness from the displacement profile drives the bound
        prof = dyadic_profile(mu, np.zeros(2), 1, 1, 5, cfg)
        delta_measured = float(np.sqrt(np.maximum(prof.displacements, 0.0)).max())
        for rec in atlas.scales:
            for patch in rec.patches:
                assert patch.graph_lip <= 60.0 * max(delta_measured, 1e-4)

    def test_perturbed_plane_measure(self):
        mu = perturbed_plane_cloud(2, 1, delta=1e-3, count=4000, seed=14)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=4)
        r = 0.5
        got = measure_estimate(atlas, Ball(np.zeros(2), r))
        assert got == pytest.approx(2 * r, rel=0.01)


class TestCoverState:
    def test_per_scale_accounting(self):
        # every atom is near a good center, or near a recorded bad ball, or
        # ends up flagged uncovered at the end
        mu = circle_cloud(count=1200, noise=1e-3, seed=20)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=5, flat_tol=0.12,
                            check_summability=False)
        for rec in atlas.scales[1:]:
            state = rec.cover_state
            if state is None or len(state.good_centers) == 0:
                continue
            r = rec.radius
            for a in mu.positions[::37]:
                d_good = np.linalg.norm(state.good_centers - a, axis=1).min()
                d_bad = (np.linalg.norm(state.bad_centers - a, axis=1).min()
                         if state.bad_centers.shape[0] else np.inf)
                assert d_good <= r or d_bad <= r


class TestInverse:
    def test_newton_inverse_round_trip(self):
        mu = circle_cloud(count=1500, noise=1e-3, seed=15)
        cfg = DisplacementConfig.default(1, delta=0.25)
        atlas = reconstruct(mu, 1, cfg, max_scale_count=5, flat_tol=0.12)
        rng = np.random.default_rng(16)
        final = atlas.final_samples
        for j in rng.integers(0, len(final), size=10):
            y = final[j]
            x = atlas.invert(y)
            assert np.linalg.norm(atlas.apply_phi(x) - y) <= 1e-8
