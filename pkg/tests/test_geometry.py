import numpy as np
import pytest

from app.common.errors import RejectedInputError, UnsupportedOperationError
from app.cvpm import geometry as geo
from app.cvpm.geometry import LiftedPolytope, Polytope


class TestConstruction:
    def test_from_box_membership(self, unit_box):
        assert geo.contains(unit_box, [0.5, -0.5])
        assert geo.contains(unit_box, [1.0, 1.0])
        assert not geo.contains(unit_box, [1.1, 0.0])

    def test_degenerate_box_rejected(self):
        with pytest.raises(RejectedInputError):
            geo.from_box([0.0, 1.0], [0.0, 2.0])

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(RejectedInputError):
            Polytope(np.eye(2), np.ones(3))

    def test_arrays_are_read_only(self, unit_box):
        with pytest.raises(ValueError):
            unit_box.g[0] = 10.0

    def test_dict_round_trip_checks_dim(self, unit_box):
        data = unit_box.to_dict()
        assert geo.same_set(Polytope.from_dict(data), unit_box)
        data["dim"] = 3
        with pytest.raises(RejectedInputError):
            Polytope.from_dict(data)

    def test_contradictory_zero_row_normalizes_to_empty(self):
        P = Polytope(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([1.0, -1.0]))
        assert geo.is_empty(P.normalized())


class TestMembershipAndLp:
    def test_empty_polytope_has_farkas_certificate(self):
        P = Polytope(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
        point, status = geo.feasible_point(P)
        assert point is None
        assert status.kind == "infeasible"
        y = status.certificate
        assert y is not None
        assert np.all(y >= -1e-9)
        assert np.allclose(P.F.T @ y, 0.0, atol=1e-8)
        assert P.g @ y < 0

    def test_support_of_box(self):
        P = geo.from_box([0.0, -1.0], [2.0, 3.0])
        assert geo.support(P, [1.0, 1.0]) == pytest.approx(5.0)
        assert geo.support(P, [-1.0, 0.0]) == pytest.approx(0.0)

    def test_chebyshev_center_of_rectangle(self):
        center, radius = geo.chebyshev_center(geo.from_box([0.0, 0.0], [2.0, 4.0]))
        assert radius == pytest.approx(1.0)
        assert center[0] == pytest.approx(1.0)


class TestSetAlgebra:
    def test_pontryagin_difference_of_boxes(self):
        big = geo.from_box([-2.0, -2.0], [2.0, 2.0])
        small = geo.from_box([-0.5, -0.5], [0.5, 0.5])
        expected = geo.from_box([-1.5, -1.5], [1.5, 1.5])
        assert geo.same_set(geo.pontryagin_diff(big, small), expected, 1e-8)

    def test_pontryagin_difference_can_be_empty(self, unit_box):
        big = geo.from_box([-3.0, -3.0], [3.0, 3.0])
        assert geo.is_empty(geo.pontryagin_diff(unit_box, big))

    def test_minkowski_sum_of_boxes(self, unit_box):
        expected = geo.from_box([-2.0, -2.0], [2.0, 2.0])
        assert geo.same_set(geo.minkowski_sum(unit_box, unit_box), expected, 1e-8)

    def test_minkowski_sum_then_difference_recovers_set(self, unit_box):
        Q = geo.hull_from_points([[0.0, 0.0], [0.3, 0.0], [0.0, 0.2]])
        grown = geo.minkowski_sum(unit_box, Q)
        assert geo.same_set(geo.pontryagin_diff(grown, Q), unit_box, 1e-7)

    def test_implicit_minkowski_sum(self, unit_box):
        lifted = geo.minkowski_sum(unit_box, unit_box, explicit=False)
        assert isinstance(lifted, LiftedPolytope)
        assert lifted.contains([1.9, -1.9])
        assert not lifted.contains([2.1, 0.0])
        assert geo.same_set(lifted.project(), geo.from_box([-2.0, -2.0], [2.0, 2.0]), 1e-8)

    def test_explicit_minkowski_sum_limited_to_three_dims(self):
        box4 = geo.from_box(-np.ones(4), np.ones(4))
        with pytest.raises(UnsupportedOperationError):
            geo.minkowski_sum(box4, box4)

    def test_affine_image_of_rotation_keeps_area(self, unit_box):
        theta = 0.3
        R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        assert geo.volume_2d(geo.affine_image(R, unit_box)) == pytest.approx(4.0, rel=1e-9)

    def test_affine_image_of_singular_map(self, unit_box):
        image = geo.affine_image(np.array([[1.0, 1.0]]), unit_box)
        assert image.dim == 1
        assert geo.support(image, [1.0]) == pytest.approx(2.0)
        assert geo.support(image, [-1.0]) == pytest.approx(2.0)

    def test_affine_preimage(self, unit_box):
        pre = geo.affine_preimage(unit_box, 2.0 * np.eye(2))
        assert geo.same_set(pre, geo.from_box([-0.5, -0.5], [0.5, 0.5]), 1e-9)

    def test_translate(self, unit_box):
        moved = geo.translate(unit_box, [1.0, 2.0])
        assert geo.contains(moved, [2.0, 3.0])
        assert not geo.contains(moved, [-0.5, 0.0])

    def test_cartesian_power(self, unit_box):
        P = geo.cartesian_power(unit_box, 3)
        assert P.dim == 6
        assert geo.contains(P, np.full(6, 0.9))
        assert not geo.contains(P, np.array([0, 0, 0, 0, 0, 1.5]))

    def test_intersect(self, unit_box):
        shifted = geo.translate(unit_box, [1.5, 0.0])
        both = geo.intersect(unit_box, shifted)
        assert geo.same_set(both, geo.from_box([0.5, -1.0], [1.0, 1.0]), 1e-9)
        assert geo.is_empty(geo.intersect(unit_box, geo.translate(unit_box, [3.0, 0.0])))
        with pytest.raises(RejectedInputError):
            geo.intersect(unit_box, geo.from_box([-1.0], [1.0]))

    def test_subset(self, unit_box):
        inner = geo.from_box([-0.5, -0.5], [0.5, 0.5])
        assert geo.is_subset(inner, unit_box)
        assert not geo.is_subset(unit_box, inner)


class TestReduction:
    def test_remove_redundancy_drops_loose_and_duplicate_rows(self, unit_box):
        F = np.vstack([unit_box.F, [[1.0, 0.0], [2.0, 0.0], [1.0, 1.0]]])
        g = np.concatenate([unit_box.g, [5.0, 2.0, 10.0]])
        reduced = geo.remove_redundancy(Polytope(F, g))
        assert reduced.n_constraints == 4
        assert geo.same_set(reduced, unit_box)

    def test_remove_redundancy_of_empty_set_rejected(self):
        with pytest.raises(RejectedInputError):
            geo.remove_redundancy(geo.empty_polytope(2))

    def test_projection_of_box(self):
        box3 = geo.from_box([-1.0, -2.0, -3.0], [1.0, 2.0, 3.0])
        assert geo.same_set(geo.project(box3, [0, 2]), geo.from_box([-1.0, -3.0], [1.0, 3.0]), 1e-9)

    def test_projection_of_coupled_set(self):
        # {(x, u) : |u| ≤ 1, |x + u| ≤ 1} 의 x 사영 = [-2, 2]
        F = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 1.0], [-1.0, -1.0]])
        P = Polytope(F, np.ones(4))
        projected = geo.project(P, [0])
        assert geo.support(projected, [1.0]) == pytest.approx(2.0)
        assert geo.support(projected, [-1.0]) == pytest.approx(2.0)

    def test_projection_dimension_limit(self):
        box5 = geo.from_box(-np.ones(5), np.ones(5))
        with pytest.raises(UnsupportedOperationError):
            geo.project(box5, [0, 1, 2, 3])


class TestVerticesAndVolume:
    def test_box_vertices_counter_clockwise(self, unit_box):
        V = np.asarray(geo.vertices(unit_box))
        assert len(V) == 4
        x, y = V[:, 0], V[:, 1]
        signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        assert signed > 0

    def test_volume_of_boxes(self):
        assert geo.volume_2d(geo.from_box([0.0, 2.8], [2.0, 3.8])) == pytest.approx(2.0, abs=1e-12)
        assert geo.volume(geo.from_box([0, 0, 0], [1.0, 2.0, 3.0])) == pytest.approx(6.0, rel=1e-9)
        assert geo.volume(geo.from_box([-1.0], [2.0])) == pytest.approx(3.0)

    def test_vertices_limited_to_three_dims(self):
        with pytest.raises(UnsupportedOperationError):
            geo.vertices(geo.from_box(-np.ones(4), np.ones(4)))

    def test_hull_contains_points(self, rng):
        pts = rng.normal(size=(40, 2))
        hull = geo.hull_from_points(pts)
        assert all(geo.contains(hull, p, 1e-9) for p in pts)
        assert len(geo.vertices(hull)) <= 40

    def test_hull_of_collinear_points(self):
        hull = geo.hull_from_points([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        assert geo.contains(hull, [1.5, 1.5], 1e-9)
        assert not geo.contains(hull, [1.0, 0.0], 1e-6)
        assert geo.volume_2d(hull) == pytest.approx(0.0, abs=1e-9)


class TestConverterSets:
    G = np.array([[0.02, 0.00], [0.01, 0.19]])
    B = np.array([[0.30], [0.06]])
    W = geo.from_box([-0.2, -0.2], [0.2, 0.2])
    X_P = geo.from_box([0.0, 2.8], [2.0, 3.8])

    def test_scaled_disturbance_set(self):
        GW = geo.affine_image(self.G, self.W)
        assert geo.support(GW, [0.0, 1.0]) == pytest.approx(0.04)
        assert geo.support(GW, [1.0, 0.0]) == pytest.approx(0.004)
        V = np.asarray(geo.vertices(GW))
        expected = np.array([[s1 * 0.004, s1 * 0.002 + s2 * 0.038] for s1 in (-1, 1) for s2 in (-1, 1)])
        assert len(V) == 4
        for v in expected:
            assert np.min(np.linalg.norm(V - v, axis=1)) <= 1e-9

    def test_state_set_tightened_by_disturbance(self):
        GW = geo.affine_image(self.G, self.W)
        tightened = geo.pontryagin_diff(self.X_P, GW)
        assert geo.same_set(tightened, geo.from_box([0.004, 2.84], [1.996, 3.76]), 1e-9)

    def test_negated_input_image_is_segment(self):
        segment = geo.affine_image(-self.B, geo.from_box([0.0], [1.0]))
        assert geo.support(segment, [-1.0, 0.0]) == pytest.approx(0.30)
        assert geo.support(segment, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
        assert geo.support(segment, [0.0, -1.0]) == pytest.approx(0.06)
        assert geo.volume_2d(segment) == pytest.approx(0.0, abs=1e-12)

    def test_box_intersection(self):
        both = geo.intersect(geo.from_box([0.0, 0.0], [2.0, 2.0]), geo.from_box([1.0, 1.0], [3.0, 3.0]))
        assert geo.same_set(both, geo.from_box([1.0, 1.0], [2.0, 2.0]), 1e-9)

    def test_simplex_chebyshev_radius(self):
        simplex = Polytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        center, radius = geo.chebyshev_center(simplex)
        assert radius == pytest.approx(1.0 / (2.0 + np.sqrt(2.0)))
        assert center == pytest.approx([radius, radius])


class TestRandomizedIdentities:
    def test_remove_redundancy_keeps_membership(self, rng):
        a = rng.normal(size=(30, 2))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        box = geo.from_box([-1.0, -1.0], [1.0, 1.0])
        P = Polytope(np.vstack([box.F, a]), np.concatenate([box.g, rng.uniform(0.8, 2.0, size=30)]))
        reduced = geo.remove_redundancy(P)
        assert reduced.n_constraints <= P.n_constraints
        pts = rng.uniform(-1.5, 1.5, size=(1000, 2))
        inside = np.all(P.F @ pts.T <= P.g[:, None] + 1e-9, axis=0)
        inside_reduced = np.all(reduced.F @ pts.T <= reduced.g[:, None] + 1e-9, axis=0)
        assert np.array_equal(inside, inside_reduced)

    @pytest.mark.slow
    def test_support_identities_on_random_pairs(self, rng):
        for _ in range(500):
            lo1, lo2 = rng.uniform(-1.0, 0.0, size=(2, 2))
            P = geo.from_box(lo1, lo1 + rng.uniform(0.5, 2.0, size=2))
            Q = geo.from_box(lo2, lo2 + rng.uniform(0.5, 2.0, size=2))
            T = geo.hull_from_points(0.3 * rng.normal(size=(3, 2)))
            d = rng.normal(size=2)

            both = geo.intersect(P, Q)
            if not geo.is_empty(both):
                bound = min(geo.support(P, d), geo.support(Q, d))
                assert geo.support(both, d) <= bound + 1e-8

            grown = geo.minkowski_sum(P, T)
            assert geo.support(grown, d) == pytest.approx(geo.support(P, d) + geo.support(T, d), abs=1e-8)

            shrunk = geo.pontryagin_diff(P, T)
            if not geo.is_empty(shrunk):
                assert geo.is_subset(geo.minkowski_sum(shrunk, T), P, 1e-7)
