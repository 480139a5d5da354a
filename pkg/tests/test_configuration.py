import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ELLIPSOID_SCALE, all_kinds, ellipsoid_chord_half, rho_m, smoothed_cube
from crossfit.bodies import Ball, Ellipsoid, MovedBody, PerturbedSphere
from crossfit.configuration import (
    CrossConfig,
    chord_scale,
    chords,
    jacobian,
    random_rotation,
    residual_chord,
    residual_levelset,
    retract,
    skew,
    vee,
    vertices,
)
from crossfit.errors import InputError, PreconditionError, UnsupportedFormError
from crossfit.verify import induced_index_map, random_signed_permutation


def _random_config(rng, body, scale=None):
    d = body.dim
    center = body.interior_point + 0.1 * rng.standard_normal(d)
    lam = scale if scale is not None else rng.uniform(0.5, 1.2)
    return CrossConfig(center, lam, random_rotation(int(rng.integers(1 << 30)), d))


class TestTypes:
    def test_rejects_improper_rotation(self):
        with pytest.raises(InputError):
            CrossConfig(np.zeros(3), 1.0, np.diag([1.0, 1.0, -1.0]))

    def test_rejects_nonorthogonal(self):
        with pytest.raises(InputError):
            CrossConfig(np.zeros(2), 1.0, np.array([[1.0, 0.1], [0, 1]]))

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(InputError):
            CrossConfig(np.zeros(3), 0.0, np.eye(3))

    def test_rejects_singular_frame(self):
        with pytest.raises(InputError):
            CrossConfig(np.zeros(2), 1.0, np.eye(2), frame=np.ones((2, 2)))

    def test_regular_flag(self):
        assert CrossConfig(np.zeros(2), 1.0, np.eye(2)).regular
        assert not CrossConfig(np.zeros(2), 1.0, np.eye(2), frame=np.array([[1.0, 0.5], [0, 1]])).regular

    def test_document_round_trip(self):
        c = CrossConfig(np.array([0.1, 0.2, 0.3]), 1.5, random_rotation(2, 3))
        again = CrossConfig.from_document(c.to_document())
        np.testing.assert_array_equal(vertices(again), vertices(c))

    def test_chord_data_exact(self):
        cd = chords(Ball(3), np.array([0.3, 0.1, 0]), random_rotation(1, 3))
        np.testing.assert_array_equal(cd.s, cd.a + cd.b)
        np.testing.assert_array_equal(cd.t, cd.a - cd.b)
        assert np.all(cd.a > 0) and np.all(cd.b > 0)


class TestVertices:
    def test_identity(self):
        v = vertices(CrossConfig(np.zeros(3), 1.0, np.eye(3)))
        expected = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
        np.testing.assert_array_equal(v, expected)

    def test_translation_and_scale(self):
        v = vertices(CrossConfig(np.array([1.0, 0, 0]), 2.0, np.eye(3)))
        expected = [[3, 0, 0], [-1, 0, 0], [1, 2, 0], [1, -2, 0], [1, 0, 2], [1, 0, -2]]
        np.testing.assert_array_equal(v, expected)

    def test_central_symmetry(self):
        rng = np.random.default_rng(0)
        c = _random_config(rng, Ball(4))
        v = vertices(c)
        np.testing.assert_allclose(v[0::2] + v[1::2], np.tile(2 * c.center, (4, 1)), atol=1e-15)
        assert v.shape == (8, 4)

    def test_general_frame(self):
        frame = np.array([[1.0, 0.5], [0.0, 2.0]])
        v = vertices(CrossConfig(np.zeros(2), 1.0, np.eye(2), frame=frame))
        np.testing.assert_array_equal(v, [[1, 0], [-1, 0], [0.5, 2], [-0.5, -2]])


class TestResiduals:
    def test_ball_any_rotation(self):
        rho = random_rotation(9, 3)
        r = residual_levelset(Ball(3), CrossConfig(np.zeros(3), 1.0, rho))
        assert len(r) == 6
        np.testing.assert_allclose(r.values, 0, atol=1e-15)

    def test_ellipsoid_identity(self, ellipsoid112):
        r = residual_levelset(ellipsoid112, CrossConfig(np.zeros(3), 1.0, np.eye(3)))
        np.testing.assert_array_equal(r.values, [0, 0, 0, 0, -0.75, -0.75])

    def test_ellipsoid_closed_form_anchor(self, ellipsoid112):
        # each frame column u has u^T Q u = 3/4, so the half-chord is 2/sqrt(3)
        for u in rho_m().T:
            assert ellipsoid_chord_half([1, 1, 2], u) == pytest.approx(ELLIPSOID_SCALE, abs=1e-15)
        r = residual_levelset(ellipsoid112, CrossConfig(np.zeros(3), ELLIPSOID_SCALE, rho_m()))
        np.testing.assert_allclose(r.values, 0, atol=1e-12)

    def test_dimension_mismatch(self, ellipsoid112):
        with pytest.raises(InputError):
            residual_levelset(ellipsoid112, CrossConfig(np.zeros(2), 1.0, np.eye(2)))

    def test_chords_ball_center(self):
        cd = chords(Ball(3), np.zeros(3), np.eye(3))
        np.testing.assert_array_equal(cd.a, 1)
        np.testing.assert_array_equal(cd.b, 1)
        np.testing.assert_array_equal(cd.s, 2)
        np.testing.assert_array_equal(cd.t, 0)

    def test_chords_ball_offset(self):
        c = 0.3
        cd = chords(Ball(3), np.array([c, 0, 0]), np.eye(3))
        assert cd.a[0] == pytest.approx(1 - c, abs=1e-15)
        assert cd.b[0] == pytest.approx(1 + c, abs=1e-15)
        assert cd.t[0] == pytest.approx(-2 * c, abs=1e-15)
        assert cd.s[0] == pytest.approx(2, abs=1e-15)
        assert cd.a[1] == pytest.approx(np.sqrt(1 - c * c), abs=1e-15)
        assert cd.b[1] == pytest.approx(np.sqrt(1 - c * c), abs=1e-15)

    def test_chords_ellipsoid_rho_m(self, ellipsoid112):
        cd = chords(ellipsoid112, np.zeros(3), rho_m())
        np.testing.assert_allclose(cd.s, 4 / np.sqrt(3), atol=1e-12)
        np.testing.assert_allclose(cd.t, 0, atol=1e-12)

    def test_chord_residual_ball(self):
        r = residual_chord(Ball(3), np.zeros(3), random_rotation(4, 3))
        assert len(r) == 5
        np.testing.assert_allclose(r.values, 0, atol=1e-15)

    def test_chord_residual_ellipsoid_axes(self, ellipsoid112):
        r = residual_chord(ellipsoid112, np.zeros(3), np.eye(3))
        np.testing.assert_allclose(r.values, [0, 0, 0, -2 / 3, -2 / 3], atol=1e-15)

    def test_chord_residual_ellipsoid_rho_m(self, ellipsoid112):
        np.testing.assert_allclose(residual_chord(ellipsoid112, np.zeros(3), rho_m()).values, 0, atol=1e-12)

    def test_chord_needs_convex(self):
        with pytest.raises(UnsupportedFormError):
            chords(PerturbedSphere(3, [[0, 0, 3]], [0.2]), np.zeros(3), np.eye(3))

    def test_chord_needs_interior(self):
        with pytest.raises(PreconditionError):
            chords(Ball(3), np.array([2.0, 0, 0]), np.eye(3))

    def test_chord_needs_regular_frame(self):
        with pytest.raises(UnsupportedFormError):
            chords(Ball(2), np.zeros(2), np.eye(2), frame=np.array([[1.0, 0.5], [0, 1]]))

    def test_quotient_invariance(self):
        # adding a constant to every s_i leaves the projected W-part unchanged
        cd = chords(Ellipsoid([1, 1.3, 1.7]), np.array([0.1, -0.2, 0.05]), random_rotation(3, 3))
        w = cd.s[:-1] - cd.s.mean()
        shifted = cd.s + 0.37
        np.testing.assert_allclose(shifted[:-1] - shifted.mean(), w, atol=1e-15)


class TestFormEquivalence:
    def test_at_solution_and_perturbation(self, ellipsoid112):
        rho = rho_m()
        lam = chord_scale(ellipsoid112, CrossConfig(np.zeros(3), 1.0, rho))
        lev = residual_levelset(ellipsoid112, CrossConfig(np.zeros(3), lam, rho))
        assert residual_chord(ellipsoid112, np.zeros(3), rho).norm() < 1e-9
        assert lev.norm() < 1e-9
        bent = retract(rho, [0.05, 0.0, 0.0])
        lam = chord_scale(ellipsoid112, CrossConfig(np.zeros(3), 1.0, bent))
        assert residual_chord(ellipsoid112, np.zeros(3), bent).norm() > 1e-3
        assert residual_levelset(ellipsoid112, CrossConfig(np.zeros(3), lam, bent)).norm() > 1e-3


class TestSymmetry:
    def test_cyclic_permutation_example(self, ellipsoid112):
        sigma = np.array([[0.0, 1, 0], [0, 0, 1], [1, 0, 0]])  # e1 -> e3, e2 -> e1, e3 -> e2
        assert np.linalg.det(sigma) == pytest.approx(1)
        c = CrossConfig(np.zeros(3), 1.0, np.eye(3))
        moved = residual_levelset(ellipsoid112, c.replace(rotation=sigma)).values
        np.testing.assert_array_equal(moved, [-0.75, -0.75, 0, 0, 0, 0])
        base = residual_levelset(ellipsoid112, c).values
        np.testing.assert_array_equal(moved, base[induced_index_map(sigma)])

    @pytest.mark.parametrize("body", all_kinds(), ids=lambda b: b.kind)
    def test_vertex_set_and_residual_permutation(self, body):
        rng = np.random.default_rng(2)
        for _ in range(20):
            c = _random_config(rng, body)
            sigma = random_signed_permutation(rng, 3)
            moved = c.replace(rotation=c.rotation @ sigma)
            v0, v1 = vertices(c), vertices(moved)
            np.testing.assert_array_equal(v1, v0[induced_index_map(sigma)])
            r0 = residual_levelset(body, c).values
            r1 = residual_levelset(body, moved).values
            np.testing.assert_array_equal(r1, r0[induced_index_map(sigma)])

    @pytest.mark.parametrize("body", all_kinds(), ids=lambda b: b.kind)
    def test_rigid_motion_covariance(self, body):
        rng = np.random.default_rng(8)
        Q = random_rotation(77, 3)
        shift = np.array([0.4, -1.1, 2.0])
        moved_body = MovedBody(body, Q, shift)
        for _ in range(10):
            c = _random_config(rng, body, scale=0.4)
            mc = c.replace(center=Q @ c.center + shift, rotation=Q @ c.rotation)
            np.testing.assert_allclose(
                residual_levelset(moved_body, mc).values, residual_levelset(body, c).values, atol=1e-10
            )
            if body.convex:
                np.testing.assert_allclose(
                    residual_chord(moved_body, mc.center, mc.rotation).values,
                    residual_chord(body, c.center, c.rotation).values,
                    atol=1e-10,
                )


class TestChart:
    def test_zero_step(self):
        rho = random_rotation(3, 4)
        np.testing.assert_array_equal(retract(rho, np.zeros(6)), rho)

    def test_planar_quarter_turn(self):
        np.testing.assert_allclose(retract(np.eye(2), [np.pi / 2]), [[0, -1], [1, 0]], atol=1e-15)

    def test_orthogonality(self):
        rng = np.random.default_rng(0)
        rho = random_rotation(5, 3)
        for _ in range(100):
            w = rng.standard_normal(3)
            w *= rng.uniform(0, 1) / np.linalg.norm(w)
            R = retract(rho, w)
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
            assert np.linalg.det(R) > 0

    def test_skew_vee_inverse(self):
        w = np.arange(1.0, 11.0)
        S = skew(w, 5)
        np.testing.assert_array_equal(S, -S.T)
        np.testing.assert_array_equal(vee(S), w)

    def test_random_rotation_deterministic(self):
        np.testing.assert_array_equal(random_rotation(42, 5), random_rotation(42, 5))
        R = random_rotation(42, 5)
        assert np.abs(R.T @ R - np.eye(5)).max() < 1e-10 and np.linalg.det(R) > 0

    def test_random_rotation_needs_d2(self):
        with pytest.raises(InputError):
            random_rotation(0, 1)

    def test_random_rotation_column_mean(self):
        n, d = 10_000, 3
        cols = np.array([random_rotation(s, d) for s in range(n)])
        mean = cols.mean(axis=0)
        # each entry of a uniform rotation has variance 1/d
        sigma = np.sqrt(1 / d / n)
        assert np.all(np.abs(mean) < 3 * sigma + 1e-3)


class TestJacobian:
    def test_ball_scale_column(self):
        c = CrossConfig(np.zeros(3), 1.0, np.eye(3))
        J = jacobian(Ball(3), c)
        # d/dlam f(x + lam s rho e_i) = grad f . (s rho e_i) = 2
        np.testing.assert_allclose(J[:, 3], 2.0, atol=1e-15)
        np.testing.assert_allclose(J[:, 4:], 0.0, atol=1e-15)
        np.testing.assert_allclose(J, jacobian(Ball(3), c, method="fd"), atol=1e-8)

    @pytest.mark.parametrize("body", all_kinds(), ids=lambda b: b.kind)
    def test_levelset_analytic_vs_fd(self, body):
        rng = np.random.default_rng(4)
        for _ in range(50):
            c = _random_config(rng, body)
            Ja = jacobian(body, c, "levelset")
            Jf = jacobian(body, c, "levelset", method="fd")
            assert np.abs(Ja - Jf).max() < 1e-4

    @pytest.mark.parametrize("body", [b for b in all_kinds() if b.convex], ids=lambda b: b.kind)
    def test_chord_analytic_vs_fd(self, body):
        rng = np.random.default_rng(6)
        for _ in range(50):
            c = _random_config(rng, body)
            Ja = jacobian(body, c, "chord")
            Jf = jacobian(body, c, "chord", method="fd")
            assert np.abs(Ja - Jf).max() < 1e-4

    def test_chord_w_block_sums_to_zero(self):
        # the W rows plus the dropped last entry sum to zero, so the derivative of
        # sum_i (s_i - s_bar) vanishes identically
        body = Ellipsoid([1, 1.3, 1.7])
        c = CrossConfig(np.array([0.1, 0, -0.1]), 1.0, random_rotation(1, 3))
        J = jacobian(body, c, "chord")
        cd = chords(body, c.center, c.rotation)
        w = cd.s - cd.s.mean()
        assert abs(w.sum()) < 1e-10
        h = 1e-6
        for k in range(J.shape[1]):
            e = np.zeros(J.shape[1])
            e[k] = h
            from crossfit.configuration import apply_step

            s_plus = chords(body, *_pr(apply_step(c, e, "chord"))).s
            s_minus = chords(body, *_pr(apply_step(c, -e, "chord"))).s
            ds = (s_plus - s_minus) / (2 * h)
            np.testing.assert_allclose(J[3:, k], ds[:-1] - ds.mean(), atol=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            jacobian(Ball(3), CrossConfig(np.zeros(2), 1.0, np.eye(2)))


def _pr(c):
    return c.center, c.rotation


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(-0.5, 0.5))
def test_chord_residual_quotient_by_diagonal(seed, t):
    """Uniformly rescaling a ball leaves the chord residual of a centred frame at zero."""
    rho = random_rotation(seed, 3)
    r = residual_chord(Ball(3, 1.0 + t * t), np.zeros(3), rho)
    np.testing.assert_allclose(r.values, 0, atol=1e-14)
