"""
Tests for spherical harmonics and projection of sliced Gaussians.
"""
import numpy as np
import pytest

from src.domain.errors import CulledError
from src.domain.gaussian import SliceBatch
from src.domain.models import SH_COEFFS, Camera, SlicedGaussian3D
from src.domain.render import (
    COV2D_DILATION,
    SH_C0,
    SH_C1,
    SplatGradients,
    eval_sh,
    project,
    project_backward,
    project_batch,
    sh_basis,
)
from tests.conftest import central_difference, look_at_camera, relative_error


@pytest.fixture
def axis_camera():
    """Camera at the origin looking down +z"""
    return Camera(width=64, height=64, fx=100.0, fy=100.0, cx=32.0, cy=32.0, world_to_camera=np.eye(4), time=0.0)


def _sliced(mean3=(0.0, 0.0, 1.0), sigma=0.01, speed=(0.0, 0.0, 0.0), decay=1.0) -> SlicedGaussian3D:
    return SlicedGaussian3D(
        mean3=np.asarray(mean3, dtype=np.float64),
        cov3=sigma * sigma * np.eye(3),
        decay=decay,
        speed=np.asarray(speed, dtype=np.float64),
        lam=1.0,
        source_index=0,
    )


def _batch(mean3, cov3, decay, speed) -> SliceBatch:
    n = len(mean3)
    return SliceBatch(
        time=0.0, mean3=mean3, cov3=cov3, decay=decay, speed=speed,
        lam=np.ones(n), valid=np.ones(n, dtype=bool), cache=None, delta=np.zeros(n),
    )


class TestEvalSH:
    """View-dependent colour."""

    def test_dc_only_is_view_independent(self, rng):
        sh = np.zeros((SH_COEFFS, 3))
        sh[0] = [0.3, -0.2, 1.0]
        for d in rng.normal(size=(5, 3)):
            np.testing.assert_allclose(eval_sh(sh, d / np.linalg.norm(d)), sh[0] * SH_C0 + 0.5, atol=1e-15)

    def test_zero_coefficients_give_grey(self):
        np.testing.assert_allclose(eval_sh(np.zeros((SH_COEFFS, 3)), np.array([0.0, 0.0, 1.0])), 0.5)

    def test_degree_one_z_band_flips_with_direction(self):
        sh = np.zeros((SH_COEFFS, 3))
        sh[2] = 0.2
        up = eval_sh(sh, np.array([0.0, 0.0, 1.0]))
        down = eval_sh(sh, np.array([0.0, 0.0, -1.0]))
        np.testing.assert_allclose(up - down, 2 * 0.2 * SH_C1, atol=1e-15)

    def test_clamped_at_zero(self):
        sh = np.zeros((SH_COEFFS, 3))
        sh[0] = -10.0
        np.testing.assert_array_equal(eval_sh(sh, np.array([1.0, 0.0, 0.0])), 0.0)

    def test_inactive_bands_ignored(self, rng):
        sh = rng.normal(size=(SH_COEFFS, 3))
        d = np.array([0.6, 0.0, 0.8])
        np.testing.assert_allclose(eval_sh(sh, d, degree=0), np.maximum(sh[0] * SH_C0 + 0.5, 0.0))

    def test_rejects_non_unit_direction(self):
        with pytest.raises(ValueError):
            eval_sh(np.zeros((SH_COEFFS, 3)), np.array([0.0, 0.0, 2.0]))

    def test_basis_derivative_matches_central_differences(self, rng):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        _, dbasis = sh_basis(d[None])
        numeric = central_difference(lambda x: sh_basis(x[None])[0][0], d)
        assert relative_error(dbasis[0], numeric) < 1e-7


class TestProject:
    """Perspective projection of one slice."""

    def test_optical_axis_lands_on_principal_point(self, axis_camera):
        splat = project(_sliced(), axis_camera, np.zeros((SH_COEFFS, 3)), 5.0)
        np.testing.assert_allclose(splat.mean2, [32.0, 32.0])
        assert splat.depth == pytest.approx(1.0)

    def test_isotropic_screen_covariance(self, axis_camera):
        sigma = 0.02
        splat = project(_sliced(sigma=sigma), axis_camera, np.zeros((SH_COEFFS, 3)), 5.0)
        variance = (100.0 * sigma) ** 2 + COV2D_DILATION
        np.testing.assert_allclose(splat.conic, [1.0 / variance, 0.0, 1.0 / variance], rtol=1e-12, atol=1e-15)

    def test_flow_of_sideways_motion(self, axis_camera):
        splat = project(_sliced(speed=(0.3, 0.0, 0.0)), axis_camera, np.zeros((SH_COEFFS, 3)), 5.0)
        np.testing.assert_allclose(splat.flow2, [30.0, 0.0], atol=1e-12)

    def test_alpha_base_folds_in_decay(self, axis_camera):
        splat = project(_sliced(decay=0.5), axis_camera, np.zeros((SH_COEFFS, 3)), 0.0)
        assert splat.alpha_base == pytest.approx(0.25)

    def test_colour_is_grey_without_coefficients(self, axis_camera):
        splat = project(_sliced(), axis_camera, np.zeros((SH_COEFFS, 3)), 5.0)
        np.testing.assert_allclose(splat.color, 0.5)

    @pytest.mark.parametrize("mean3", [(0.0, 0.0, 0.1), (0.0, 0.0, -1.0)])
    def test_near_plane_culls(self, axis_camera, mean3):
        with pytest.raises(CulledError):
            project(_sliced(mean3), axis_camera, np.zeros((SH_COEFFS, 3)), 5.0)

    def test_off_screen_culls(self, axis_camera):
        with pytest.raises(CulledError):
            project(_sliced((5.0, 0.0, 1.0)), axis_camera, np.zeros((SH_COEFFS, 3)), 5.0)

    def test_transparent_culls(self, axis_camera):
        with pytest.raises(CulledError):
            project(_sliced(), axis_camera, np.zeros((SH_COEFFS, 3)), -10.0)

    def test_batch_skips_invalid_rows(self, axis_camera):
        batch = _batch(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]), np.stack([1e-4 * np.eye(3)] * 2),
                       np.ones(2), np.zeros((2, 3)))
        batch.valid[0] = False
        splats = project_batch(batch, np.zeros((2, SH_COEFFS, 3)), np.full(2, 3.0), axis_camera)
        np.testing.assert_array_equal(splats.source_index, [1])


class TestProjectBackward:
    """Projection gradients against central differences."""

    def test_matches_central_differences(self, rng):
        cam = look_at_camera([0.3, -3.0, 0.8], width=48, height=40, focal=50.0)
        n = 3
        mean3 = rng.uniform(-0.3, 0.3, (n, 3))
        a = rng.normal(scale=0.1, size=(n, 3, 3))
        cov3 = a @ np.swapaxes(a, 1, 2) + 0.01 * np.eye(3)
        decay = rng.uniform(0.5, 1.0, n)
        speed = rng.normal(size=(n, 3))
        logits = rng.uniform(0.0, 1.0, n)
        sh = rng.normal(scale=0.1, size=(n, SH_COEFFS, 3))
        w = SplatGradients(
            mean2=rng.normal(size=(n, 2)), conic=rng.normal(size=(n, 3)), color=rng.normal(size=(n, 3)),
            alpha_base=rng.normal(size=n), flow2=rng.normal(size=(n, 2)),
        )

        def objective(mean3=mean3, cov3=cov3, decay=decay, speed=speed, logits=logits, sh=sh):
            sym = 0.5 * (cov3 + np.swapaxes(cov3, 1, 2))
            s = project_batch(_batch(mean3, sym, decay, speed), sh, logits, cam)
            assert len(s) == n
            return (np.sum(w.mean2 * s.mean2) + np.sum(w.conic * s.conic) + np.sum(w.color * s.color)
                    + np.sum(w.alpha_base * s.alpha_base) + np.sum(w.flow2 * s.flow2))

        splats = project_batch(_batch(mean3, cov3, decay, speed), sh, logits, cam)
        grads = project_backward(splats, w, cam)

        assert relative_error(grads.mean3, central_difference(lambda x: objective(mean3=x), mean3)) < 1e-5
        assert relative_error(grads.cov3, central_difference(lambda x: objective(cov3=x), cov3)) < 1e-5
        assert relative_error(grads.decay, central_difference(lambda x: objective(decay=x), decay)) < 1e-6
        assert relative_error(grads.speed, central_difference(lambda x: objective(speed=x), speed)) < 1e-6
        assert relative_error(grads.opacity_logit, central_difference(lambda x: objective(logits=x), logits)) < 1e-6
        assert relative_error(grads.sh, central_difference(lambda x: objective(sh=x), sh)) < 1e-6
