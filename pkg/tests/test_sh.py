"""Spherical harmonics basis: known values, orthonormality, conventions."""

import math

import numpy as np
import pytest

try:
    from scipy.special import sph_harm_y

    def complex_sh(l, m, theta, phi):
        return sph_harm_y(l, m, theta, phi)

except ImportError:  # older scipy
    from scipy.special import sph_harm

    def complex_sh(l, m, theta, phi):
        return sph_harm(m, l, phi, theta)


from nirclab import sh
from nirclab.errors import ConfigError


def sphere_quadrature(nz=64, nphi=128):
    """Gauss-Legendre in cos(theta) times uniform phi; exact for smooth
    band-limited integrands at this order."""
    z, wz = np.polynomial.legendre.leggauss(nz)
    phi = (np.arange(nphi) + 0.5) * (2.0 * math.pi / nphi)
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1.0 - zz**2)
    dirs = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    w = np.repeat(wz, nphi) * (2.0 * math.pi / nphi)
    return dirs, w


def test_constant_band():
    val = sh.sh_eval_basis([0.3, -0.5, 0.81], 1)
    assert val[0] == pytest.approx(0.28209479177387814, abs=1e-12)


def test_y10_is_scaled_z():
    v = sh.sh_eval_basis([0.0, 0.0, 1.0], 2)
    # index l=1, m=0 -> 1*1+1+0 = 2
    assert v[2] == pytest.approx(math.sqrt(3.0 / (4.0 * math.pi)), abs=1e-12)
    v2 = sh.sh_eval_basis([0.0, 0.0, -1.0], 2)
    assert v2[2] == pytest.approx(-math.sqrt(3.0 / (4.0 * math.pi)), abs=1e-12)


def test_bands_out_of_range():
    with pytest.raises(ConfigError):
        sh.sh_eval_basis([0, 0, 1], 0)
    with pytest.raises(ConfigError):
        sh.sh_eval_basis([0, 0, 1], 9)


@pytest.mark.parametrize("bands", [1, 2, 3, 4, 5])
def test_orthonormality_quadrature(bands):
    dirs, w = sphere_quadrature()
    y = sh.sh_eval_batch(dirs, bands)
    gram = (y * w[:, None]).T @ y
    assert np.max(np.abs(gram - np.eye(bands * bands))) < 1e-4


def test_batch_matches_scalar():
    r = np.random.default_rng(0)
    d = r.standard_normal((200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    batch = sh.sh_eval_batch(d, 5)
    for i in range(0, 200, 17):
        np.testing.assert_allclose(batch[i], sh.sh_eval_basis(d[i], 5), atol=1e-12)


def test_against_scipy_real_form():
    # our convention: real, orthonormal, no Condon-Shortley phase.
    # scipy's complex Y_l^m includes the phase, so the real part picks up
    # (-1)^m relative to ours.
    r = np.random.default_rng(1)
    for _ in range(20):
        v = r.standard_normal(3)
        v /= np.linalg.norm(v)
        theta = math.acos(np.clip(v[2], -1, 1))
        phi = math.atan2(v[1], v[0])
        ours = sh.sh_eval_basis(v, 5)
        for l in range(5):
            for m in range(l + 1):
                y = complex_sh(l, m, theta, phi)
                if m == 0:
                    ref = y.real
                    assert ours[l * l + l] == pytest.approx(ref, abs=1e-10)
                else:
                    refc = (-1) ** m * math.sqrt(2.0) * y.real
                    refs = (-1) ** m * math.sqrt(2.0) * y.imag
                    assert ours[l * l + l + m] == pytest.approx(refc, abs=1e-10)
                    assert ours[l * l + l - m] == pytest.approx(refs, abs=1e-10)
