import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chaoslab import gridfn, kernels
from chaoslab.gridfn import Grid, GridFunction
from chaoslab.kernels import KernelError, MollifierSpec


def test_gamma_against_math():
    assert kernels.lanczos_gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)
    for x in (0.1, 1.0, 1.5, 2.5, 7.3):
        assert kernels.lanczos_gamma(x) == pytest.approx(math.gamma(x), rel=1e-12)


def test_c_alpha_and_ball_volume():
    assert kernels.c_alpha(1.0) == pytest.approx(1.0, rel=1e-13)
    assert kernels.c_alpha(2.0) == pytest.approx(1 / math.pi, rel=1e-13)
    assert kernels.unit_ball_volume(3) == pytest.approx(4 * math.pi / 3, rel=1e-13)
    # F[1/(4 pi |x|)] = 1 / (4 pi^2 |xi|^2) in d = 3
    assert kernels.coulomb_sqrt_constant(3) == pytest.approx(1 / (4 * math.pi**2), rel=1e-12)


def test_bump_normalization_against_scipy():
    from scipy.integrate import quad

    for d in (1, 2, 3):
        s = d * kernels.unit_ball_volume(d)
        val, _ = quad(lambda r: s * r ** (d - 1) * math.exp(-1 / (1 - r * r)), 0, 1)
        assert kernels.bump_normalization(d) == pytest.approx(1 / val, rel=1e-9)


@pytest.mark.parametrize("base", ["standard_bump", "gaussian"])
def test_mollifier_mass_and_support(base):
    g = Grid(1, 4.0, 512)
    J = kernels.make_mollifier(MollifierSpec(base, 0.25), g)
    assert gridfn.quadrature(J) == pytest.approx(1.0, abs=1e-14)
    assert J.values.min() >= 0
    np.testing.assert_allclose(J.values, J.reflected().values, atol=1e-12)
    if base == "standard_bump":
        assert np.all(J.values[np.abs(g.axis()) >= 0.25] == 0)


def test_bump_underresolved_names_grid_size():
    with pytest.raises(KernelError, match="need n >= 512"):
        kernels.make_mollifier(MollifierSpec("standard_bump", 0.1), Grid(1, 4.0, 128))
    with pytest.raises(KernelError):
        MollifierSpec("box", 0.1)


def test_weierstrass_kernel_matches_symbol():
    g = Grid(1, 8.0, 512)
    eps = 0.05
    h = kernels.make_mollifier(MollifierSpec("gaussian", eps), g)
    want = kernels.weierstrass_symbol(eps).evaluate(g)
    np.testing.assert_allclose(gridfn.fourier(h).real, want, atol=1e-12)


@given(st.floats(0.05, 2.0))
def test_cutoff_profile(eps):
    g = Grid(1, 16.0, 256)
    z = kernels.make_cutoff(eps, g).values
    r = np.abs(g.axis())
    assert np.all(np.abs(z) <= 1)
    assert np.all(z[r <= 1 / eps] == 1.0)
    assert np.all(z[r >= 2 / eps] == 0.0)


def test_tent_is_indicator_autoconvolution():
    g = Grid(1, 4.0, 512)
    R = 1.0
    box = kernels.indicator(g, -R / 2, R / 2)
    U = kernels.bounded_confidence_potential(R, g)
    assert np.max(np.abs(gridfn.convolve(box, box).values + U.values)) <= 2 * g.h
    i0 = g.origin_index[0]
    assert U.values[i0] == -R
    x = g.axis()
    assert U.values[np.argmin(np.abs(x - R))] == 0.0 and U.values[np.argmin(np.abs(x + R))] == 0.0


@pytest.mark.parametrize("route", ["force", "potential"])
def test_bounded_confidence_pair_is_odd_and_attractive(route):
    g = Grid(1, 4.0, 512)
    p = kernels.bounded_confidence_pair(1.0, 0.1, g, route=route)
    k = p.force_1d()
    assert kernels.odd_defect(k) <= 1e-9
    x = g.axis()
    # the drift -k(X^i - X^j) pulls a particle at x = 0.5 back toward one at 0
    assert gridfn.evaluate_at(k, 0.5) == pytest.approx(1.0, abs=1e-6)
    assert abs(gridfn.evaluate_at(k, 0.0)) < 1e-12
    assert np.all(np.abs(k.values[np.abs(x) > 1.25]) < 1e-6)
    flipped = kernels.bounded_confidence_pair(1.0, 0.1, g, route=route, sign=-1.0).force_1d()
    np.testing.assert_allclose(flipped.values, -k.values)


def test_bounded_confidence_rejects_wide_R():
    with pytest.raises(KernelError, match="L/2"):
        kernels.bounded_confidence_potential(2.5, Grid(1, 4.0, 64))


def test_bessel_kernel_closed_form_1d():
    g = Grid(1, 20.0, 4096)
    G = kernels.bessel_kernel(g)
    x = g.axis()
    # 0.5 exp(-|x|); the kink at 0 limits the spectral sample to O(h) there
    away = np.abs(x) > 0.1
    np.testing.assert_allclose(G.values[away], 0.5 * np.exp(-np.abs(x[away])), atol=1e-5)
    assert abs(G.values[g.origin_index[0]] - 0.5) < g.h


def test_bessel_factorization_is_spectral_identity():
    g = Grid(1, 8.0, 1024)
    p = kernels.bessel_pair(1, 0.05, g)
    target = kernels.bessel_target(0.05, g)
    symbol = (kernels.bessel_kernel_symbol() * kernels.weierstrass_symbol(0.05)).evaluate(g)
    assert kernels.symmetric_factor_defect(p.V, symbol) <= 1e-8
    rel = gridfn.lp_norm(p.potential() - target, 2) / gridfn.lp_norm(target, 2)
    assert rel <= 1e-6
    assert kernels.odd_defect(p.force_1d()) <= 1e-9


def test_coulomb_sqrt_symbol_squares_to_truncated_transform():
    g = Grid(3, 4.0, 32)
    root = kernels.truncated_coulomb_symbol_sqrt(3, 4.0).evaluate(g)
    phi = kernels.coulomb_potential(3, g, 4.0)
    # the grid transform of the sampled kernel tends to the closed form away from the origin node
    fh = gridfn.fourier(phi).real
    i = (1, 0, 0)
    assert fh[i] == pytest.approx(root[i] ** 2, rel=0.05)
    assert np.all(root >= 0)


def test_fourier_sqrt_rejects_bump_base():
    g = Grid(3, 4.0, 32)
    with pytest.raises(KernelError, match="frequency"):
        kernels.coulomb_factorized_pair(3, 1.0, g, route="fourier_sqrt", base="standard_bump")


def test_coulomb_weierstrass_pair_constants():
    g = Grid(3, 4.0, 32)
    p = kernels.coulomb_factorized_pair(3, 0.1, g)
    assert p.symmetric and p.strongly_admissible and p.mode == "gradient_product"
    assert p.a_W == p.a_V == pytest.approx(1.25)
    assert all(np.isfinite(v) for v in p.constants.values())
    kx, ky, kz = p.k_eps
    assert kernels.odd_defect(kx) <= 1e-9


def test_product_mode_rejects_dimension_above_one():
    g = Grid(2, 4.0, 16)
    f = GridFunction(g, np.ones(g.shape))
    with pytest.raises(KernelError, match="scalar"):
        kernels.KernelPair(f, f, "product", 0.0, 0.0)
    with pytest.raises(KernelError, match="mode"):
        kernels.KernelPair(f, f, "sum", 0.0, 0.0)


def test_certify_pair_bessel_weierstrass():
    g = Grid(1, 4.0, 4096)
    eps = [2.0**-k for k in range(3, 8)]
    cert = kernels.certify_pair(lambda e: kernels.bessel_pair(1, e, g), eps)
    assert cert.passed
    assert len(cert.rows) == 5


def test_fit_power_law_exact():
    xs = np.geomspace(0.01, 1, 6)
    s, r = kernels.fit_power_law(xs, 3.0 * xs**-1.75)
    assert s == pytest.approx(-1.75, abs=1e-12) and r < 1e-12
