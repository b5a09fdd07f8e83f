import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjblab.spectral import H, V, VSTAR, SpectralBasis, verify_gelfand

PI2 = math.pi ** 2


def test_eigenvalues_increasing(basis64):
    lam = basis64.eigenvalues
    assert lam[0] == pytest.approx(PI2, rel=1e-15)
    assert np.all(np.diff(lam) > 0)
    assert np.all(basis64.multipliers <= 0)


def test_norms_on_unit_vector(basis64):
    e1 = basis64.unit(1)
    assert basis64.norm(e1, H) == 1.0
    # hand evaluation of the spectral norm: sqrt(1 + pi^2)
    assert basis64.norm(e1, V) == pytest.approx(math.sqrt(1 + PI2), abs=1e-14)
    assert basis64.norm(basis64.zeros(), VSTAR) == 0.0


def test_norm_rejects_bad_shape(basis64):
    with pytest.raises(ValueError):
        basis64.norm(np.ones(3), H)
    with pytest.raises(ValueError):
        basis64.norm(basis64.unit(1), "W")


def test_pairing_orthonormality(basis64):
    e1, e2 = basis64.unit(1), basis64.unit(2)
    assert basis64.pairing(e1, e1) == 1.0
    assert basis64.pairing(e1, e2) == 0.0
    # eigenvalue action: <A e1, e1> = -pi^2
    assert basis64.pairing(basis64.apply_A(e1), e1) == pytest.approx(-PI2, rel=1e-15)


def test_apply_A_eigenvector_and_linearity(basis64):
    e1 = basis64.unit(1)
    assert np.allclose(basis64.apply_A(e1), -PI2 * e1)
    assert np.all(basis64.apply_A(basis64.zeros()) == 0.0)


def test_coercivity_identity_exact(basis64, rng):
    cst = basis64.constants
    for _ in range(50):
        v = rng.standard_normal(64) * rng.uniform(0.01, 50)
        lhs = 2 * basis64.pairing(basis64.apply_A(v), v)
        rhs = cst.c1 * basis64.norm(v, H) ** 2 - cst.c2 * basis64.norm(v, V) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_boundedness_on_unit_vector(basis64):
    e1 = basis64.unit(1)
    # ||A e1||_V* = pi^2 / sqrt(1 + pi^2) <= ||e1||_V = sqrt(1 + pi^2)
    lhs = basis64.norm(basis64.apply_A(e1), VSTAR)
    assert lhs == pytest.approx(PI2 / math.sqrt(1 + PI2), abs=1e-14)
    assert lhs <= basis64.constants.c3 * basis64.norm(e1, V)


def test_project_truncation(basis64):
    h = np.zeros(64)
    h[:3] = (1.0, 2.0, 3.0)
    p = basis64.project(h, 2)
    assert list(p[:3]) == [1.0, 2.0, 0.0]
    assert np.all(basis64.project(p, 2) == p)   # idempotent


def test_project_commutes_with_A(basis64, rng):
    h = rng.standard_normal(64)
    left = basis64.project(basis64.apply_A(h), 3)
    right = basis64.apply_A(basis64.project(h, 3))
    assert np.allclose(left, right, atol=0)


def test_project_out_of_range(basis64):
    with pytest.raises(ValueError):
        basis64.project(basis64.zeros(), 65)
    with pytest.raises(ValueError):
        basis64.project(basis64.zeros(), 0)


def test_semigroup_scalar_decay(basis64):
    e1 = basis64.unit(1)
    out = basis64.semigroup_step(e1, 0.1)
    assert out[0] == pytest.approx(math.exp(-PI2 * 0.1), rel=1e-14)
    assert np.all(out[1:] == 0)


def test_semigroup_identity_limit_and_zero(basis64, rng):
    h = rng.standard_normal(64)
    assert np.allclose(basis64.semigroup_step(h, 1e-12), h, atol=1e-10)
    assert np.all(basis64.semigroup_step(basis64.zeros(), 0.7) == 0)


def test_semigroup_composition(basis64, rng):
    h = rng.standard_normal(64)
    one = basis64.semigroup_step(basis64.semigroup_step(h, 0.3), 0.2)
    two = basis64.semigroup_step(h, 0.5)
    assert np.allclose(one, two, rtol=1e-12, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_embedding_chain_and_contraction(seed):
    basis = SpectralBasis(32)
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(32) * rng.uniform(0.01, 20)
    nvs, nh, nv = (basis.norm(h, s) for s in (VSTAR, H, V))
    assert nvs <= nh * (1 + 1e-12) and nh <= nv * (1 + 1e-12)
    p = basis.project(h, int(rng.integers(1, 33)))
    for space in (H, V, VSTAR):
        assert basis.norm(p, space) <= basis.norm(h, space) * (1 + 1e-12)
    s = basis.semigroup_step(h, rng.uniform(0.0, 1.0))
    for space in (H, V, VSTAR):
        assert basis.norm(s, space) <= basis.norm(h, space) * (1 + 1e-12)


def test_verify_gelfand_clean(basis64):
    report = verify_gelfand(basis64, 100, 42)
    for key in ("coercivity_identity", "coercivity", "boundedness",
                "embedding_vstar_h", "embedding_h_v"):
        assert report[key] <= 1e-12


def test_verify_gelfand_needs_samples(basis64):
    with pytest.raises(ValueError):
        verify_gelfand(basis64, 0, 1)


def test_tail_mass(basis64):
    h = np.ones(64)
    assert basis64.tail_mass(h) == 32.0
    assert basis64.tail_mass(basis64.unit(1)) == 0.0
