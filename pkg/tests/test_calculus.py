import math

import numpy as np
import pytest

from hjblab.calculus import (CATALOG, CylindricalFunctional,
                             decomposition_residual, gateaux_quotient,
                             generator, generator_hamiltonian_gap,
                             ito_kunita_residual, make_functional)
from hjblab.paths import (Path, PathClassSpec, TimeGrid, constant_path,
                          sample_path_class, zero_path)
from hjblab.problem import make_instance
from hjblab.seeding import rng_for
from hjblab.spectral import V, VSTAR
from hjblab.value import constant_control

PI2 = math.pi ** 2


class FixedNoise:
    def __init__(self, value, m=1):
        self.value = np.full(m, float(value))

    def w_at(self, s):
        return self.value


def test_gradient_linear_functional(basis16):
    u = make_functional("linear-z1", basis16, 1.0)
    x = constant_path(TimeGrid(0.0, 0.5, 4), 0.3 * basis16.unit(1))
    grad = u.vertical_gradient(basis16, 0.5, x)
    assert np.allclose(grad, basis16.unit(1))


def test_gradient_quadratic_at_zero(basis16):
    u = make_functional("quad-z1", basis16, 1.0)
    z = zero_path(TimeGrid(0.0, 0.5, 4), 16)
    assert np.allclose(u.vertical_gradient(basis16, 0.5, z), 0.0)
    x = constant_path(TimeGrid(0.0, 0.5, 4), 0.3 * basis16.unit(1))
    assert np.allclose(u.vertical_gradient(basis16, 0.5, x),
                       2 * 0.3 * basis16.unit(1))


def test_gradient_frozen_anchor_vanishes(basis16, rng):
    u = make_functional("linear-z1", basis16, 1.0, anchor_time=0.25)
    x = constant_path(TimeGrid(0.0, 0.5, 4), 0.3 * basis16.unit(1))
    assert np.allclose(u.vertical_gradient(basis16, 0.5, x), 0.0)
    h = rng.standard_normal(16)
    assert abs(gateaux_quotient(u, basis16, 0.5, x, h)) <= 1e-5


def test_gateaux_oracle_over_catalog(basis16):
    rng = rng_for(2024, "gateaux")
    worst = 0.0
    for i in range(100):
        name = CATALOG[i % len(CATALOG)]
        u = make_functional(name, basis16, 1.0)
        spec = PathClassSpec(basis16, 1.0, np.zeros(16), 0.5, n_steps=8)
        x = sample_path_class(spec, rng)
        h = rng.standard_normal(16)
        grad = u.vertical_gradient(basis16, 0.5, x, noise=FixedNoise(0.4))
        fd = gateaux_quotient(u, basis16, 0.5, x, h, noise=FixedNoise(0.4))
        worst = max(worst, abs(fd - float(np.dot(grad, h))) / max(1.0, abs(fd)))
    assert worst <= 1e-5


def test_semimartingale_parts_quadratic_noise(basis16):
    # g = w1^2 with a live anchor: drift 1, martingale 2 W(t)
    u = make_functional("quad-w1", basis16, 1.0)
    x = constant_path(TimeGrid(0.0, 0.5, 4), basis16.unit(1))
    drift, mart = u.semimartingale_parts(basis16, 0.5, x, 1,
                                         noise=FixedNoise(0.7))
    assert drift == pytest.approx(1.0)
    assert mart[0] == pytest.approx(1.4)


def test_semimartingale_parts_noise_free(basis16):
    u = make_functional("quad-z1", basis16, 1.0)
    x = constant_path(TimeGrid(0.0, 0.5, 4), basis16.unit(1))
    drift, mart = u.semimartingale_parts(basis16, 0.5, x, 1)
    assert drift == 0.0
    assert np.all(mart == 0.0)


def test_frozen_noise_anchor_kills_parts(basis16):
    u = make_functional("quad-w1", basis16, 1.0, anchor_time=0.25)
    x = constant_path(TimeGrid(0.0, 0.5, 4), basis16.unit(1))
    drift, mart = u.semimartingale_parts(basis16, 0.5, x, 1,
                                         noise=FixedNoise(0.7))
    assert drift == 0.0 and np.all(mart == 0.0)


def test_decomposition_uniqueness_surrogate(basis16):
    # 4 w^2 with one anchor vs (w1 + w2)^2 with a duplicated anchor: the same
    # functional, so both decompositions must agree
    ua = make_functional("quad-w1-rep", basis16, 1.0)
    ub = make_functional("w1w2-rep", basis16, 1.0)
    x = constant_path(TimeGrid(0.0, 0.5, 4), basis16.unit(1))
    for w in (0.0, 0.3, -1.2):
        va = ua.value(basis16, 0.5, x, noise=FixedNoise(w))
        vb = ub.value(basis16, 0.5, x, noise=FixedNoise(w))
        assert va == pytest.approx(vb, abs=1e-10)
        da, ma = ua.semimartingale_parts(basis16, 0.5, x, 1, noise=FixedNoise(w))
        db, mb = ub.semimartingale_parts(basis16, 0.5, x, 1, noise=FixedNoise(w))
        assert da == pytest.approx(db, abs=1e-10)
        assert np.allclose(ma, mb, atol=1e-10)


def test_generator_linear_reduces_to_pairing(basis16):
    # u = <x(t), p>, beta = 0: generator = <Ax(t), p>
    inst = make_instance("steer-1-terminal", basis16, f="zero")
    u = make_functional("linear-z1", basis16, 1.0)
    x = constant_path(TimeGrid(0.0, 0.5, 4), basis16.unit(1))
    val = generator(u, inst, 0.5, x, 0.0)
    assert val == pytest.approx(-PI2, rel=1e-14)


def test_generator_hamiltonian_identity(basis16):
    rng = rng_for(5, "genham")
    inst = make_instance("steer-1", basis16)
    for name in ("linear-z1", "w1-z1", "sin-z1", "quad-z1"):
        u = make_functional(name, basis16, 1.0)
        spec = PathClassSpec(basis16, 1.0, np.zeros(16), 0.5, n_steps=8)
        x = sample_path_class(spec, rng)
        assert generator_hamiltonian_gap(u, inst, 0.5, x) <= 1e-12


def test_declared_bounds_on_probes(basis16):
    # rho bound on the gradient and the alpha-Hölder moduli of Def-style checks
    rng = rng_for(31, "бounds")
    for name in CATALOG:
        u = make_functional(name, basis16, 1.0)
        worst_rho = 0.0
        worst_holder = 0.0
        for i in range(40):
            spec = PathClassSpec(basis16, 1.0, np.zeros(16), 0.5, n_steps=8)
            x = sample_path_class(spec, rng)
            y = sample_path_class(spec, rng)
            noise = FixedNoise(rng.uniform(-2, 2))
            gx = u.vertical_gradient(basis16, 0.5, x, noise=noise)
            gy = u.vertical_gradient(basis16, 0.5, y, noise=noise)
            worst_rho = max(worst_rho, basis16.norm(gx, V))
            gap = max(basis16.norm(a - b, VSTAR)
                      for a, b in zip(x.node_values(), y.node_values()))
            if gap > 1e-12:
                du = abs(u.value(basis16, 0.5, x, noise=noise)
                         - u.value(basis16, 0.5, y, noise=noise))
                dgrad = basis16.norm(gx - gy, V)
                worst_holder = max(worst_holder,
                                   (du + dgrad) / gap ** u.alpha)
        assert worst_rho <= u.rho, name
        assert worst_holder <= u.holder_const, name


def test_ito_kunita_constant_functional(basis16):
    inst = make_instance("steer-1-terminal", basis16)
    t = make_functional("linear-z1", basis16, 1.0)
    const = CylindricalFunctional(
        name="const", g=t.g * 0 + 3.5, t_sym=t.t_sym, w_syms=(), z_syms=t.z_syms,
        w_anchors=(), z_anchors=t.z_anchors, rho=0.01, partition=(0.0, 1.0))
    st = ito_kunita_residual(const, inst, constant_control(inst, 0), 0.0, 1.0,
                             0.4 * basis16.unit(1), 50, 3, 1 / 32)
    assert st.mean_abs <= 1e-13
    assert st.mart_mean == 0.0


def test_ito_kunita_linear_is_quadrature_error(basis16):
    inst = make_instance("steer-1-terminal", basis16)
    u = make_functional("linear-z1", basis16, 1.0)
    prev = None
    for dt in (1 / 32, 1 / 64, 1 / 128):
        st = ito_kunita_residual(u, inst, constant_control(inst, 0), 0.0, 1.0,
                                 0.4 * basis16.unit(1), 10, 3, dt)
        assert st.stderr == pytest.approx(0.0, abs=1e-14)   # deterministic
        if prev is not None:
            assert st.mean_abs < prev
        prev = st.mean_abs
    assert prev <= 0.02 * (1 / 128) / (1 / 128)   # small absolute residual


def test_ito_kunita_slopes(basis16):
    inst = make_instance("steer-1-terminal", basis16)
    for name in ("linear-z1", "w1-z1", "quad-z1"):
        u = make_functional(name, basis16, 1.0)
        stats = [ito_kunita_residual(u, inst, constant_control(inst, 0), 0.0,
                                     1.0, 0.4 * basis16.unit(1), 100, 7, 2.0 ** -k)
                 for k in (5, 6, 7, 8, 9)]
        slope = np.polyfit(np.log([s.dt for s in stats]),
                           np.log([s.mean_abs for s in stats]), 1)[0]
        assert 0.8 <= slope <= 1.2, name


def test_ito_kunita_martingale_unbiased(basis16):
    inst = make_instance("steer-1-terminal", basis16)
    u = make_functional("quad-w1", basis16, 1.0)
    st = ito_kunita_residual(u, inst, constant_control(inst, 0), 0.0, 1.0,
                             0.4 * basis16.unit(1), 4000, 11, 2.0 ** -7)
    assert abs(st.mart_mean) <= 3 * st.mart_stderr
    assert abs(st.mean) <= 3 * max(st.stderr, 1e-14)


def test_ito_kunita_partition_guard(basis16):
    inst = make_instance("steer-1-terminal", basis16)
    u = make_functional("linear-z1", basis16, 1.0)
    split = CylindricalFunctional(
        name="split", g=u.g, t_sym=u.t_sym, w_syms=u.w_syms, z_syms=u.z_syms,
        w_anchors=u.w_anchors, z_anchors=u.z_anchors, rho=u.rho,
        partition=(0.0, 0.5, 1.0))
    with pytest.raises(ValueError):
        ito_kunita_residual(split, inst, constant_control(inst, 0), 0.25, 0.75,
                            0.4 * basis16.unit(1), 10, 3, 1 / 32)


def test_decomposition_identity_mc(basis16):
    # the defining decomposition along horizontal extensions: residual mean
    # square shrinks linearly in dt
    u = make_functional("quad-w1", basis16, 1.0)
    xr = constant_path(TimeGrid(0.0, 0.25, 4), 0.5 * basis16.unit(1))
    out = [decomposition_residual(u, basis16, xr, 1.0, 1000, 3, dt)
           for dt in (1 / 16, 1 / 32, 1 / 64)]
    ms = [o["mean_sq"] for o in out]
    assert ms[0] > ms[1] > ms[2]
    slope = np.polyfit(np.log([o["dt"] for o in out]), np.log(ms), 1)[0]
    assert 0.8 <= slope <= 1.2
    # functionals linear in the noise are exact along extensions
    u_lin = make_functional("w1-z1", basis16, 1.0)
    exact = decomposition_residual(u_lin, basis16, xr, 1.0, 200, 3, 1 / 32)
    assert exact["mean_sq"] <= 1e-25


def test_unknown_functional(basis16):
    with pytest.raises(ValueError):
        make_functional("nope", basis16, 1.0)
