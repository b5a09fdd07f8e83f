import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjblab.estimates import growth_constant_sq, holder_constant
from hjblab.paths import (GridMismatchError, Path, PathClassSpec, TimeGrid,
                          constant_path, exp_step_weights, freezing_gap,
                          horizontal_extend, is_in_path_class, path_dist,
                          path_from_text, path_to_text, resample,
                          sample_path_class, stepwise_project, sup_norm,
                          vertical_perturb, zero_path)
from hjblab.spectral import H, V, VSTAR, SpectralBasis

PI2 = math.pi ** 2


def ramp_path(basis, n=10):
    grid = TimeGrid(0.0, 1.0, n)
    return Path(grid, np.outer(grid.nodes, basis.unit(1)))


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    g = TimeGrid(0.0, 1.0, 8)
    assert g.dt == 0.125
    assert g.left_index(0.3) == 2
    assert g.index_of(0.25) == 2
    with pytest.raises(GridMismatchError):
        g.index_of(0.3)


def test_cadlag_evaluation_and_override(basis64):
    grid = TimeGrid(0.0, 1.0, 4)
    x = Path(grid, np.outer([0, 1, 2, 3, 4], basis64.unit(1)))
    assert x.value_at(0.3)[0] == 1.0      # left node
    assert x.value_at(1.0)[0] == 4.0
    pert = vertical_perturb(x, basis64.unit(1))
    assert pert.value_at(1.0)[0] == 5.0
    assert pert.value_at(0.99)[0] == 3.0  # override applies only at the end
    assert pert.values[-1][0] == 4.0


def test_sup_norm_examples(basis64):
    grid = TimeGrid(0.0, 1.0, 10)
    assert sup_norm(basis64, constant_path(grid, basis64.unit(1)), H) == 1.0
    assert sup_norm(basis64, zero_path(grid, 64), H) == 0.0
    assert sup_norm(basis64, ramp_path(basis64), H) == pytest.approx(1.0)


def test_path_dist_examples(basis64):
    h = basis64.unit(1)
    x = constant_path(TimeGrid(0.0, 0.25, 2), h)
    y = constant_path(TimeGrid(0.0, 1.0, 8), h)
    assert path_dist(basis64, x, x, H) == 0.0
    # value term vanishes, time term forced: sqrt(0.75)
    assert path_dist(basis64, x, y, H) == pytest.approx(math.sqrt(0.75), abs=1e-15)
    z = zero_path(TimeGrid(0.0, 1.0, 8), 64)
    # constant offset e1 in V*: 1/sqrt(1+pi^2)
    assert path_dist(basis64, z, y, VSTAR) == pytest.approx(
        1.0 / math.sqrt(1.0 + PI2), abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1),
       st.sampled_from([H, VSTAR]))
def test_path_dist_symmetry_triangle(seed, space):
    basis = SpectralBasis(8)
    rng = np.random.default_rng(seed)
    grid = TimeGrid(0.0, 1.0, 6)
    paths = [Path(grid, rng.standard_normal((7, 8))) for _ in range(3)]
    x, y, z = paths
    assert path_dist(basis, x, y, space) == pytest.approx(
        path_dist(basis, y, x, space), rel=1e-12)
    dxy = path_dist(basis, x, y, space)
    dxz = path_dist(basis, x, z, space)
    dzy = path_dist(basis, z, y, space)
    assert dxy <= dxz + dzy + 1e-12


def test_horizontal_extend(basis64):
    x = ramp_path(basis64, 10)
    assert horizontal_extend(x, 0.0) is x
    c = constant_path(TimeGrid(0.0, 0.5, 5), basis64.unit(2))
    ext = horizontal_extend(c, 0.5)
    assert np.allclose(ext.node_values(), basis64.unit(2))
    # ramp frozen at e1 on [1, 2]; metric distance exactly sqrt(delta)
    ext2 = horizontal_extend(x, 1.0)
    assert ext2.value_at(1.7)[0] == 1.0
    assert path_dist(basis64, x, ext2, H) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=16))
def test_horizontal_extend_sqrt_delta(k):
    basis = SpectralBasis(4)
    grid = TimeGrid(0.0, 1.0, 8)
    rng = np.random.default_rng(k)
    x = Path(grid, rng.standard_normal((9, 4)))
    delta = k * grid.dt
    assert path_dist(basis, x, horizontal_extend(x, delta), H) == pytest.approx(
        math.sqrt(delta), abs=1e-12)


def test_vertical_perturb_examples(basis64):
    grid = TimeGrid(0.0, 1.0, 4)
    z = zero_path(grid, 64)
    assert vertical_perturb(z, np.zeros(64)) is z
    pert = vertical_perturb(z, basis64.unit(1))
    assert np.all(pert.values == 0.0)
    assert pert.end_value()[0] == 1.0
    diff = max(basis64.norm(a - b, VSTAR)
               for a, b in zip(pert.node_values(), z.node_values()))
    assert diff == pytest.approx(basis64.norm(basis64.unit(1), VSTAR), abs=1e-15)


def test_stepwise_project_examples(basis64):
    x = ramp_path(basis64, 8)
    # 2^M = n_steps: left-endpoint freezing at every node = identity on step paths
    assert np.allclose(stepwise_project(x, 3).values, x.values)
    # ramp at M=1: 0 on [0, 1/2), 1/2 on [1/2, 1), 1 at 1
    p = stepwise_project(x, 1)
    assert p.value_at(0.49)[0] == 0.0
    assert p.value_at(0.51)[0] == 0.5
    assert p.value_at(1.0)[0] == 1.0
    # resamples when 2^M does not divide n_steps
    odd = ramp_path(basis64, 6)
    q = stepwise_project(odd, 2)
    assert q.grid.n_steps % 4 == 0


def test_path_class_roundtrip(basis64, rng):
    spec = PathClassSpec(basis64, k=1.0, anchor=np.zeros(64), horizon=1.0,
                         n_steps=32)
    for i in range(20):
        x = sample_path_class(spec, np.random.default_rng(i))
        assert is_in_path_class(x, spec, tol=1e-8)
        assert x.drift is not None
    tight = PathClassSpec(basis64, k=0.2, anchor=np.zeros(64), horizon=1.0,
                          n_steps=32)
    x = sample_path_class(spec, np.random.default_rng(3))
    assert not is_in_path_class(x, tight, tol=1e-8)


def test_path_class_closed_form_constant_drift(basis64):
    # g = k e1 from zero: x(1) = (1 - e^{-pi^2}) / pi^2 e1
    grid = TimeGrid(0.0, 1.0, 64)
    decay, pulse = exp_step_weights(basis64, grid.dt)
    vals = np.zeros((65, 64))
    for i in range(64):
        vals[i + 1] = decay * vals[i] + pulse * basis64.unit(1)
    expected = (1.0 - math.exp(-PI2)) / PI2
    assert vals[-1][0] == pytest.approx(expected, rel=1e-12)
    spec = PathClassSpec(basis64, k=1.0, anchor=np.zeros(64), horizon=1.0,
                         n_steps=64)
    assert is_in_path_class(Path(grid, vals, drift=None), spec, tol=1e-8)


def test_path_class_zero_and_anchor(basis64):
    anchor = constant_path(TimeGrid(0.0, 0.25, 8), basis64.unit(1))
    spec = PathClassSpec(basis64, k=0.0, anchor=anchor, horizon=1.0)
    x = sample_path_class(spec, np.random.default_rng(0))
    assert np.allclose(x.values[:9], basis64.unit(1))
    assert is_in_path_class(x, spec)
    # zero path lies in every class anchored at zero
    z = zero_path(TimeGrid(0.0, 1.0, 32), 64)
    spec0 = PathClassSpec(basis64, k=0.0, anchor=np.zeros(64), horizon=1.0,
                          n_steps=32)
    assert is_in_path_class(z, spec0)


def test_path_class_rejects_jump(basis64):
    spec = PathClassSpec(basis64, k=1.0, anchor=np.zeros(64), horizon=1.0,
                         n_steps=32)
    x = sample_path_class(spec, np.random.default_rng(5))
    vals = x.values.copy()
    vals[16:] += basis64.unit(1)
    assert not is_in_path_class(Path(x.grid, vals), spec, tol=1e-8)


def test_path_class_grid_mismatch(basis64):
    spec = PathClassSpec(basis64, k=1.0, anchor=np.zeros(64), horizon=1.0,
                         n_steps=32)
    other = zero_path(TimeGrid(0.0, 1.0, 16), 64)
    with pytest.raises(GridMismatchError):
        is_in_path_class(other, spec)


def test_freezing_gap_bound_and_decay(basis64):
    k, T = 1.0, 1.0
    cst = basis64.constants
    bound_const = holder_constant(k, T, cst.c, cst.c1_plus, cst.c2, cst.c3)
    spec = PathClassSpec(basis64, k=k, anchor=np.zeros(64), horizon=T, n_steps=64)
    levels = (1, 2, 3, 4, 5, 6)
    sups = []
    for level in levels:
        worst = 0.0
        for i in range(10):
            x = sample_path_class(spec, np.random.default_rng(100 + i))
            gap = freezing_gap(basis64, x, level, VSTAR)
            worst = max(worst, gap)
            assert gap <= bound_const * (1 + 0.0) * math.sqrt(T / 2 ** level)
        sups.append(worst)
    assert all(a >= b - 1e-12 for a, b in zip(sups, sups[1:]))
    # fitted C dominates the whole table and freezing at every node is exact
    c_fit = max(s * math.sqrt(2 ** m) for m, s in zip(levels, sups))
    for m, s in zip(levels, sups):
        assert s <= c_fit / math.sqrt(2 ** m) + 1e-15
    assert sups[-1] == 0.0


def test_class_paths_holder_modulus(basis64):
    # Hölder-in-sqrt bound with the estimate-module constant, over node pairs
    k, T = 2.0, 1.0
    cst = basis64.constants
    kbar = holder_constant(k, T, cst.c, cst.c1_plus, cst.c2, cst.c3)
    spec = PathClassSpec(basis64, k=k, anchor=np.zeros(64), horizon=T, n_steps=32)
    rng = np.random.default_rng(7)
    for i in range(10):
        x = sample_path_class(spec, np.random.default_rng(i))
        for _ in range(5):
            a = int(rng.integers(0, 32))
            b = int(rng.integers(a + 1, 33))
            gap = basis64.norm(x.values[b] - x.values[a], VSTAR)
            dt_gap = math.sqrt((b - a) * x.grid.dt)
            assert gap <= kbar * (1 + 0.0) * dt_gap


def test_serialization_roundtrip(basis16, rng):
    grid = TimeGrid(0.0, 1.0, 8)
    x = Path(grid, rng.standard_normal((9, 16)))
    back = path_from_text(path_to_text(x))
    assert np.array_equal(back.values, x.values)
    assert back.grid.n_steps == 8
    assert back.grid.t1 == 1.0


def test_resample_cadlag(basis64):
    x = ramp_path(basis64, 4)
    fine = resample(x, TimeGrid(0.0, 1.0, 8))
    assert fine.value_at(0.3)[0] == x.value_at(0.3)[0]
    assert fine.value_at(1.0)[0] == 1.0
