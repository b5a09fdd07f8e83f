import math

import numpy as np
import pytest

from hjblab.paths import Path, TimeGrid, constant_path, zero_path
from hjblab.problem import (BUILTIN_INSTANCES, CoefficientBoundError,
                            ControlSet, ZeroNoise, build_noise_tree,
                            eval_G, eval_beta, eval_f, example21_instance,
                            lipschitz_probe, make_instance, sample_wiener)
from hjblab.seeding import rng_for
from hjblab.spectral import H, VSTAR

PI2 = math.pi ** 2


def ramp(basis, t1=1.0, n=16):
    grid = TimeGrid(0.0, t1, n)
    return Path(grid, np.outer(grid.nodes, basis.unit(1)))


def test_null_instance(basis64):
    inst = make_instance("null", basis64)
    z = zero_path(TimeGrid(0, 1, 4), 64)
    noise = ZeroNoise()
    assert np.all(eval_beta(inst, 0.5, z, 1.0, noise) == 0.0)
    assert eval_f(inst, 0.5, z, 1.0, noise) == 1.0
    assert eval_G(inst, z, noise) == 0.0


def test_steer_instance_beta(basis64):
    inst = make_instance("steer-1", basis64)
    z = zero_path(TimeGrid(0, 1, 4), 64)
    b = eval_beta(inst, 0.2, z, -1.0, ZeroNoise())
    assert np.allclose(b, -basis64.unit(1))
    assert inst.control_set.params == (-1.0, 0.0, 1.0)


def test_delay_instance_path_lookup(basis64):
    inst = make_instance("delay", basis64)
    x = ramp(basis64)
    # f(1, x) = min(L, ||x(1/2)||_H) = 0.5 for the unit ramp
    assert eval_f(inst, 1.0, x, 0.0, ZeroNoise()) == pytest.approx(0.5)


def test_bound_violation_raises(basis64):
    inst = make_instance("steer-1", basis64,
                         control_set=ControlSet((-3.0, 3.0)))
    z = zero_path(TimeGrid(0, 1, 4), 64)
    with pytest.raises(CoefficientBoundError):
        eval_beta(inst, 0.1, z, 3.0, ZeroNoise())


def test_all_builtins_respect_bounds(basis64):
    grid = TimeGrid(0.0, 1.0, 16)
    for name in BUILTIN_INSTANCES:
        inst = make_instance(name, basis64)
        probe = lipschitz_probe(inst, 25, H, rng_for(99, f"lip-{name}"))
        L = inst.coeffs.L
        assert probe["f"] <= L + 1e-9, name
        assert probe["beta"] <= L + 1e-9, name
        assert probe["G"] <= L + 1e-9, name
        assert max(probe["max_f"], probe["max_beta"], probe["max_G"]) <= L + 1e-9, name


def test_lipschitz_probe_examples(basis64):
    null = make_instance("null", basis64)
    p = lipschitz_probe(null, 10, H, rng_for(1, "lp-null"))
    assert p["f"] == 0.0 and p["beta"] == 0.0 and p["G"] == 0.0
    steer = make_instance("steer-1", basis64)
    p = lipschitz_probe(steer, 20, H, rng_for(1, "lp-steer"))
    assert p["beta"] == 0.0            # path-independent drift
    assert p["f"] <= 1.0 + 1e-9        # linear functional has modulus ||e1|| = 1
    delay = make_instance("delay", basis64)
    p = lipschitz_probe(delay, 20, H, rng_for(1, "lp-delay"))
    assert p["f"] <= 1.0 + 1e-9


def test_wiener_determinism_and_moments():
    grid = TimeGrid(0.0, 1.0, 64)
    w1 = sample_wiener(grid, 1, rng_for(7, "w"))
    w2 = sample_wiener(grid, 1, rng_for(7, "w"))
    assert np.array_equal(w1.increments, w2.increments)
    assert np.all(w1.values[0] == 0.0)
    # terminal variance over 10^4 samples within 5 percent of T
    terminals = np.array([sample_wiener(grid, 1, rng_for(1, "wm", i)).values[-1, 0]
                          for i in range(10000)])
    assert abs(terminals.var() - 1.0) < 0.05
    assert abs(terminals.mean()) < 5 * 1.0 / math.sqrt(10000)


def test_wiener_increment_scaling():
    coarse = sample_wiener(TimeGrid(0.0, 1.0, 16), 1, rng_for(3, "ws"))
    fine = sample_wiener(TimeGrid(0.0, 1.0, 64), 1, rng_for(3, "ws2"))
    # std scales like sqrt(dt): ratio of dts is 4, of stds is 2 (within MC noise)
    r = coarse.increments.std() / fine.increments.std()
    assert 1.5 < r < 2.7


def test_wiener_cadlag_lookup():
    grid = TimeGrid(0.0, 1.0, 4)
    w = sample_wiener(grid, 2, rng_for(11, "wl"))
    assert np.array_equal(w.w_at(0.3), w.values[1])
    assert np.array_equal(w.w_at(1.0), w.values[-1])
    assert np.array_equal(w.w_at(5.0), w.values[-1])


def test_noise_tree_structure():
    grid = TimeGrid(0.0, 1.0, 1)
    tree = build_noise_tree(grid, 1)
    assert tree.n_nodes(1) == 2
    incs = sorted(tree.step_increments[:, 0])
    assert incs == pytest.approx([-1.0, 1.0])
    deep = build_noise_tree(TimeGrid(0.0, 1.0, 2), 1)
    leaves = [deep.history(2, i).values[-1, 0] for i in range(4)]
    assert sorted(leaves) == pytest.approx(
        sorted([-2 * math.sqrt(0.5), 0.0, 0.0, 2 * math.sqrt(0.5)]))
    # E[W(T)^2] = T exactly on the tree
    assert np.mean([v ** 2 for v in leaves]) == pytest.approx(1.0, abs=1e-14)


def test_noise_tree_budget():
    with pytest.raises(ValueError):
        build_noise_tree(TimeGrid(0.0, 1.0, 13), 1, node_budget=4096)


def test_noise_tree_tower_property(rng):
    tree = build_noise_tree(TimeGrid(0.0, 1.0, 3), 1)
    leaf_vals = rng.standard_normal(tree.n_nodes(3))
    for i in range(3):
        for j in range(i, 4):
            inner = tree.condition(leaf_vals, j)
            # condition the conditional back down to level i
            block = tree.branching ** (j - i)
            nested = inner.reshape(tree.n_nodes(i), block).mean(axis=1)
            direct = tree.condition(leaf_vals, i)
            assert np.allclose(nested, direct, atol=1e-14)


def test_tree_and_wiener_moments_agree():
    grid = TimeGrid(0.0, 1.0, 2)
    tree = build_noise_tree(grid, 1)
    leaves = np.array([tree.history(2, i).values[-1, 0] for i in range(4)])
    assert leaves.mean() == pytest.approx(0.0, abs=1e-15)
    assert (leaves ** 2).mean() == pytest.approx(1.0, abs=1e-14)


def test_example21_reduces_when_vol_zero(basis64):
    inst = example21_instance(basis64, eta_vol=0.0)
    assert not inst.is_random
    x = ramp(basis64)
    # core running cost is min(L, ||x(t)||): at the unit ramp and t=1 -> 1
    assert eval_f(inst, 1.0, x, 0.0, ZeroNoise()) == pytest.approx(1.0)


def test_example21_randomness_flag_and_shift(basis64):
    inst = example21_instance(basis64, eta_modes=1, eta_rate=1.0, eta_vol=0.5)
    assert inst.is_random
    grid = TimeGrid(0.0, 1.0, 8)
    w = sample_wiener(grid, 1, rng_for(5, "ex21"))
    z = zero_path(grid, 64)
    # with x = 0 the cost reads the shift path itself
    val = eval_f(inst, 1.0, z, 0.0, w)
    assert 0.0 <= val <= 1.0
    wz = ZeroNoise(1)
    assert eval_f(inst, 1.0, z, 0.0, wz) == 0.0


def test_make_instance_overrides_and_errors(basis64):
    inst = make_instance("steer-1", basis64, f="zero", G="linear")
    z = zero_path(TimeGrid(0, 1, 4), 64)
    assert eval_f(inst, 0.5, z, 1.0, ZeroNoise()) == 0.0
    with pytest.raises(ValueError):
        make_instance("nope", basis64)
    with pytest.raises(ValueError):
        make_instance("steer-1", basis64, f="nope")
