import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from mobidk.idk_solvers import (CONDITION_LIMIT, BenchmarkWeights, ControllerConfig, OperatingMode,
                                SecondaryTask, compose_with_secondary, inverse_error, null_projector,
                                secondary_velocity, solve, solve_benchmark, solve_min_energy, solve_switch)
from mobidk.robot_model import default_model

from conftest import random_instance, random_spd

MODEL = default_model()

DEFAULT_G = np.array([1, 1, 1, 1, 1, 1, 0, 0, 0.0])


def energy(M, x):
    return 0.5 * x @ M @ x


# -- projector and secondary task -------------------------------------------


def test_projector_algebra_for_both_inverses(model, rng):
    for _ in range(50):
        _, J, M, _ = random_instance(model, rng)
        for pinv in (np.linalg.pinv(J), solve_min_energy(J, M, np.zeros(6)).pinv):
            assert inverse_error(J, pinv) <= 1e-9
            N = null_projector(J, pinv)
            assert np.abs(J @ N).max() <= 1e-9
            assert np.abs(N @ N - N).max() <= 1e-9
            xi = rng.normal(size=(9, 1000))
            assert np.abs(J @ N @ xi).max() <= 1e-9


def test_damped_projector_is_only_approximate(model, rng):
    # the damped inverse is not a generalized inverse, so its "projector" leaks into the task
    _, J, _, _ = random_instance(model, rng)
    out = solve_benchmark(J, np.zeros(6), BenchmarkWeights(), SecondaryTask(), np.zeros(9), projector="damped")
    assert inverse_error(J, out.pinv) > 1e-9
    assert np.abs(J @ null_projector(J, out.pinv)).max() > 1e-9


def test_secondary_velocity():
    task = SecondaryTask(DEFAULT_G, np.arange(9.0))
    assert np.array_equal(secondary_velocity(task, np.arange(9.0)), np.zeros(9))
    q = np.arange(9.0)
    q[6:] += [1.0, -2.0, 0.5]
    assert np.array_equal(secondary_velocity(task, q), np.zeros(9))
    q = np.arange(9.0)
    q[0] -= 1.0
    np.testing.assert_array_equal(secondary_velocity(task, q), np.eye(9)[0])


def test_parameter_validation():
    with pytest.raises(ValueError):
        SecondaryTask(gains=-DEFAULT_G)
    with pytest.raises(ValueError):
        BenchmarkWeights(damping=np.zeros((9, 9)))
    with pytest.raises(ValueError):
        BenchmarkWeights(task=-np.eye(6))
    with pytest.raises(ValueError):
        ControllerConfig("pseudo")
    with pytest.raises(ValueError):
        ControllerConfig(projector="svd")


# -- benchmark --------------------------------------------------------------


def test_benchmark_at_rest(model, rng):
    q, J, M, _ = random_instance(model, rng)
    out = solve_benchmark(J, np.zeros(6), BenchmarkWeights(), SecondaryTask(DEFAULT_G, q), q, M)
    assert np.array_equal(out.qdot, np.zeros(9))


def test_benchmark_approaches_exact_inverse(model, rng):
    weights = BenchmarkWeights(np.eye(6), 1e-10 * np.eye(9))
    for _ in range(20):
        q, J, _, v_d = random_instance(model, rng)
        J_a = J[:, :6]
        if np.linalg.cond(J_a) > 1e3:
            continue
        out = solve_switch(OperatingMode.MANIPULATION, J_a, J[:, 6:], np.eye(9), v_d, weights,
                           SecondaryTask(np.zeros(9)), q)
        np.testing.assert_allclose(out.qdot[:6], np.linalg.solve(J_a, v_d), atol=1e-4)


def test_benchmark_matches_generic_least_squares(model, rng):
    # minimize |W_a^1/2 (J x - v)|^2 + |W_b^1/2 x|^2 as one stacked least-squares problem
    for _ in range(20):
        q, J, M, v_d = random_instance(model, rng)
        weights = BenchmarkWeights(random_spd(rng, 6), random_spd(rng, 9, 1e-3))
        La = scipy.linalg.cholesky(weights.task)
        Lb = scipy.linalg.cholesky(weights.damping)
        A = np.vstack([La @ J, Lb])
        b = np.r_[La @ v_d, np.zeros(9)]
        x = scipy.linalg.lstsq(A, b)[0]
        task = SecondaryTask(DEFAULT_G, q + rng.normal(size=9))
        out = solve_benchmark(J, v_d, weights, task, q, M)
        expected = x + (np.eye(9) - np.linalg.pinv(J) @ J) @ secondary_velocity(task, q)
        np.testing.assert_allclose(out.qdot, expected, atol=1e-9)


# -- minimum kinetic energy -------------------------------------------------


def test_min_energy_zero_twist(model, rng):
    _, J, M, _ = random_instance(model, rng)
    assert np.array_equal(solve_min_energy(J, M, np.zeros(6)).qdot, np.zeros(9))


def test_min_energy_constraint_inverse_and_kkt(model, rng):
    for _ in range(200):
        _, J, M, v_d = random_instance(model, rng)
        out = solve_min_energy(J, M, v_d)
        assert not out.damped
        assert np.abs(J @ out.qdot - v_d).max() <= 1e-9
        assert inverse_error(J, out.pinv) <= 1e-9
        assert np.abs(M @ out.qdot + J.T @ out.multiplier).max() <= 1e-9
        assert out.residual <= 1e-9


def test_min_energy_matches_kkt_block_system(model, rng):
    for _ in range(50):
        _, J, M, v_d = random_instance(model, rng)
        K = np.block([[M, J.T], [J, np.zeros((6, 6))]])
        sol = scipy.linalg.solve(K, np.r_[np.zeros(9), v_d])
        out = solve_min_energy(J, M, v_d)
        np.testing.assert_allclose(out.qdot, sol[:9], atol=1e-10)
        np.testing.assert_allclose(out.multiplier, sol[9:], atol=1e-8)


def test_min_energy_beats_every_null_perturbation(model, rng):
    for _ in range(20):
        _, J, M, v_d = random_instance(model, rng)
        out = solve_min_energy(J, M, v_d)
        N = null_projector(J, out.pinv)
        e0 = energy(M, out.qdot)
        for xi in rng.normal(size=(200, 9)):
            dx = N @ xi
            e = energy(M, out.qdot + dx)
            assert e >= e0 - 1e-12
            assert abs(e - (e0 + energy(M, dx))) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_min_energy_invariant_to_inertia_scale(c, seed):
    rng = np.random.default_rng(seed)
    _, J, M, v_d = random_instance(MODEL, rng)
    a = solve_min_energy(J, M, v_d).qdot
    b = solve_min_energy(J, c * M, v_d).qdot
    np.testing.assert_allclose(b, a, atol=1e-9)


def test_min_energy_guard_engages_at_singularity():
    # rank-5 Jacobian: no joint produces rotation about z
    J = np.zeros((6, 9))
    J[:3, :3] = np.eye(3)
    J[3:, 3:5] = np.eye(3)[:, :2]  # rank 5
    M = np.eye(9)
    out = solve_min_energy(J, M, np.ones(6))
    assert out.damped and out.condition > CONDITION_LIMIT
    assert np.all(np.isfinite(out.qdot))


# -- composition with the secondary task ------------------------------------


def test_compose_without_gain_is_identity(model, rng):
    q, J, M, v_d = random_instance(model, rng)
    primary = solve_min_energy(J, M, v_d)
    out = compose_with_secondary(primary, J, M, SecondaryTask(np.zeros(9), q + 1), q, v_d)
    assert np.array_equal(out.qdot, primary.qdot)


def test_compose_preserves_twist_and_is_energy_orthogonal(model, rng):
    for _ in range(200):
        q, J, M, v_d = random_instance(model, rng)
        primary = solve_min_energy(J, M, v_d)
        task = SecondaryTask(DEFAULT_G, q + rng.normal(size=9))
        out = compose_with_secondary(primary, J, M, task, q, v_d)
        assert np.abs(J @ out.qdot - J @ primary.qdot).max() <= 1e-9
        assert abs(primary.qdot @ M @ (out.qdot - primary.qdot)) <= 1e-9


# -- switch mode and dispatch -----------------------------------------------


def test_switch_manipulation_pins_base(model, rng):
    q, J, M, v_d = random_instance(model, rng)
    out = solve_switch(OperatingMode.MANIPULATION, J[:, :6], J[:, 6:], M, v_d, BenchmarkWeights(),
                       SecondaryTask(DEFAULT_G, q + 1), q)
    assert out.qdot.shape == (9,)
    assert np.all(out.qdot[6:] == 0.0)


def test_switch_locomotion_delegates(model, rng):
    q, J, M, v_d = random_instance(model, rng)
    task = SecondaryTask(DEFAULT_G, q + 0.3)
    a = solve_switch(OperatingMode.LOCOMOTION, J[:, :6], J[:, 6:], M, v_d, BenchmarkWeights(), task, q)
    b = solve_benchmark(J, v_d, BenchmarkWeights(), task, q, M)
    assert np.array_equal(a.qdot, b.qdot)


def test_dispatch(model, rng):
    q, J, M, v_d = random_instance(model, rng)
    task = SecondaryTask(DEFAULT_G, q + 0.3)
    me = solve(ControllerConfig("min-energy", task=task), J, M, v_d, q)
    assert np.abs(J @ me.qdot - v_d).max() <= 1e-9
    loco = solve(ControllerConfig("locomotion", task=task), J, M, v_d, q)
    assert np.array_equal(loco.qdot, solve_benchmark(J, v_d, BenchmarkWeights(), task, q, M).qdot)
    sw = solve(ControllerConfig("switch", task=task), J, M, v_d, q, OperatingMode.MANIPULATION)
    assert np.all(sw.qdot[6:] == 0)


def test_min_energy_uses_less_energy_than_benchmark(model, rng):
    # the benchmark realizes (almost) the same twist, so it cannot beat the constrained minimum
    for _ in range(100):
        q, J, M, v_d = random_instance(model, rng)
        me = solve_min_energy(J, M, v_d)
        bench = solve_benchmark(J, v_d, BenchmarkWeights(), SecondaryTask(np.zeros(9)), q, M)
        assert energy(M, bench.qdot) >= energy(M, me.qdot) * (1 - 1e-3)
