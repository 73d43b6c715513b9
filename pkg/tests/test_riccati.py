import numpy as np
import pytest

from mmlq.riccati import RiccatiError, gain_schedule, op_F, op_G, op_K, op_R, solve_global, solve_local, solve_schedule
from mmlq.scenarios import random_scenario, scalar


def scalar_backward(a, b, q, r, qT, T):
    """Independent scalar oracle: plain-float backward recursion."""
    S = [0.0] * T
    S[T - 1] = qT
    for k in range(T - 2, -1, -1):
        p = S[k + 1]
        S[k] = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
    return S


def open_loop_value(A, B, Q, R, QT, T, x0):
    """Minimum deterministic cost from ``x0`` by brute-force least squares over the control sequence."""
    nx, nu = B.shape
    # x(t) = A^(t-1) x0 + sum_{k<t} A^(t-1-k) B u(k), stacked.
    Phi = np.zeros((T * nx, nx))
    Gam = np.zeros((T * nx, (T - 1) * nu))
    for t in range(T):
        Phi[t * nx:(t + 1) * nx] = np.linalg.matrix_power(A, t)
        for k in range(t):
            Gam[t * nx:(t + 1) * nx, k * nu:(k + 1) * nu] = np.linalg.matrix_power(A, t - 1 - k) @ B
    W = np.kron(np.eye(T), Q)
    W[-nx:, -nx:] = QT
    Rb = np.kron(np.eye(T - 1), R)
    H = Gam.T @ W @ Gam + Rb
    g = Gam.T @ W @ Phi @ x0
    u = -np.linalg.solve(H, g)
    x = Phi @ x0 + Gam @ u
    return float(x @ W @ x + u @ Rb @ u)


def test_operator_scalar_values():
    one = np.eye(1)
    assert op_R(one, one, one, one, one)[0, 0] == pytest.approx(1.5, abs=1e-15)
    assert op_G(one, one, one, one)[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert op_K(one, one, one, one, one)[0, 0] == pytest.approx(2 / 3, abs=1e-15)
    assert op_F(one, one, one, one, one)[0, 0] == pytest.approx(2 / 3, abs=1e-15)


def test_operator_degenerate_cases(rng):
    A = rng.standard_normal((3, 3))
    P = np.eye(3) * 2
    Q = np.diag([1.0, 2.0, 3.0])
    B0 = np.zeros((3, 2))
    R = np.eye(2)
    np.testing.assert_allclose(op_R(P, A, B0, Q, R), Q + A.T @ P @ A, atol=1e-12)
    np.testing.assert_array_equal(op_G(P, A, B0, R), np.zeros((2, 3)))
    np.testing.assert_array_equal(op_G(np.zeros((3, 3)), A, rng.standard_normal((3, 2)), R), np.zeros((2, 3)))
    np.testing.assert_array_equal(op_R(np.zeros((3, 3)), A, rng.standard_normal((3, 2)), np.zeros((3, 3)), R), np.zeros((3, 3)))
    C0 = np.zeros((2, 3))
    Sw = np.eye(3)
    np.testing.assert_array_equal(op_K(P, A, C0, Sw, np.eye(2)), np.zeros((3, 2)))
    np.testing.assert_allclose(op_F(P, A, C0, Sw, np.eye(2)), A @ P @ A.T + Sw, atol=1e-12)


def test_huge_observation_noise_gives_vanishing_gain():
    one = np.eye(1)
    assert abs(op_K(one, one, one, one, 1e12 * one)[0, 0]) < 1e-9


def test_op_K_F_are_the_linear_conditional_update(rng):
    # Oracle: Gaussian conditioning of x' = A x + w on y = C x' + v, in joint-covariance form.
    A = rng.standard_normal((3, 3))
    C = rng.standard_normal((2, 3))
    P = np.eye(3) + 0.1
    Sw, Sv = np.diag([0.5, 0.2, 0.1]), np.diag([0.3, 0.7])
    M = A @ P @ A.T + Sw
    Sxy = M @ C.T
    Syy = C @ M @ C.T + Sv
    np.testing.assert_allclose(op_K(P, A, C, Sw, Sv), Sxy @ np.linalg.inv(Syy), rtol=1e-10)
    np.testing.assert_allclose(op_F(P, A, C, Sw, Sv), M - Sxy @ np.linalg.inv(Syy) @ Sxy.T, rtol=1e-10, atol=1e-12)


def test_singular_delta_raises():
    with pytest.raises(RiccatiError):
        op_G(np.eye(1), np.eye(1), np.eye(1), np.array([[-1.0]]))


def test_scalar_global_schedule_matches_oracle():
    S, L, D = solve_schedule(np.eye(1), np.eye(1), np.eye(1), np.eye(1), np.eye(1), 3)
    oracle = scalar_backward(1.0, 1.0, 1.0, 1.0, 1.0, 3)
    np.testing.assert_allclose(S[:, 0, 0], oracle, rtol=1e-14)
    # The oracle's values, frozen.
    np.testing.assert_allclose(S[:, 0, 0], [1.6, 1.5, 1.0], rtol=1e-14)
    np.testing.assert_allclose(L[:, 0, 0], [1.5 / 2.5, 0.5], rtol=1e-14)
    np.testing.assert_allclose(D[:, 0, 0], [2.5, 2.0], rtol=1e-14)


def test_single_step_horizon():
    A, B, Q, R, QT = (np.array([[v]]) for v in (0.9, 0.4, 1.0, 2.0, 3.0))
    S, L, D = solve_schedule(A, B, Q, R, QT, 2)
    np.testing.assert_allclose(S[0], op_R(QT, A, B, Q, R))
    np.testing.assert_allclose(S[1], QT)
    assert L.shape == (1, 1, 1) and D.shape == (1, 1, 1)


def test_zero_cost_gives_zero_schedule():
    s = scalar(1, Q=np.zeros((2, 2)), QT=np.zeros((2, 2)))
    S, L, _ = solve_global(s)
    assert not S.any() and not L.any()
    Sl, Ll, _ = solve_local(s, 1)
    assert not Sl.any() and not Ll.any()


def test_local_schedule_equals_global_for_matching_blocks():
    s = scalar(1, Aii=1.0, Bii=1.0, Q=np.eye(2), R=np.eye(2))
    Sl, Ll, Dl = solve_local(s, 1)
    S, L, D = solve_schedule(np.eye(1), np.eye(1), np.eye(1), np.eye(1), np.eye(1), s.T)
    np.testing.assert_array_equal(Sl, S)
    np.testing.assert_array_equal(Ll, L)


def test_local_schedules_follow_each_agent():
    s = scalar(2, Aii=[1.0, 0.6], Bii=[1.0, 0.5], T=6)
    sched = gain_schedule(s)
    for i, (a, b) in enumerate([(1.0, 1.0), (0.6, 0.5)], start=1):
        np.testing.assert_allclose(sched.Sloc[i - 1][:, 0, 0], scalar_backward(a, b, 1.0, 1.0, 1.0, 6), rtol=1e-13)
    assert not np.allclose(sched.Sloc[0], sched.Sloc[1])


def test_value_identity_and_gain_formula(rng):
    for _ in range(10):
        s = random_scenario(rng)
        sched = gain_schedule(s)
        x0 = rng.standard_normal(s.topology.nx)
        # Closed-loop cost of u = -L x equals x0' S(1) x0.
        x, J = x0.copy(), 0.0
        for t in range(1, s.T):
            u = -sched.L(t) @ x
            J += x @ s.Qs @ x + u @ s.Rs @ u
            x = s.A @ x + s.B @ u
        J += x @ s.QTs @ x
        V = x0 @ sched.S(1) @ x0
        assert J == pytest.approx(V, rel=1e-9)
        assert V == pytest.approx(open_loop_value(s.A, s.B, s.Qs, s.Rs, s.QTs, s.T, x0), rel=1e-8)
        for t in range(1, s.T):
            np.testing.assert_allclose(
                sched.DeltaCom[t - 1] @ sched.L(t), s.B.T @ sched.S(t + 1) @ s.A, atol=1e-9 * (1 + np.abs(sched.S(t + 1)).max())
            )


def test_schedule_json_shape(gauss):
    d = gain_schedule(gauss).to_dict()
    assert len(d["Scom"]) == gauss.T
    assert len(d["Lcom"]) == gauss.T - 1
    assert len(d["Sloc"][0]) == gauss.T
