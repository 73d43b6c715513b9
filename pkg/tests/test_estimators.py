import numpy as np
import pytest
from scipy import integrate, stats

from mmlq.estimators import (
    BayesFilter,
    FilterConfig,
    FilterDegeneracyError,
    bayes_filter_init,
    bayes_filter_step,
    common_filter_init,
    density_mean,
    density_to_csv,
    llms_schedule,
    schedules_to_json,
)
from mmlq.controllers import best_linear, optimal
from mmlq.noise import Gaussian, Laplace, PointMass, Uniform
from mmlq.oracle import ExactLaw
from mmlq.scenarios import bimodal_observation, random_scenario, scalar
from mmlq.simulation import draw_batch, rollout, run_batch
from mmlq.splitting import common_information, local_information

GRID = FilterConfig(closed_form_gaussian=False)


def batch_error_covariance(s, i):
    """Independent oracle: ``Var(x_i(t) | y_i(1:t))`` by stacking the joint Gaussian law."""
    Aii, _, _, _, C = s.local(i)
    d, T = Aii.shape[0], s.T
    Sx, Sw, Sv = s.noise.Sigma_x(i), s.noise.Sigma_w(i), s.noise.Sigma_v(i)
    # Primitive vector [xi(1), w(1), ..., w(T-1)] with block-diagonal covariance.
    P = np.zeros((T * d, T * d))
    P[:d, :d] = Sx
    for k in range(1, T):
        P[k * d:(k + 1) * d, k * d:(k + 1) * d] = Sw
    # xi(t) = Aii^(t-1) xi(1) + sum_k Aii^(t-1-k) w(k).
    maps = []
    for t in range(1, T + 1):
        M = np.zeros((d, T * d))
        M[:, :d] = np.linalg.matrix_power(Aii, t - 1)
        for k in range(1, t):
            M[:, k * d:(k + 1) * d] = np.linalg.matrix_power(Aii, t - 1 - k)
        maps.append(M)
    out = []
    for t in range(1, T + 1):
        Y = np.vstack([C @ maps[k] for k in range(t)])
        Vy = Y @ P @ Y.T + np.kron(np.eye(t), Sv)
        Cxy = maps[t - 1] @ P @ Y.T
        out.append(maps[t - 1] @ P @ maps[t - 1].T - Cxy @ np.linalg.solve(Vy, Cxy.T))
    return np.array(out)


def test_llms_covariance_matches_batch_conditioning(rng):
    for _ in range(5):
        s = random_scenario(rng, max_T=8)
        for i in range(1, s.n + 1):
            np.testing.assert_allclose(llms_schedule(s, i).P, batch_error_covariance(s, i), rtol=1e-8, atol=1e-10)


def test_llms_estimate_equals_exact_linear_projection(micro):
    # Under a linear closed loop the information vector is affine in the primitives,
    # so the recursive estimate must equal the batch projection onto it.
    law = ExactLaw(micro)
    tr = rollout(micro, best_linear(micro), law.draw)
    for t in range(1, micro.T + 1):
        est = law.linear_estimate(tr.x[:, t - 1, 1:2], local_information(micro, tr, t, 1))
        np.testing.assert_allclose(tr.llms[0][:, t - 1], est, atol=1e-10)


@pytest.mark.parametrize("fixture", ["micro", "two_minor"])
def test_bayes_estimate_equals_enumerated_conditional_mean(fixture, request):
    s = request.getfixturevalue(fixture)
    law = ExactLaw(s)
    tr = rollout(s, optimal(s), law.draw)
    for i in range(1, s.n + 1):
        for t in range(1, s.T + 1):
            exact = law.cond_expect(tr.x[:, t - 1, s.topology.xs[i]], local_information(s, tr, t, i))
            np.testing.assert_allclose(tr.bayes[i - 1][:, t - 1], exact, atol=1e-10)


def test_common_estimate_equals_enumerated_conditional_mean(two_minor):
    s = two_minor
    law = ExactLaw(s)
    tr = rollout(s, optimal(s), law.draw)
    for t in range(1, s.T + 1):
        exact = law.cond_expect(tr.x[:, t - 1], common_information(s, tr, t))
        np.testing.assert_allclose(tr.xhat_c[:, t - 1], exact, atol=1e-10)


def test_common_filter_init_puts_major_state_first(gauss):
    x0 = np.array([[1.5], [-2.0]])
    np.testing.assert_array_equal(common_filter_init(gauss, x0), [[1.5, 0.0], [-2.0, 0.0]])


def bimodal_posterior_mean(y, sx, sw, a=2.0):
    """Closed form for xi(2): with v = +-a the states are y - v, so the posterior is a 4-atom law."""
    num = den = 0.0
    for v1 in (-a, a):
        for v2 in (-a, a):
            x1, x2 = y[0] - v1, y[1] - v2
            w = stats.norm(0, np.sqrt(sx)).pdf(x1) * stats.norm(0, np.sqrt(sw)).pdf(x2 - x1)
            num += w * x2
            den += w
    return num / den


def test_bayes_discrete_observation_noise_matches_closed_form():
    s = bimodal_observation(T=2)
    # No feedback from controls: zero the inputs so the anchor stays at the origin.
    f = BayesFilter(s, 1)
    assert f.mode == "atoms"
    y = np.array([[0.7, 2.9], [-1.2, -3.1], [3.5, 0.2]])
    d = f.init(y[:, :1])
    zero = np.zeros((3, 1))
    d = f.step(d, y[:, 1:], zero, zero, zero)
    got = density_mean(d)[:, 0]
    want = [bimodal_posterior_mean(row, 1.0, 0.25) for row in y]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def quadrature_posterior_mean(y, sx, b, a, n=3001):
    """Two-step posterior mean of xi(2) by a tensor trapezoid rule.

    ``xi(1) ~ N(0, sx)``, Laplace(b) process noise, uniform(±a) observation
    noise: the likelihood confines both states to a box around ``y``.
    """
    x1 = np.linspace(y[0] - a, y[0] + a, n)
    x2 = np.linspace(y[1] - a, y[1] + a, n)
    dens = stats.norm(0, np.sqrt(sx)).pdf(x1)[:, None] * stats.laplace(0, b).pdf(x2[None, :] - x1[:, None])
    den = integrate.trapezoid(integrate.trapezoid(dens, x2, axis=1), x1)
    num = integrate.trapezoid(integrate.trapezoid(dens * x2[None, :], x2, axis=1), x1)
    return num / den


def test_grid_filter_matches_quadrature_for_laplace_and_uniform_noise():
    s = scalar(1, x1=(Gaussian([[1.0]]), Gaussian([[1.0]])), w=(Gaussian([[0.5]]), Laplace([0.5])), v=Uniform([1.0]), T=2)
    f = BayesFilter(s, 1)
    assert f.mode == "grid"
    y = np.array([[0.3, 0.9], [-1.1, 0.4]])
    d = f.init(y[:, :1])
    zero = np.zeros((2, 1))
    d = f.step(d, y[:, 1:], zero, zero, zero)
    for k in range(2):
        want = quadrature_posterior_mean(y[k], 1.0, 0.5, 1.0)
        # Uniform likelihood edges fall between grid nodes: first-order accuracy in the node spacing.
        assert density_mean(d)[k, 0] == pytest.approx(want, abs=5e-3)


def test_grid_filter_reproduces_kalman_in_gaussian_case(gauss):
    tr = run_batch(gauss, optimal(gauss), 500, 3, record=("llms",), filter_config=GRID)
    assert np.abs(tr.bayes[0] - tr.llms[0]).max() < 1e-9


def test_low_rank_kernel_agrees_with_dense_kernel(gauss):
    dense = run_batch(gauss, optimal(gauss), 300, 4, filter_config=FilterConfig(closed_form_gaussian=False, kernel_rank_tol=0.0))
    low = run_batch(gauss, optimal(gauss), 300, 4, filter_config=GRID)
    assert np.abs(dense.bayes[0] - low.bayes[0]).max() < 1e-9


def test_closed_form_gaussian_mode_equals_llms(rng):
    s = random_scenario(rng, max_T=6)
    tr = run_batch(s, optimal(s), 200, 2, record=("llms",))
    for b, l in zip(tr.bayes, tr.llms):
        assert np.abs(b - l).max() < 1e-10


def test_particle_filter_tracks_kalman_in_two_dimensions():
    from mmlq.model import AgentTopology, CostSpec, NoiseSpec, Scenario, SystemMatrices

    topo = AgentTopology(1, [1, 2], [1, 1], [1])
    sysm = SystemMatrices(np.eye(1), [np.array([[0.5], [0.0]])], [np.array([[0.9, 0.2], [0.0, 0.8]])], np.eye(1), [np.zeros((2, 1))], [np.array([[1.0], [0.5]])], [np.array([[1.0, 1.0]])])
    g = lambda k: Gaussian(np.eye(k) * 0.5)  # noqa: E731
    s = Scenario(topo, sysm, CostSpec(np.eye(3), np.eye(2), np.eye(3)), NoiseSpec((g(1), g(2)), (g(1), g(2)), (g(1),)), 4)
    cfg = FilterConfig(closed_form_gaussian=False, n_particles=4096)
    assert BayesFilter(s, 1, cfg).mode == "particles"
    tr = run_batch(s, optimal(s), 200, 5, record=("llms",), filter_config=cfg)
    err = tr.bayes[0] - tr.llms[0]
    # Monte Carlo error of a 4096-particle estimate: a few percent of the posterior spread.
    assert np.abs(err).mean() < 0.03
    assert np.abs(err).max() < 0.2


def two_dim_laplace_scenario():
    from mmlq.model import AgentTopology, CostSpec, NoiseSpec, Scenario, SystemMatrices

    topo = AgentTopology(1, [1, 2], [1, 1], [1])
    sysm = SystemMatrices(np.eye(1), [np.array([[0.5], [0.0]])], [np.eye(2) * 0.9], np.eye(1), [np.zeros((2, 1))], [np.ones((2, 1))], [np.array([[1.0, 0.5]])])
    noise = NoiseSpec((Gaussian([[1.0]]), Laplace([0.5, 0.5])), (Gaussian([[1.0]]), Laplace([0.3, 0.3])), (Gaussian([[0.5]]),))
    return Scenario(topo, sysm, CostSpec(np.eye(3), np.eye(2), np.eye(3)), noise, 3)


@pytest.mark.parametrize("builder", [lambda: scalar(1, w=(Gaussian([[0.5]]), Laplace([0.4])), v=Laplace([0.6]), T=3), two_dim_laplace_scenario], ids=["grid", "particles"])
def test_filters_do_not_depend_on_chunking(builder):
    s = builder()
    cfg = FilterConfig(n_particles=512)
    a = run_batch(s, optimal(s), 40, 9, chunk=40, filter_config=cfg)
    b = run_batch(s, optimal(s), 40, 9, chunk=7, filter_config=cfg)
    np.testing.assert_array_equal(a.draw.v, b.draw.v)
    # Same primitives and auxiliary streams; only BLAS summation order may differ.
    np.testing.assert_allclose(a.bayes[0], b.bayes[0], rtol=0, atol=1e-12)


def test_degeneracy_reports_trial_indices():
    s = scalar(1, v=Uniform([1.0]), T=2)
    f = BayesFilter(s, 1)
    y = np.array([[0.1], [100.0], [0.2]])
    with pytest.raises(FilterDegeneracyError) as exc:
        f.init(y, trial_start=10)
    assert exc.value.trials == [11]


def test_atom_explosion_is_guarded():
    two = PointMass([[-1.0], [1.0]], [0.5, 0.5])
    s = scalar(1, x1=two, w=two, v=two, T=6)
    f = BayesFilter(s, 1, FilterConfig(max_atoms=8))
    d = f.init(np.zeros((1, 1)))
    zero = np.zeros((1, 1))
    with pytest.raises(ValueError, match="max_atoms"):
        for t in range(2, 7):
            # x(t) has the parity of t, so y(t) = x(t) +- 1 must have the other one.
            d = f.step(d, np.full((1, 1), float(t % 2 == 0)), zero, zero, zero)


def test_discrete_observation_with_singular_C_is_rejected():
    s = scalar(1, C=0.0, v=PointMass([[-1.0], [1.0]], [0.5, 0.5]))
    with pytest.raises(ValueError, match="invertible"):
        BayesFilter(s, 1)


def test_wrappers_and_exports(gauss):
    draw = draw_batch(gauss, 0, 0, 3)
    f, d = bayes_filter_init(gauss, 1, draw.v[:, 0], FilterConfig(closed_form_gaussian=False))
    d2 = bayes_filter_step(f, d, draw.v[:, 1], np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)))
    assert d2.t == 2 and d2.weights.shape == (3, 1025)
    np.testing.assert_allclose(d2.weights.sum(1), 1.0)
    rows = density_to_csv(d2, 1).strip().splitlines()
    assert rows[0] == "x0,weight" and len(rows) == 1026
    assert '"K"' in schedules_to_json([llms_schedule(gauss, 1)])
