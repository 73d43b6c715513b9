"""Acceptance criteria 1-9, each printed as a single PASS/FAIL line.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v -s``.
"""

import dataclasses
import itertools
import time

import numpy as np
import pytest

from mmlq.controllers import (
    CustomLinear,
    act_minor_optimal,
    act_minor_state_feedback,
    best_linear,
    optimal,
)
from mmlq.estimators import BayesFilter, FilterConfig
from mmlq.oracle import ExactLaw, affine_policy, exact_rollout, certainty_equivalent_policy
from mmlq.riccati import gain_schedule
from mmlq.scenarios import (
    bimodal_observation,
    micro_instance,
    random_scenario,
    scalar,
    scalar_gaussian,
    state_feedback_scenario,
    two_minor_binary,
)
from mmlq.simulation import draw_batch, evaluate, mean_and_se, paired_difference, rollout, run_batch
from mmlq.verification import check_total_decomposition, run_suite, zero_mean_check

pytestmark = pytest.mark.slow

N_MC = 100_000
CHUNK = 5_000
GRID_CHUNK = 1_000  # the grid filter's working set stays cache-resident at this size


@pytest.fixture
def report(capsys):
    def emit(k: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gaussian_equivalence(report):
    s = scalar_gaussian(T=10)
    grid = FilterConfig(closed_form_gaussian=False, grid_nodes=1025)
    opt, lin = optimal(s), best_linear(s)
    start = time.perf_counter()
    dev, j_opt, j_lin = 0.0, [], []
    for a in range(0, N_MC, GRID_CHUNK):
        draw = draw_batch(s, 1, a, GRID_CHUNK)
        tr = rollout(s, opt, draw, ("llms",), grid)
        dev = max(dev, float(np.abs(tr.bayes[0] - tr.llms[0]).max()))
        j_opt.append(tr.cost)
        j_lin.append(rollout(s, lin, draw).cost)
    elapsed = time.perf_counter() - start
    j_opt, j_lin = np.concatenate(j_opt), np.concatenate(j_lin)
    (m_o, se_o), (m_l, se_l) = mean_and_se(j_opt), mean_and_se(j_lin)
    gap = abs(m_o - m_l)
    pd, pse = paired_difference(j_opt, j_lin)
    ok = dev < 1e-4 and gap < 2 * max(se_o, se_l) and elapsed < 60
    report(
        1,
        ok,
        f"max |bayes - llms| = {dev:.2e} (< 1e-4); J_opt = {m_o:.5f} +/- {se_o:.1e}, "
        f"J_bl = {m_l:.5f} +/- {se_l:.1e}, |gap| = {gap:.2e} (< 2 SE = {2 * max(se_o, se_l):.1e}); "
        f"paired diff {pd:.1e} +/- {pse:.1e}; {elapsed:.1f}s (< 60s)",
    )


def _perturbed(sched, which, idx, factor):
    arrays = {"Lcom": sched.Lcom.copy(), "Lloc": [x.copy() for x in sched.Lloc]}
    target = arrays["Lcom"] if which == "Lcom" else arrays["Lloc"][0]
    if idx is None:
        target *= factor
    else:
        target[idx] *= factor
    return dataclasses.replace(sched, Lcom=arrays["Lcom"], Lloc=tuple(arrays["Lloc"]))


def test_criterion_2_oracle_optimality(report):
    s = micro_instance(T=3)
    start = time.perf_counter()
    law = ExactLaw(s)
    sched = gain_schedule(s)
    j_star = exact_rollout(s, certainty_equivalent_policy(s, sched), law).J
    grid = np.round(np.arange(-30, 31) / 10, 10)
    j_aff = np.array([exact_rollout(s, affine_policy(a, b), law).J for a, b in itertools.product(grid, grid)])
    perturbations = []
    for which, arr in (("Lcom", sched.Lcom), ("Lloc", sched.Lloc[0])):
        for idx in [None, *np.ndindex(arr.shape)]:
            for f in (0.9, 1.1):
                perturbations.append(_perturbed(sched, which, idx, f))
    for f in (0.9, 1.1):
        both = dataclasses.replace(sched, Lcom=sched.Lcom * f, Lloc=tuple(x * f for x in sched.Lloc))
        perturbations.append(both)
    j_pert = np.array([exact_rollout(s, certainty_equivalent_policy(s, p), law).J for p in perturbations])
    elapsed = time.perf_counter() - start
    margin = min((j_aff - j_star).min(), (j_pert - j_star).min())
    ok = margin > -1e-10 and elapsed < 60
    report(
        2,
        ok,
        f"J* = {j_star:.10f}; min affine J = {j_aff.min():.10f} over {j_aff.size} gains; "
        f"min perturbed J = {j_pert.min():.10f} over {j_pert.size} perturbations; "
        f"min(J - J*) = {margin:.2e} (> -1e-10); {elapsed:.1f}s (< 60s)",
    )


def test_criterion_3_nonlinear_beats_linear(report):
    s = bimodal_observation(T=10)
    start = time.perf_counter()
    j_opt = evaluate(s, optimal(s), N_MC, 3, chunk=CHUNK).per_trial
    j_lin = evaluate(s, best_linear(s), N_MC, 3, chunk=CHUNK).per_trial
    elapsed = time.perf_counter() - start
    d, se = paired_difference(j_lin, j_opt)
    ok = d >= 4 * se and elapsed < 300
    report(
        3,
        ok,
        f"J_bl - J_opt = {d:.5f} +/- {se:.1e} ({d / se:.1f} SE, need >= 4); "
        f"J_opt = {j_opt.mean():.5f}, J_bl = {j_lin.mean():.5f}; {elapsed:.1f}s (< 300s)",
    )


def test_criterion_4_decomposition_identity(report):
    gauss = scalar_gaussian(T=10)
    rep = evaluate(gauss, optimal(gauss), N_MC, 4, chunk=CHUNK, decompose=True)
    mc = zero_mean_check("decomposition residual", rep.parts["residual"])

    micro = micro_instance()
    law = ExactLaw(micro)
    _, terms = check_total_decomposition(micro, rollout(micro, optimal(micro), law.draw))
    exact = abs(float(law.p @ terms["residual"]))
    per_trial = float(np.abs(terms["residual"]).max())

    draw = draw_batch(gauss, 5, 0, 20_000)
    custom = CustomLinear.zeros(gauss)
    custom.major_gains = [-0.5 * np.ones_like(g) for g in custom.major_gains]
    jstoc = [check_total_decomposition(gauss, rollout(gauss, st, draw))[1]["Jstoc"] for st in (optimal(gauss), best_linear(gauss), custom)]
    identical = all(np.array_equal(jstoc[0], j) for j in jstoc[1:])

    ok = mc.passed and exact < 1e-10 and identical
    report(
        4,
        ok,
        f"Gaussian |mean residual| = {abs(mc.statistic):.2e} vs 4 SE tolerance {mc.tolerance:.2e} (N={N_MC}); "
        f"micro exact residual = {exact:.1e}, max per outcome {per_trial:.1e} (< 1e-10); "
        f"Jstoc bitwise identical across 3 strategies: {identical}",
    )


def _failures(results):
    return [str(r) for r in results if not r.passed]


def test_criterion_5_projection_conditions(report):
    gauss = scalar_gaussian(T=10)
    micro = micro_instance()
    lines, bad = [], []
    for s, strat, N in (
        (gauss, optimal(gauss), N_MC),
        (gauss, best_linear(gauss), N_MC),
        (micro, optimal(micro), 0),
        (micro, best_linear(micro), 0),
    ):
        res = [r for r in run_suite(s, strat, "projection", max(N, 1), 5) if "= 0" in r.name]
        bad += _failures(res)
        worst = max(abs(r.statistic) / r.tolerance for r in res)
        lines.append(f"{s.name}/{strat.name} [{res[0].mode}] {len(res)} zeros, worst |stat|/tol = {worst:.2f}")
    report(5, not bad, "; ".join(lines) + ("" if not bad else " | " + " | ".join(bad)))


def two_minor_gaussian():
    return scalar(
        2,
        A00=0.9,
        Ai0=[0.5, -0.3],
        Aii=[1.0, 0.8],
        Bi0=[0.3, 0.2],
        Bii=[1.0, 0.6],
        Q=np.eye(3) + 0.2,
        R=np.diag([1.0, 0.5, 0.7]),
        T=6,
        seed=0,
        name="two-minor-gaussian",
    )


def test_criterion_6_property_suites(report):
    mc_cases = [(two_minor_gaussian(), N_MC), (bimodal_observation(T=6), N_MC)]
    exact_cases = [micro_instance(), two_minor_binary()]
    lines, bad = [], []
    for s, N in mc_cases:
        for strat in (optimal(s), best_linear(s)):
            res = run_suite(s, strat, "all", N, 6, chunk=CHUNK)
            bad += _failures(res)
            lines.append(f"{s.name}/{strat.name}: {sum(r.passed for r in res)}/{len(res)} at 4 SE")
    for s in exact_cases:
        for strat in (optimal(s), best_linear(s)):
            res = run_suite(s, strat, "all")
            bad += _failures(res)
            lines.append(f"{s.name}/{strat.name}: {sum(r.passed for r in res)}/{len(res)} exact")
    report(6, not bad, "; ".join(lines) + ("" if not bad else " | " + " | ".join(bad)))


def test_criterion_7_riccati_validity(report):
    rng = np.random.default_rng(7)
    worst_sym = worst_psd = worst_val = 0.0
    delta_pd = True
    for _ in range(100):
        s = random_scenario(rng, max_dim=3, max_n=3, max_T=20)
        sched = gain_schedule(s)
        for S in (sched.Scom, *sched.Sloc):
            for M in S:
                norm = np.abs(M).max() + 1e-300
                worst_sym = max(worst_sym, np.abs(M - M.T).max() / norm)
                worst_psd = max(worst_psd, -np.linalg.eigvalsh(M).min() / norm)
        for D in (sched.DeltaCom, *sched.DeltaLoc):
            delta_pd &= all(np.linalg.eigvalsh(M).min() > 0 for M in D)
        x0 = rng.standard_normal(s.topology.nx)
        x, J = x0.copy(), 0.0
        for t in range(1, s.T):
            u = -sched.L(t) @ x
            J += x @ s.Qs @ x + u @ s.Rs @ u
            x = s.A @ x + s.B @ u
        J += x @ s.QTs @ x
        V = x0 @ sched.S(1) @ x0
        worst_val = max(worst_val, abs(J - V) / abs(V))
    ok = worst_sym <= 1e-12 and worst_psd <= 1e-9 and delta_pd and worst_val <= 1e-9
    report(
        7,
        ok,
        f"100 scenarios: max asymmetry {worst_sym:.1e} (<= 1e-12), max negative eigenvalue {worst_psd:.1e} "
        f"(<= 1e-9, relative), all Delta PD: {delta_pd}, max value-identity error {worst_val:.1e} (<= 1e-9)",
    )


def test_criterion_8_strategy_independent_filtering(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for k in range(10):
        s = random_scenario(rng, max_dim=3, max_n=3, max_T=12)
        draw = draw_batch(s, k, 0, 500)
        errs = []
        for strat in (optimal(s), best_linear(s).with_gains(Lcom=gain_schedule(s).Lcom * 0.6)):
            tr = rollout(s, strat, draw, ("bayes", "llms"))
            xs = s.topology.xs
            e = [tr.x[..., xs[i]] - est[i - 1] for est in (tr.bayes, tr.llms) for i in range(1, s.n + 1)]
            errs.append(e)
        for a, b in zip(*errs):
            worst = max(worst, float(np.abs(a - b).max() / (1 + np.abs(a).max())))
    ok = worst < 1e-9
    report(8, ok, f"10 scenarios, Bayes and LLMS errors, max relative difference across strategies {worst:.1e} (< 1e-9)")


def test_criterion_9_state_feedback_reduction(report):
    s = state_feedback_scenario(n=2, T=8)
    sched = gain_schedule(s)
    tr = run_batch(s, optimal(s), 1000, 9)
    xs, ys, us = s.topology.xs, s.topology.ys, s.topology.us
    worst = 0.0
    for i in range(1, s.n + 1):
        filt = BayesFilter(s, i)
        d = filt.init(tr.y[:, 0, ys[i - 1]])
        for t in range(1, s.T):
            k = t - 1
            if t > 1:
                d = filt.step(d, tr.y[:, k, ys[i - 1]], tr.x[:, k - 1, xs[0]], tr.u[:, k - 1, us[i]], tr.u[:, k - 1, us[0]])
            a = act_minor_optimal(t, i, sched, tr.xhat_c[:, k], d)
            b = act_minor_state_feedback(s, t, i, sched, tr.xhat_c[:, k], tr.x[:, k, xs[i]])
            worst = max(worst, float(np.abs(a - b).max()))
            worst = max(worst, float(np.abs(tr.u[:, k, us[i]] - b).max()))
    report(9, worst <= 1e-10, f"1000 trials, T={s.T}, max |u_opt - u_sf| = {worst:.1e} (<= 1e-10)")
