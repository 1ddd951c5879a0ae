"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Results are collected by ``conftest.record_criterion`` and printed in the
"acceptance criteria" section of the pytest terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from amcsim import circuits as c
from amcsim import dynamics as dyn
from amcsim import oracle
from amcsim.cli import main
from amcsim.device import DeviceConfig, map_matrix, map_split, program_with_verify, quantize
from amcsim.matrix import eigenvalues, split_canonical
from amcsim.stability import ideal_inversion_poles, poles, response_bound

from conftest import gapped_symmetric, pd_dominant

G0 = 100e-6
WIDE = DeviceConfig(g_max=1.0)
TIA = c.TIAConfig(G0)


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / np.linalg.norm(b))


@pytest.fixture(scope="module")
def pd_suite():
    rng = np.random.default_rng(101)
    out = []
    for _ in range(100):
        n = int(rng.integers(2, 13))
        out.append((pd_dominant(rng, n), rng.uniform(0.1, 1.0, n)))
    return out


def test_inversion_steady_state(pd_suite, criterion):
    start = time.perf_counter()
    errs, sim_errs = [], []
    for a, y in pd_suite:
        s = c.build_inversion(map_matrix(a, WIDE), y, c.OAParams(l0=1e5))
        ref = oracle.solve(a, y).value
        errs.append(rel(dyn.steady_state(s), ref))
        # the transient itself must land there too
        tr = dyn.integrate(s, dyn.default_horizon(s), record_every=10_000)
        sim_errs.append(rel(tr.final_output, ref))
    elapsed = time.perf_counter() - start
    ok = max(errs) < 1e-3 and max(sim_errs) < 1e-3 and elapsed < 10.0
    criterion(1, "inversion steady state vs solve, 100 PD matrices", ok,
              f"(max rel err {max(errs):.2e} equilibrium, {max(sim_errs):.2e} simulated, < 1e-3; "
              f"{elapsed:.2f} s < 10 s)")
    assert ok


def test_inversion_pole_law(pd_suite, criterion):
    worst_dev, worst_im, all_left = 0.0, 0.0, True
    for a, y in pd_suite:
        s = c.build_inversion(map_matrix(a, WIDE), y, c.OAParams(l0=1e6))
        p = poles(s).poles
        ideal = ideal_inversion_poles(a, s.f_gbwp)
        got = np.sort(p.real)
        want = np.sort(ideal.real)
        worst_dev = max(worst_dev, float(np.max(np.abs(got - want) / np.abs(want))))
        worst_im = max(worst_im, float(np.max(np.abs(p.imag) / np.abs(p))))
        all_left &= bool(np.all(p.real < 0))
    ok = worst_dev < 1e-2 and all_left and worst_im < 1e-9
    criterion(2, "poles match -f_gbwp*eig(U^-1 A) at L0=1e6", ok,
              f"(max rel dev {worst_dev:.2e} < 1e-2, max |Im|/|p| {worst_im:.1e}, all Re<0: {all_left})")
    assert ok


def _inversion_settle(a, y, oa=c.OAParams()):
    s = c.build_inversion(map_matrix(a, WIDE), y, oa)
    rep = poles(s)
    bound = response_bound(rep.lambda_min, oa.f_gbwp)
    tr = dyn.integrate(s, 3 * bound)
    return rep.lambda_min, dyn.settle_time(tr, dyn.steady_state(s)).settle_time, bound


def test_lambda_min_timing_law(criterion):
    n = 10
    y = np.linspace(1.0, 2.0, n)
    # a*I + (J - I): lambda_min(U^-1 A) = (a - 1) / (n + a), tunable through a
    fast = _inversion_settle(1.3 * np.eye(n) + np.ones((n, n)) - np.eye(n), y)
    slow = _inversion_settle(1.07 * np.eye(n) + np.ones((n, n)) - np.eye(n), y)
    ratio = fast[0] / slow[0]
    ordered = fast[1] < slow[1]
    within = all(t is not None and t <= 3 * b for _, t, b in (fast, slow))
    # fitted constant over random PD matrices
    rng = np.random.default_rng(303)
    ratios = []
    for _ in range(8):
        k = int(rng.integers(2, 13))
        lam, t, b = _inversion_settle(pd_dominant(rng, k), rng.uniform(0.2, 1.0, k))
        ratios.append(t / b)
    fitted_c = max(ratios)
    ok = ratio >= 4 and ordered and within and 0.5 <= fitted_c <= 3
    criterion(3, "settle time ordered by lambda_min and within 3x bound", ok,
              f"(lambda_min {fast[0]:.4f}/{slow[0]:.4f} ratio {ratio:.2f}, settle {fast[1]:.3e}/{slow[1]:.3e} s, "
              f"settle/bound {fast[1] / fast[2]:.2f},{slow[1] / slow[2]:.2f}, fitted C {fitted_c:.2f})")
    assert ok


def _mvm_settle(a, g_f):
    s = c.build_mvm(map_matrix(a, WIDE), -np.ones(a.shape[1]), c.TIAConfig(g_f))
    tr = dyn.integrate(s, dyn.default_horizon(s, 3))
    return dyn.settle_time(tr, dyn.steady_state(s)).settle_time


def test_mvm_row_sum_law(criterion):
    rng = np.random.default_rng(404)
    base = rng.uniform(0, 1, (8, 8))
    scales = [0.5, 1, 2, 3, 4, 6, 8]
    row_sums = np.array([(k * base).sum(axis=1).max() for k in scales])
    times = np.array([_mvm_settle(k * base, G0) for k in scales])
    fit = np.polyfit(row_sums, times, 1)
    r2 = 1 - np.sum((times - np.polyval(fit, row_sums)) ** 2) / np.sum((times - times.mean()) ** 2)
    sizes = [4, 8, 16, 32, 64]
    fixed = np.array([_mvm_settle(rng.uniform(0, 1, (n, n)), G0) for n in sizes])
    scaled = np.array([_mvm_settle(rng.uniform(0, 1, (n, n)), G0 * n / 4) for n in sizes])
    spread = float(np.max(np.abs(scaled / scaled.mean() - 1)))
    ok = r2 > 0.95 and spread <= 0.2
    criterion(4, "MVM settle time linear in max row sum; g_f ~ n keeps it flat", ok,
              f"(R^2 {r2:.5f} > 0.95; fixed g_f spread {fixed.max() / fixed.min():.1f}x, "
              f"scaled g_f max deviation {spread:.1%} <= 20%)")
    assert ok


def test_splitting_equivalence(criterion):
    rng = np.random.default_rng(505)
    worst_mvm = 0.0
    for _ in range(50):
        n, m = (int(v) for v in rng.integers(2, 9, 2))
        a = rng.uniform(-1, 1, (n, m))
        x = rng.uniform(-1, 1, m)
        sp = map_split(split_canonical(a), WIDE)
        ref = oracle.mvm(a, x)
        col = dyn.steady_state(c.build_mvm_split_col(sp, x, TIA))
        row = dyn.steady_state(c.build_mvm_split_row(sp, x, c.OAParams(), TIA))
        worst_mvm = max(worst_mvm, rel(col, ref), rel(row, ref))
    worst_inv, counts_ok, stable = 0.0, True, True
    for _ in range(50):
        n = int(rng.integers(2, 11))
        b = rng.uniform(-1, 1, (n, n))
        a = (b + b.T) / 2
        np.fill_diagonal(a, 0)
        a += np.diag(np.abs(a).sum(axis=1) + rng.uniform(0.1, 1.0, n))
        y = rng.uniform(-1, 1, n)
        s = c.build_inversion_split(map_split(split_canonical(a), WIDE), y)
        rep = poles(s)
        counts_ok &= len(rep.poles) == 2 * n
        stable &= rep.verdict == "stable"
        worst_inv = max(worst_inv, rel(dyn.steady_state(s), oracle.solve(a, y).value))
    ok = worst_mvm < 1e-4 and worst_inv < 1e-3 and counts_ok and stable
    criterion(5, "column/row split MVM and split inversion", ok,
              f"(MVM max rel err {worst_mvm:.2e} < 1e-4; inversion {worst_inv:.2e} < 1e-3; "
              f"2n poles: {counts_ok}; all stable: {stable})")
    assert ok


def test_pseudoinverse(criterion):
    rng = np.random.default_rng(606)
    worst_err, worst_res, worst_pole = 0.0, 0.0, -math.inf
    for shape in ("tall", "broad"):
        for _ in range(50):
            big, small = int(rng.integers(3, 11)), 0
            small = int(rng.integers(1, big))
            if shape == "tall":
                a = rng.uniform(0.05, 1, (big, small))
                y = rng.uniform(-1, 1, big)
                s = c.build_pinv_left(map_matrix(a, WIDE), y, TIA)
                ref = oracle.pinv_left_solve(a, y).value
            else:
                a = rng.uniform(0.05, 1, (small, big))
                y = rng.uniform(-1, 1, small)
                s = c.build_pinv_right(map_matrix(a.T, WIDE), y, TIA)
                ref = oracle.pinv_right_solve(a, y).value
            x = dyn.steady_state(s)
            worst_err = max(worst_err, rel(x, ref))
            worst_res = max(worst_res, float(np.linalg.norm(a.T @ (y - a @ x)) / np.linalg.norm(y)))
            rep = poles(s)
            worst_pole = max(worst_pole, float(rep.poles.real.max() / rep.origin_tol))
    a = np.array([[1.0, 3.0, 0.5], [2.0, 1.0, 0.2], [0.3, 0.1, 0.2]])
    y = np.array([1.0, -2.0, 0.5])
    universal = rel(dyn.steady_state(c.build_pinv_left(map_matrix(a, WIDE), y, TIA)), oracle.solve(a, y).value)
    pd = bool(np.all(np.linalg.eigvalsh((a + a.T) / 2) > 0))
    ok = worst_err < 1e-3 and worst_res < 1e-6 and worst_pole <= 1 and universal < 1e-6 and not pd
    criterion(6, "pseudoinverse circuits (50 tall + 50 broad) and universal solve", ok,
              f"(max rel err {worst_err:.2e}, max residual/|y| {worst_res:.1e} < 1e-6, "
              f"max Re(p)/origin_tol {worst_pole:.2e} <= 1, square non-PD rel err {universal:.1e})")
    assert ok


def _eigen_run(a, lam, delta, sign="positive", seed=0):
    s = c.build_eigenvector(map_matrix(a, WIDE), lam * (1 - delta), sign)
    tr = dyn.integrate_until_settled(s, seed=seed, record_every=10)
    res = dyn.measure_eigen_result(tr, a, sign)
    return s, tr, res, dyn.settle_time(tr, tr.final_output).settle_time


def test_eigenvector_circuit(criterion):
    rng = np.random.default_rng(707)
    mats = [gapped_symmetric(rng, int(rng.integers(3, 9))) for _ in range(20)]
    worst_angle, worst_amp, worst_rq = 0.0, 0.0, 0.0
    for i, (a, w) in enumerate(mats):
        _, _, res, _ = _eigen_run(a, w[-1], 0.01, seed=i)
        worst_angle = max(worst_angle, math.degrees(res.angle))
        worst_amp = max(worst_amp, abs(res.amplitude_ratio - 1))
        worst_rq = max(worst_rq, abs(res.rayleigh - w[-1]) / (2 * 0.01 * w[-1]))
    deltas = (0.005, 0.01, 0.02, 0.05)
    monotone = True
    for i, (a, w) in enumerate(mats[:6]):
        runs = [_eigen_run(a, w[-1], d, seed=i) for d in deltas]
        t = [r[3] for r in runs]
        ang = [r[2].angle for r in runs]
        monotone &= all(np.diff(t) < 0) and all(np.diff(ang) > 0)
    neg_ok, neg_angle = True, 0.0
    a_neg = [np.array([[1.0, 4.0], [4.0, 1.0]])]
    while len(a_neg) < 4:
        b = rng.uniform(0, 1, (5, 5))
        b = (b + b.T) / 2
        np.fill_diagonal(b, 0.0)
        v = np.sort(eigenvalues(b).values.real)
        if (v[1] - v[0]) / abs(v[0]) >= 0.2:
            a_neg.append(b)
    for i, a in enumerate(a_neg):
        lam = abs(oracle.extreme_eigenpair(a, "smallest").eigenvalue)
        s, _, res, _ = _eigen_run(a, lam, 0.01, sign="negative", seed=i)
        neg_angle = max(neg_angle, math.degrees(res.angle))
        neg_ok &= s.state_dim == a.shape[0] and res.angle < math.radians(2) and res.rayleigh < 0
    ok = worst_angle < 2 and worst_amp <= 0.01 and worst_rq <= 1 and monotone and neg_ok
    criterion(7, "eigenvector circuit accuracy, delta tradeoff, negative variant", ok,
              f"(max angle {worst_angle:.2f} deg < 2; max |amp-1| {worst_amp:.1e} <= 1%; "
              f"max |rq-lam|/(2 delta lam) {worst_rq:.3f} <= 1; delta sweep monotone: {monotone}; "
              f"negative variant max angle {neg_angle:.2f} deg without inverters: {neg_ok})")
    assert ok


def test_device_precision(criterion):
    rng = np.random.default_rng(808)
    cases = [(rng.uniform(0, 1, (8, 8)), rng.uniform(0.1, 1, 8)) for _ in range(20)]
    mean_err, within = {}, True
    for bits in (4, 6, 8):
        cfg = DeviceConfig(g_max=G0, levels=2**bits, verify_window=0.01)
        errs = []
        for k, (a, x) in enumerate(cases):
            arr = program_with_verify(quantize(map_matrix(a, cfg)), seed=k)
            y = dyn.steady_state(c.build_mvm(arr, -x, TIA))
            e = rel(y, oracle.mvm(a, x))
            errs.append(e)
            if bits == 6:
                within &= e <= c.mvm_error_bound(a, x, cfg, TIA)
        mean_err[bits] = float(np.mean(errs))
    monotone = mean_err[4] > mean_err[6] > mean_err[8]
    ok = within and monotone
    criterion(8, "6-bit MVM error under analytic bound; error falls 4->6->8 bits", ok,
              f"(all 20 within bound: {within}; mean rel err {mean_err[4]:.2e} > {mean_err[6]:.2e} > {mean_err[8]:.2e})")
    assert ok


def _char_poly_roots(a):
    n = a.shape[0]
    if n == 1:
        return np.array([a[0, 0]], dtype=complex)
    tr = np.trace(a)
    det = np.linalg.det(a)
    if n == 2:
        disc = complex(tr * tr - 4 * det)
        return np.array([(tr + np.sqrt(disc)) / 2, (tr - np.sqrt(disc)) / 2])
    minors = sum(a[i, i] * a[j, j] - a[i, j] * a[j, i] for i in range(3) for j in range(i + 1, 3))
    return np.roots([1.0, -tr, minors, -det])


def test_numerics(tmp_path, criterion):
    def step_error(h):
        s = c.CircuitSystem("mvm", [[-1.0]], [1.0], [False], (0,), 1.0, 1e6)
        return abs(dyn.integrate(s, 1.0, dt=h).states[-1, 0] - (1 - math.exp(-1.0)))

    errs = [step_error(h) for h in (0.1, 0.05, 0.025, 0.0125)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    order_ok = bool(np.all(np.abs(orders - 4) < 0.15))

    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(300):
        n = int(rng.integers(1, 4))
        a = rng.normal(size=(n, n))
        got = np.sort_complex(eigenvalues(a).values)
        want = np.sort_complex(_char_poly_roots(a))
        worst = max(worst, float(np.max(np.abs(got - want)) / max(1.0, np.abs(want).max())))

    doc = {"topology": "eigenvector", "matrix": [[2.0, 0.5, 0.1], [0.5, 1.0, 0.3], [0.1, 0.3, 0.5]],
           "delta": 0.01, "device": {"program": True}, "simulation": {"seed": 5}}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    blobs = []
    for k in range(2):
        main(["run", str(tmp_path / "s.json"), "--out", str(tmp_path / f"o{k}")])
        blobs.append((tmp_path / f"o{k}" / "report.json").read_bytes()
                     + (tmp_path / f"o{k}" / "trajectory.csv").read_bytes())
    deterministic = blobs[0] == blobs[1]
    ok = order_ok and worst < 1e-9 and deterministic
    criterion(9, "RK4 order, eigensolver vs characteristic roots, determinism", ok,
              f"(observed orders {', '.join(f'{o:.3f}' for o in orders)}; max eig deviation {worst:.1e} < 1e-9; "
              f"byte-identical reruns: {deterministic}; suite time in the line below)")
    assert ok
