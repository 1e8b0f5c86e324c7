"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances."""

import json
import math
import time

import numpy as np
import pytest

from gexpect import (
    DPQuery,
    ExperimentConfig,
    GridSpec,
    VolatilityBand,
    catalog,
    evaluate,
    gaussian_expect,
    gnormal_expect,
    lln_second_moment,
    make_symmetric_two_point_family,
    nested_expect,
    p_norm,
    piecewise_linear,
    run_clt,
    solve_gheat,
    strategy_sup_oracle,
    sublinear_expect,
    uniform_approx_check,
)
from gexpect.cli import main
from gexpect.nested_dp import count_strategies, history_tree_sup

from _gen import equal_mean_function, random_family, random_pwl

BAND = VolatilityBand(0.5, 1.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_axiom_suite(report):
    tol = 1e-9
    failures = []
    with Clock() as clk:
        rng = np.random.default_rng(2024)
        for case in range(1000):
            fam = random_family(rng, max_measures=4, max_atoms=5)
            f, g = random_pwl(rng), random_pwl(rng)
            lam = float(rng.uniform(0.0, 20.0))
            c = float(rng.uniform(-50.0, 50.0))

            def E(h):
                return sublinear_expect(fam, h)

            ef, eg = E(f), E(g)
            checks = {
                "monotone": E(f) <= E(f + abs(g)) + tol,
                "subadditive": E(f + g) <= ef + eg + tol,
                "homogeneous": abs(E(lam * f) - lam * ef) <= tol * max(1.0, lam),
                "translatable": abs(E(f + c) - (ef + c)) <= tol * max(1.0, abs(c)),
                "holder": E(abs(f * g)) <= p_norm(fam, f, 2) * p_norm(fam, g, 2) + tol,
                "minkowski": p_norm(fam, f + g, 2) <= p_norm(fam, f, 2) + p_norm(fam, g, 2) + tol,
            }
            h, _ = equal_mean_function(rng, fam)
            checks["zero-ambiguity additivity"] = abs(E(f + h) - (ef + E(h))) <= tol * max(1.0, abs(ef))
            failures += [(case, name) for name, ok in checks.items() if not ok]
    ok = not failures and clk.elapsed < 10.0
    report(1, ok, f"1000 cases x 7 properties, {len(failures)} failures, {clk.elapsed:.2f}s (limit 10s)")


def test_dp_principle(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    literal = tree = 0
    with Clock() as clk:
        for _ in range(200):
            fam = random_family(rng, max_measures=3, max_atoms=3)
            n = int(rng.integers(1, 5))
            scaling = ("none", "inv_sqrt_n", "inv_n")[int(rng.integers(0, 3))]
            phi = random_pwl(rng)
            dp = nested_expect(DPQuery(fam, phi, n, scaling=scaling))
            if count_strategies(fam, n) <= 4096:
                oracle = strategy_sup_oracle(fam, phi, n, scaling)
                literal += 1
            else:
                oracle = history_tree_sup(fam, phi, n, scaling)
                tree += 1
            worst = max(worst, abs(dp - oracle))
    ok = worst <= 1e-12 and clk.elapsed < 30.0
    report(2, ok, f"200 instances, max |dp - oracle| = {worst:.3g} (tol 1e-12); "
                  f"{literal} by literal strategy enumeration, {tree} by history-tree supremum; "
                  f"{clk.elapsed:.2f}s (limit 30s)")


def test_lln_bound_attained(report):
    fam = make_symmetric_two_point_family([0.5, 1.0])
    with Clock() as clk:
        errs = {n: abs(lln_second_moment(fam, n) - 1.0 / n) for n in (1, 2, 4, 8, 16, 32, 64)}
    worst = max(errs.values())
    ok = worst <= 1e-9 and clk.elapsed < 30.0
    report(3, ok, f"max |E[(S_n/n)^2] - 1/n| over n=1..64 is {worst:.3g} (tol 1e-9), {clk.elapsed:.2f}s")


def test_classical_reduction(report):
    band = VolatilityBand(1.0, 1.0)
    spec = GridSpec(half_width=8.0, dx=0.01)
    errs = {}
    with Clock() as clk:
        for name in ("positive_part", "tanh_like", "hat"):
            phi = catalog(name)
            errs[name] = abs(gnormal_expect(phi, band, spec) - gaussian_expect(phi, 1.0))
    ok = max(errs.values()) <= 5e-3 and clk.elapsed < 60.0
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
    report(4, ok, f"band (1,1) PDE vs quadrature errors: {detail} (tol 5e-3), {clk.elapsed:.2f}s")


def test_convex_concave_closed_forms(report):
    spec = GridSpec(half_width=8.0, dx=0.01)
    with Clock() as clk:
        # independent references: Gaussian quadrature at the extreme volatilities
        ref_convex = gaussian_expect(catalog("positive_part"), 1.0)
        ref_concave = -gaussian_expect(catalog("positive_part"), 0.5)
        e1 = abs(gnormal_expect(catalog("positive_part"), BAND, spec) - INV_SQRT_2PI)
        e2 = abs(gnormal_expect(catalog("neg_positive_part"), BAND, spec) + 0.5 * INV_SQRT_2PI)
    refs_ok = abs(ref_convex - INV_SQRT_2PI) < 1e-12 and abs(ref_concave + 0.5 * INV_SQRT_2PI) < 1e-12
    ok = refs_ok and e1 <= 5e-3 and e2 <= 5e-3 and clk.elapsed < 60.0
    report(5, ok, f"|E[x+] - 1/sqrt(2pi)| = {e1:.2e}, |E[-x+] + 0.5/sqrt(2pi)| = {e2:.2e} "
                  f"(tol 5e-3), {clk.elapsed:.2f}s")


def test_exact_polynomial_solutions(report):
    spec = GridSpec(half_width=8.0, dx=0.01)
    with Clock() as clk:
        e1 = abs(gnormal_expect(catalog("square"), BAND, spec) - 1.0)
        e2 = abs(gnormal_expect(catalog("neg_square"), BAND, spec) + 0.25)
    ok = e1 <= 5e-3 and e2 <= 5e-3 and clk.elapsed < 60.0
    report(6, ok, f"|u(1,0) - 1| = {e1:.2e} for square, |u(1,0) + 0.25| = {e2:.2e} for neg_square "
                  f"(tol 5e-3), {clk.elapsed:.2f}s")


def test_clt_convergence(report):
    with Clock() as clk:
        rep = run_clt(ExperimentConfig(sigmas=(0.5, 1.0), phi=catalog("positive_part"),
                                       n_list=(4, 16, 64, 256)))
    errs = [r.abs_error for r in rep.rows]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    rate = rep.fitted_rate
    ok = decreasing and errs[-1] < errs[0] / 3 and rate is not None and rate > 0.25 and clk.elapsed < 180
    report(7, ok, f"errors {', '.join(f'{e:.3e}' for e in errs)}; fitted rate {rate:.3f} (> 0.25); "
                  f"{clk.elapsed:.2f}s")


def test_solver_regularity(report):
    phi = piecewise_linear([(-1.5, 0.0), (-0.5, 1.0), (0.0, 0.25), (1.0, 1.25), (2.0, -0.5)])
    k = phi.lipschitz_constant
    spec = GridSpec(half_width=8.0, dx=0.01)
    slack_t = 1e-3
    with Clock() as clk:
        s = solve_gheat(phi, BAND, spec, n_checkpoints=100)
        rng = np.random.default_rng(99)
        worst_x = worst_t = -math.inf
        for _ in range(100):
            t = float(rng.uniform(0.0, 1.0))
            x, y = rng.uniform(-4.0, 4.0, size=2)
            lhs = abs(evaluate(s, t, x) - evaluate(s, t, y))
            worst_x = max(worst_x, lhs - (k * abs(x - y) + 2 * spec.dx * k))
            t2 = float(rng.uniform(0.0, 1.0))
            z = float(rng.uniform(-4.0, 4.0))
            lhs = abs(evaluate(s, t, z) - evaluate(s, t2, z))
            worst_t = max(worst_t, lhs - (k * BAND.sigma_upper * math.sqrt(abs(t - t2)) + slack_t))
    ok = worst_x <= 0 and worst_t <= 0 and clk.elapsed < 30
    report(8, ok, f"100 pairs each; max excess over spatial bound {worst_x:.3e}, "
                  f"over time bound {worst_t:.3e} (both must be <= 0), {clk.elapsed:.2f}s")


def test_lipschitz_approximation_stability(report):
    cfg = ExperimentConfig(sigmas=(0.5, 1.0), n_list=(4, 16, 64))
    with Clock() as clk:
        rep = uniform_approx_check(catalog("capped_sqrt"), (4, 8, 16, 32), cfg)
    ratios = [b / a for a, b in zip(rep.gaps, rep.gaps[1:])]
    halving = all(abs(r - 0.5) <= 0.01 for r in ratios)
    ok = rep.stable and rep.gaps_decreasing and halving and clk.elapsed < 180
    report(9, ok, f"gaps {', '.join(f'{g:.5f}' for g in rep.gaps)}, ratios "
                  f"{', '.join(f'{r:.4f}' for r in ratios)}; stable={rep.stable}, "
                  f"max excess {rep.max_excess:.3e}; {clk.elapsed:.2f}s")


SCENARIOS = {
    "lln": ({"sigmas": [0.5, 1.0], "n_list": [1, 2, 4, 8]},
            ["--sigmas", "0.5,1.0", "--n", "1,2,4,8"]),
    "clt": ({"sigmas": [0.5, 1.0], "phi": "hat", "n_list": [4, 16], "dx": 0.02},
            ["--sigmas", "0.5,1.0", "--phi", "hat", "--n", "4,16", "--dx", "0.02"]),
    "approx": ({"sigmas": [0.5, 1.0], "phi": "capped_sqrt", "n_list": [4], "dx": 0.04, "k_list": [4, 8]},
               ["--sigmas", "0.5,1.0", "--phi", "capped_sqrt", "--n", "4", "--dx", "0.04", "--k", "4,8"]),
}


def test_cli_determinism(report, tmp_path):
    problems = []
    with Clock() as clk:
        for name, (cfg, flags) in SCENARIOS.items():
            cfg_path = tmp_path / f"{name}.json"
            cfg_path.write_text(json.dumps(cfg))
            outs = []
            for i, argv in enumerate((flags, flags, ["--config", str(cfg_path)])):
                out = tmp_path / f"{name}{i}.csv"
                if main([name, *argv, "--out", str(out)]) != 0:
                    problems.append(f"{name} run {i} failed")
                    break
                outs.append(out.read_bytes())
            else:
                if outs[0] != outs[1]:
                    problems.append(f"{name} not deterministic")
                if outs[0] != outs[2]:
                    problems.append(f"{name} config differs from flags")
    ok = not problems and clk.elapsed < 60
    report(10, ok, f"3 scenarios x (2 flag runs + 1 config run): "
                   f"{'; '.join(problems) or 'all byte-identical'}, {clk.elapsed:.2f}s")
