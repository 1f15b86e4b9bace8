"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict that the terminal summary
prints (see ``conftest.py``); ``python3 tests/test_acceptance.py`` runs them
standalone.
"""

import csv
import json
import time

import numpy as np
import pytest

from pmcgd.cli import run_bench
from pmcgd.descent import (DescentConfig, OptimizerState, apply_sign, feasibility_search, momentum_update,
                           nag_update, plain_update, restrict_barrier, restrict_logistic, restrict_projection)
from pmcgd.gradient import (PmcObjective, PolynomialObjective, expected_reward, finite_difference, gradient_eqsys,
                            gradient_via_derived, make_pmc_objective)
from pmcgd.model import GeneratorSpec, Region, generate_raw, generate_synthetic, reachability_to_reward
from pmcgd.textio import PropertyQuery, parse_model, parse_property, serialize_model

from conftest import MODELS, load, quartic

VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    print(VERDICTS[n])


def test_criterion_1_closed_form_oracle():
    t0 = time.perf_counter()
    pmc = load("ladder.pmc")
    worst_v = worst_g = 0.0
    for p in np.linspace(0.05, 0.95, 20):
        u = np.array([p])
        worst_v = max(worst_v, abs(expected_reward(pmc, u) - (-p * p + 2 * p + 2)))
        worst_g = max(worst_g, abs(gradient_eqsys(pmc, u)[0] - (-2 * p + 2)))
    elapsed = time.perf_counter() - t0
    ok = worst_v <= 1e-9 and worst_g <= 1e-8 and elapsed < 1.0
    verdict(1, ok, f"closed-form oracle: value err {worst_v:.1e}, gradient err {worst_g:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_gradient_triple_equivalence():
    t0 = time.perf_counter()
    worst_derived, worst_fd, checked = 0.0, 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(8, 51))
        k = min(int(rng.integers(1, 11)), n - 4)
        reach = seed % 2 == 1
        spec = GeneratorSpec(states=n, params=k, trap_density=0.1 if reach else 0.0, branching=3)
        pmc, region = generate_synthetic(spec, seed)
        assert pmc.n_states <= 50 and len(pmc.params) <= 10
        model = reachability_to_reward(pmc) if reach else pmc
        u = rng.uniform(0.05, 0.95, size=len(pmc.params))
        eq = gradient_eqsys(model, u, backend="direct")
        obj = PmcObjective(model, backend="direct")
        for i, name in enumerate(pmc.params):
            der = gradient_via_derived(model, name, u, backend="direct")
            fd = finite_difference(obj, u, i, 1e-6)
            worst_derived = max(worst_derived, abs(der - eq[i]))
            # Relative 1e-4, with an absolute floor for partials that vanish structurally.
            worst_fd = max(worst_fd, abs(fd - eq[i]) / (1e-4 * abs(eq[i]) + 1e-8))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst_derived <= 1e-8 and worst_fd <= 1.0 and elapsed < 30 and checked >= 100
    verdict(2, ok, f"triple equivalence on {checked} models: derived gap {worst_derived:.1e}, "
                   f"fd tolerance use {worst_fd:.2f}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_trajectory_replay():
    t0 = time.perf_counter()
    f = quartic()
    region = Region(f.params, [0.0], [3.0])

    def search(method):
        cfg = DescentConfig(method=method, lr=0.1, gamma=0.9, bound=5.9, comparator=">", start=[1.0],
                            record_trajectory=True)
        return feasibility_search(PolynomialObjective(f), region, cfg)

    plain, mom, nag = search("plain"), search("momentum"), search("nag")
    path = [float(u[0]) for u, _ in plain.trajectory]
    ok = (len(path) == 4 and all(abs(a - b) <= 1e-4 for a, b in zip(path, [1, 1.4, 1.7168, 1.882177]))
          and plain.feasible and plain.iterations == 3 and abs(plain.value - 5.95845) <= 1e-4
          and mom.feasible and mom.iterations == 2 and abs(mom.u_found[0] - 2.0768) <= 1e-4
          and nag.feasible and nag.iterations == 2 and abs(nag.u_found[0] - 1.901235) <= 1e-4)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 1.0
    verdict(3, ok, f"trajectory replay: plain {[round(x, 6) for x in path]} f={plain.value:.5f}, "
                   f"momentum {mom.u_found[0]:.4f}, nag {nag.u_found[0]:.6f}, {elapsed:.2f}s")
    assert ok


def test_criterion_4_restriction_examples():
    f = quartic()
    region = Region(f.params, [0.5], [1.5])
    cfg = DescentConfig(method="plain", lr=0.1)

    s = OptimizerState.fresh([1.72])
    s.v[:] = 0.4
    restrict_projection(s, region)
    projection_ok = s.u[0] == 1.5 and s.v[0] == 0.0

    barrier = restrict_barrier(PolynomialObjective(f), region, 0.1)
    s = OptimizerState.fresh([1.0])
    steps = []
    for _ in range(2):
        plain_update(s, barrier.gradient(s.u, [0]), [0], cfg)
        steps.append(float(s.u[0]))
    slow = OptimizerState.fresh([1.0])
    inside = True
    for _ in range(40):
        plain_update(slow, barrier.gradient(slow.u, [0]), [0], DescentConfig(method="plain", lr=0.01))
        inside &= region.contains(slow.u)
    barrier_ok = (abs(steps[0] - 1.38) <= 1e-2 and abs(steps[1] - 1.62) <= 1e-2 and inside
                  and abs(slow.u[0] - 1.46) <= 0.02)

    logistic = restrict_logistic(PolynomialObjective(f), region, compat=True)
    q = np.array([0.5])
    q_new = q + 0.1 * logistic.gradient(q, [0])
    u_new = logistic.to_u(q_new)[0]
    logistic_ok = logistic.to_u(q)[0] == 1.0 and abs(q_new[0] - 0.594) <= 1e-3 and abs(u_new - 1.0235) <= 1e-3

    ok = projection_ok and barrier_ok and logistic_ok
    verdict(4, ok, f"restrictions: projection 1.72->{1.5 if projection_ok else 'x'}, barrier "
                   f"1->{steps[0]:.3f}->{steps[1]:.3f}, slow barrier {slow.u[0]:.4f}, "
                   f"logistic q={q_new[0]:.4f} u={u_new:.4f}")
    assert ok


def test_criterion_5_reduction_identities():
    f = quartic()
    obj = PolynomialObjective(f)
    zero = DescentConfig(gamma=0.0, lr=0.01)
    plain, mom, nag = (OptimizerState.fresh([0.3]) for _ in range(3))
    worst = 0.0
    for _ in range(100):
        plain_update(plain, obj.gradient(plain.u, [0]), [0], zero)
        momentum_update(mom, obj.gradient(mom.u, [0]), [0], zero)
        nag_update(nag, obj.gradient, [0], zero)
        worst = max(worst, abs(mom.u[0] - plain.u[0]), abs(nag.u[0] - plain.u[0]))
    rng = np.random.default_rng(0)
    sign_ok = True
    for _ in range(100):
        g = rng.normal(size=8)
        g[rng.integers(8)] = 0.0
        s = OptimizerState.fresh(np.zeros(8))
        plain_update(s, apply_sign(g), list(range(8)), DescentConfig(lr=0.1))
        sign_ok &= bool(np.all(np.abs(s.u) == np.where(g == 0, 0.0, 0.1)))
    ok = worst <= 1e-12 and sign_ok
    verdict(5, ok, f"reductions: gamma=0 max deviation {worst:.1e} over 100 steps, sign steps exactly eta: {sign_ok}")
    assert ok


def test_criterion_6_end_to_end_feasibility():
    spec = GeneratorSpec(states=1180, params=100, trap_density=0.1, constant_probability=0.3, branching=3)
    pmc, region = generate_synthetic(spec, 1)
    probe = PropertyQuery("P", ">=", 1.0)
    best = []
    for seed in range(1, 6):
        cfg = DescentConfig(method="momentum", sign=True, bound=2.0, comparator=">", seed=seed, max_iterations=300)
        best.append(feasibility_search(make_pmc_objective(pmc, probe, region), region, cfg).value)
    bound = 0.9 * max(best)
    query = PropertyQuery("P", ">=", bound)

    def solve():
        cfg = DescentConfig(method="momentum", sign=True, restriction="projection", bound=bound, seed=1,
                            time_limit=60.0)
        return feasibility_search(make_pmc_objective(pmc, query, region), region, cfg)

    first, second = solve(), solve()
    same = first.to_dict() | {"wall_time": 0} == second.to_dict() | {"wall_time": 0}
    ok = (first.feasible and first.wall_time < 60 and same and first.value >= bound
          and pmc.n_states >= 1000 and len(pmc.params) == 100)
    verdict(6, ok, f"end-to-end: {pmc.n_states} states, {len(pmc.params)} params, "
                   f"best-of-5 {max(best):.4f}, bound {bound:.4f}, {first.status} at {first.value:.4f} "
                   f"in {first.wall_time:.2f}s, deterministic: {same}")
    assert ok


def test_criterion_7_soundness_audit(tmp_path):
    manifest = tmp_path / "audit.ini"
    manifest.write_text(f"""
[suite]
methods = momentum-sign, plain-sign, nag, rmsprop, adam, radam
restrictions = projection, barrier, logistic
repetitions = 2
max_iterations = 400

[model:ladder]
model = {MODELS / 'ladder.pmc'}
region = {MODELS / 'ladder.region'}
property = ER >= 2.95

[model:ladder_min]
model = {MODELS / 'ladder.pmc'}
region = {MODELS / 'ladder.region'}
property = ER <= 2.3

[model:coin]
model = {MODELS / 'coin.pmc'}
property = P >= 0.9

[model:synthetic]
generate = states=300, params=20, trap_density=0.1, seed=7
property = P >= 0.6
""")
    out = tmp_path / "audit.csv"
    run_bench(str(manifest), str(out))
    with open(out) as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "feasible"]
    models = {"ladder": ("ladder.pmc", "ladder.region", "ER >= 2.95"),
              "ladder_min": ("ladder.pmc", "ladder.region", "ER <= 2.3"),
              "coin": ("coin.pmc", None, "P >= 0.9")}
    violations = 0
    for row in rows:
        if row["model"] == "synthetic":
            pmc, region = generate_synthetic(GeneratorSpec(states=300, params=20, trap_density=0.1), 7)
            query = PropertyQuery("P", ">=", 0.6)
        else:
            name, region_file, text = models[row["model"]]
            pmc = load(name, require_almost_sure=False)
            region = (Region(pmc.params, [0.1], [0.9]) if region_file else Region.default(pmc.params))
            query = parse_property(text)
        u = np.array(json.loads(row["u_found"]))
        value = make_pmc_objective(pmc, query, region, backend="direct").measure(u)
        agrees = abs(value - float(row["value"])) <= 1e-8 * max(1.0, abs(value))
        holds = query.holds(value + 1e-8) if query.maximize else query.holds(value - 1e-8)
        if not (agrees and holds and region.contains(u) and row["verified"] == "True"):
            violations += 1
    ok = violations == 0 and len(rows) > 0
    verdict(7, ok, f"soundness audit: {len(rows)} feasible bench results re-verified, {violations} violations")
    assert ok


def test_criterion_8_parser_round_trip():
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        k = int(rng.integers(0, 8))
        spec = GeneratorSpec(states=int(rng.integers(k + 4, 120)), params=k, branching=int(rng.integers(1, 5)),
                             trap_density=float(rng.choice([0.0, 0.1])))
        text = serialize_model(generate_raw(spec, seed))
        again = serialize_model(parse_model(text)[0])
        mismatches += text.encode() != again.encode()
    ok = mismatches == 0
    verdict(8, ok, f"parser round trip: {100 - mismatches}/100 generated models byte-identical")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
