"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in the terminal summary under "acceptance criteria".
"""
import random

import pytest

from assise.config import MiB
from assise.harness import crashcheck, idempotence, linearize, recovery, rejoin, schedules, sweeps
from assise.harness.runner import run_workload
from assise.harness.scenario import Scenario, run
from assise.harness.workloads import PATTERNS, coalescing, maildir

from .conftest import SCENARIOS


@pytest.fixture(scope="module")
def suite_runs():
    """Every scenario file, run twice with its own seed."""
    out = {}
    for path in SCENARIOS:
        sc = Scenario.load(path)
        out[sc.name] = (sc, run(sc), run(sc))
    return out


def test_1_prefix_crash_consistency(report):
    rep = crashcheck.check_prefix()
    modes = {c.mode for c in crashcheck.DEFAULT_CASES}
    ok = rep.ok and rep.cut_points >= 1000 and modes == {"pessimistic", "optimistic"}
    report(1, ok, f"prefix crash consistency: {rep.cut_points} cut points, {len(rep.violations)} violations")
    assert rep.cut_points >= 1000
    assert not rep.violations, rep.violations[:3]


def test_2_linearizability(report):
    sweep = schedules.interleaving_sweep()
    st = linearize.self_test(sweep.samples, seed=0)
    ok = sweep.ok and st.known_bad > 0 and st.reject_rate == 1.0 and not st.disagreements
    exhaustive = sum(sweep.exhaustive.values())
    report(2, ok, f"linearizability: {sweep.histories} histories, {len(sweep.rejected)} rejected "
                  f"({exhaustive}/{len(sweep.exhaustive)} configs exhaustive); self-test rejected "
                  f"{st.rejected_bad}/{st.known_bad} bad mutants, {len(st.disagreements)} disagreements")
    assert not sweep.rejected, sweep.rejected[:3]
    assert st.known_bad > 0 and st.reject_rate == 1.0
    assert not st.disagreements


def test_3_lease_safety(report, suite_runs):
    audits = violations = migrations = 0
    faults = []
    for _, (sc, res, _) in suite_runs.items():
        audits += res.sim.audits
        violations += len(res.sim.audit_violations)
        migrations += res.metrics["manager_migrations"]
        faults += res.faults_fired
    holder_crashes = sum(1 for f in faults if f.startswith("crash-"))
    ok = violations == 0 and audits > 0 and migrations > 0 and holder_crashes > 0
    report(3, ok, f"lease safety: {audits} audits over {len(suite_runs)} scenarios, {violations} overlaps "
                  f"({migrations} manager migrations, {holder_crashes} holder crashes)")
    assert migrations > 0 and holder_crashes > 0
    assert audits > 0 and violations == 0


def test_4_digest_idempotence(report):
    rep = idempotence.check_digest_idempotence()
    ok = rep.ok and rep.cut_points >= 200
    report(4, ok, f"digest idempotence: {rep.cut_points} cut points, {len(rep.mismatches)} mismatches")
    assert rep.cut_points >= 200
    assert rep.ok, rep.mismatches[:5]


def test_5_replica_convergence(report, suite_runs):
    split = []
    chains = 0
    for name, (_, res, _) in suite_runs.items():
        for subtree in res.sim.cm.chains:
            chains += 1
            hashes = res.sim.replica_hashes(subtree)
            if len(hashes) < 2 or len(set(hashes.values())) != 1:
                split.append((name, subtree, hashes))
    report(5, not split, f"replica convergence: {chains} chains in {len(suite_runs)} scenarios, {len(split)} diverged")
    assert not split, split


def test_6_failover_work_bound(report):
    sw = recovery.recovery_sweep([4 * MiB, 8 * MiB, 20 * MiB, 40 * MiB])
    hot_t, hot_b = sw.spread("hot")
    cold_t, cold_b = sw.spread("cold")
    # a cold rebuild must grow with the data: at least half the 10x dataset growth
    ok = hot_t <= 0.05 and hot_b <= 0.05 and cold_t >= 4.5 and cold_b >= 4.5
    report(6, ok, f"fail-over work: hot spread time {hot_t:.2%} bytes {hot_b:.2%}; "
                  f"cold rebuild grows {cold_t + 1:.1f}x time {cold_b + 1:.1f}x bytes over a 10x dataset sweep")
    assert hot_t <= 0.05 and hot_b <= 0.05
    assert cold_t >= 4.5 and cold_b >= 4.5


def test_7_rejoin(report):
    rep = rejoin.rejoin_trials(100, seed=0)
    ok = rep.ok and rep.trials >= 100
    report(7, ok, f"rejoin: {rep.trials} trials, {rep.stale_reads}/{rep.reads} stale reads, "
                  f"{len(rep.not_superset)} missed writes, {len(rep.not_exact)} inexact, "
                  f"{len(rep.not_converged)} unconverged")
    assert rep.trials >= 100
    assert rep.ok, rep


def test_8_coalescing(report):
    wl = coalescing()
    on, off = sweeps.replicated_bytes(wl, True), sweeps.replicated_bytes(wl, False)
    curve = sweeps.coalescing_sweep()
    ratios = [p.ratio for p in curve]
    monotone = all(b <= a for a, b in zip(ratios, ratios[1:])) and all(r <= 1 for r in ratios)
    ok = on <= 0.6 * off and monotone
    report(8, ok, f"coalescing: {on} vs {off} replicated bytes (ratio {on / off:.2f}); "
                  f"ratio by dying fraction {[round(r, 2) for r in ratios]}")
    assert on <= 0.6 * off
    assert monotone, ratios


def test_9_log_size_sweep(report):
    sw = sweeps.log_size_sweep(64 * MiB)
    span = sw.points[-1].log_size // sw.points[0].log_size
    ok = sw.monotone and sw.digests_match and span >= 16
    report(9, ok, f"log-size sweep: {span}x range, normalized {[round(p.normalized, 3) for p in sw.points]}, "
                  f"digests {[p.digests for p in sw.points]} vs oracle {[p.expected for p in sw.points]}")
    assert span >= 16
    assert sw.monotone
    assert sw.digests_match


def test_10_locality_scaling(report):
    runs = {p: run_workload(maildir(p, deliveries=30), seed=0) for p in PATTERNS}
    hops = {p: r.steady_hops for p, r in runs.items()}
    single = runs["single"]
    # sync calls take no lease; every namespace or data operation does
    atomic = [(op, h) for op, h in single.op_hops if op not in ("fsync", "dsync")]
    every = bool(atomic) and all(h >= 1 for _, h in atomic)
    order = hops["private"] < hops["sharded"] < hops["rr"] < hops["single"]
    ok = hops["private"] == 0 and hops["rr"] > 0 and every and order
    report(10, ok, f"locality: steady lease hops {hops}; single-manager ops without a hop "
                   f"{sum(1 for _, h in atomic if h == 0)}/{len(atomic)}")
    assert hops["private"] == 0
    assert hops["rr"] > 0
    assert every
    assert order, hops


def test_11_determinism(report, suite_runs):
    differ = [n for n, (_, a, b) in suite_runs.items()
              if a.trace_hash != b.trace_hash or a.history.dumps() != b.history.dumps()]
    progs = schedules.make_programs(3, 3, 5)
    s = schedules.random_schedule({p: 2 * len(o) for p, o in progs.items()}, random.Random(5))
    a, b = (schedules.run_schedule(progs, s, seed=5) for _ in range(2))
    if a.trace_hash != b.trace_hash:
        differ.append("interleaving")
    if rejoin.rejoin_trial(3).trace_hash != rejoin.rejoin_trial(3).trace_hash:
        differ.append("rejoin")
    report(11, not differ, f"determinism: {len(suite_runs) + 2} runs repeated, {len(differ)} differ {differ}")
    assert not differ
