"""Pull the plug at every point of a replicated write stream.

For each cut point the surviving state on every replica is compared with
the sequential model: it must be some prefix of the acknowledged
operations, and no fsynced operation may be missing.

    python3 demos/06_crash_cuts.py
"""
from assise.harness import crashcheck

cases = [crashcheck.CrashCase(f"{m}-{p}", nodes=2, mode=m, placement=p, ops=10, seed=3)
         for m in ("pessimistic", "optimistic") for p in ((0, 0), (0, 1))]
for case in cases:
    rep = crashcheck.check_prefix([case])
    print(f"{case.name:16} {rep.cut_points:4} cut points, {len(rep.violations)} violations")
