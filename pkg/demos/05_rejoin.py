"""A replica goes away, the others keep writing, and it comes back.

On return the node asks a live peer which inodes changed in every epoch
since it failed, drops those from its caches and re-reads them on demand.
One trial, narrated; then a batch to show it holds up.

    python3 demos/05_rejoin.py
"""
from assise.harness import rejoin


def show(inos):
    # inode numbers carry the allocating process slot in the high 32 bits
    return " ".join(f"{i >> 32}:{i & 0xFFFFFFFF}" for i in sorted(inos))


t = rejoin.rejoin_trial(seed=42)
print(f"inodes written while {rejoin.VICTIM} was down:     {show(t.down)}")
print(f"inodes changed since its failure epoch:  {show(t.tracked)}")
print(f"inodes it invalidated on rejoin:         {show(t.invalidated)}")
print(f"reads after rejoin: {t.reads}, stale: {t.stale_reads}, replicas converged: {t.converged}")

rep = rejoin.rejoin_trials(40, seed=1)
print(f"\n{rep.trials} more trials: {rep.stale_reads}/{rep.reads} stale reads, "
      f"{len(rep.not_exact)} trials with an inexact invalidation set")
