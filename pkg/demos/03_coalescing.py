"""Short-lived files never need to cross the network.

A mail client writes each message to a temp file, and for a fraction of them
deletes it again before the next sync. With coalescing, a sync ships
the net effect of the batch; without it, every write and the matching
unlink travel to the replica.

    python3 demos/03_coalescing.py
"""
from assise.harness import sweeps

print("dying_fraction\tbytes_coalesced\tbytes_raw\tratio")
for p in sweeps.coalescing_sweep():
    print(f"{p.delete_frac:.2f}\t{p.with_coalescing}\t{p.without}\t{p.ratio:.2f}")
print("\nthe saving tracks the fraction of files that die inside one sync batch.")
