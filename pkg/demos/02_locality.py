"""How much lease traffic does mail delivery cost, depending on who delivers where?

Four placements of the same delivery stream on three nodes:

- private: each node delivers only into its own mailboxes
- sharded: mostly local, with the odd cross-node delivery
- rr: deliveries round-robin across nodes regardless of mailbox
- single: one cluster-wide lease manager, consulted on every operation

Lease hops are the remote messages spent acquiring, revoking and migrating
leases once the cluster is warm.

    python3 demos/02_locality.py
"""
from assise.harness.runner import run_workload
from assise.harness.workloads import PATTERNS, maildir

print("pattern\tops\tlease_hops\thops/op\tp50_rename_us")
for pattern in PATTERNS:
    res = run_workload(maildir(pattern, deliveries=30), seed=0)
    lat = res.metrics.get("latency", {}).get("rename", {})
    print(f"{pattern}\t{res.steady_ops}\t{res.steady_hops}\t{res.hops_per_op:.2f}\t{lat.get('p50_ns', 0) / 1e3:.1f}")
print("\nprivate delivery never leaves the node; a central manager pays at least one hop per call.")
