"""Write throughput against the size of the private update log.

One process writes a file sequentially; a small log fills sooner and is
digested more often. Throughput is normalized to the largest log, and the
digest count is compared with a back-of-envelope estimate:
one digest for each time the log reaches its threshold.

    python3 demos/04_log_size.py [file size, default 16MiB]
"""
import sys

from assise.config import parse_size
from assise.harness import sweeps

size = parse_size(sys.argv[1]) if len(sys.argv) > 1 else parse_size("16MiB")
sw = sweeps.log_size_sweep(size)
rows = sw.rows()
print("\t".join(rows[0]))
for r in rows:
    print("\t".join(str(v) for v in r.values()))
print(f"\nmonotone: {sw.monotone}   digest counts match the estimate: {sw.digests_match}")
