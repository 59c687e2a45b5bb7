"""Per-convolution schedule search.

Enumerates the (ic_bn, oc_bn, reg_n, unroll_ker) candidate space for one
workload, measures each configuration, and persists the ranked results in a
schedule database that later planning runs reuse.
"""

import tempfile
from pathlib import Path

from neoplan import (ConvWorkload, ScheduleDb, generate_candidates,
                     local_search)
from neoplan.tuning import cpu_identifier

wl = ConvWorkload(in_channel=32, out_channel=32, in_h=28, in_w=28,
                  kernel_h=3, kernel_w=3, stride=1, pad=1)
space = generate_candidates(wl)
print(f"workload: {wl}")
print(f"candidate space: {space.size()} schedules "
      f"(ic_bn {space.ic_bn_list} x oc_bn {space.oc_bn_list} "
      f"x reg_n {space.reg_n_list} x unroll)")

db_path = Path(tempfile.mkdtemp()) / "schedules.npsd"
db = ScheduleDb(db_path)
results = local_search(wl, budget=24, repeats=5, db=db, cpu=cpu_identifier())

print(f"\nmeasured {len(results)} schedules; top five:")
for m in results[:5]:
    d = m.schedule.as_dict()
    print(f"  ic_bn={d['ic_bn']:<3} oc_bn={d['oc_bn']:<3} "
          f"reg_n={d['reg_n']:<3} unroll={str(d['unroll_ker']):<5} "
          f"-> {m.mean_ns / 1e6:7.3f} ms (+/- {m.stderr_ns / 1e6:.3f})")

worst = results[-1]
print(f"\nworst measured: {worst.mean_ns / 1e6:.3f} ms "
      f"({worst.mean_ns / results[0].mean_ns:.1f}x slower than best)")
print(f"results stored in {db_path} ({len(db)} workload entries)")

# a second search is a cache hit: nothing is re-measured
again = local_search(wl, budget=24, repeats=5, db=db, cpu=cpu_identifier())
assert again[0].schedule == results[0].schedule
print("second search served from the database without re-measuring")
