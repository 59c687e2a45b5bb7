"""The static-partition thread pool and its scaling behavior.

Shows the fork-join primitive directly, then produces the threads-vs-latency
CSV for a small model.  Results are bitwise identical across pool sizes
because every output row is computed by exactly one worker with the same
instruction sequence regardless of how rows are partitioned.
"""

import numpy as np

from neoplan import (ThreadPool, alter_and_insert_transforms, execute,
                     gen_model, physical_cores, pretransform_weights,
                     scalability_report, simplify, uniform_assignment)
from neoplan.runtime import parallel_for, split_ranges

print(f"physical cores: {physical_cores()}")
print(f"split of 10 rows over 4 workers: {split_ranges(10, 4)}\n")

with ThreadPool(2) as pool:
    acc = np.zeros(100)
    parallel_for(pool, 100, lambda lo, hi: acc.__setitem__(slice(lo, hi), 1))
    assert acc.sum() == 100

g = gen_model("resnet-block", depth=2, channels=16, hw=28, seed=0)
opt = pretransform_weights(alter_and_insert_transforms(
    simplify(g), uniform_assignment(g)))
inputs = {"data": np.random.default_rng(0)
          .standard_normal((1, 16, 28, 28)).astype(np.float32)}

counts = sorted({1, 2, physical_cores()})
outs = []
for t in counts:
    with ThreadPool(t) as pool:
        outs.append(execute(opt, inputs, pool)[0])
identical = all(np.array_equal(outs[0], o) for o in outs[1:])
print(f"outputs bitwise identical across pools {counts}: {identical}\n")

print("threads,samples,mean_ns,stderr_ns")
for line in scalability_report(opt, inputs, samples=10, thread_counts=counts):
    print(line)
