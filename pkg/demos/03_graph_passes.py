"""Graph-level optimization, step by step.

Takes a small residual network and walks it through the pass pipeline:
batchnorm folding, elementwise fusion into conv epilogues, blocked-layout
alteration with minimal transform insertion, and compile-time weight
packing — verifying after every pass that the numbers do not change.
"""

import numpy as np

from neoplan import (OpKind, alter_and_insert_transforms, count_transforms,
                     execute, fold_batchnorm, fuse_elementwise, gen_model,
                     pretransform_weights, uniform_assignment)


def describe(g, label):
    kinds = {}
    for n in g.nodes.values():
        kinds[n.kind.value] = kinds.get(n.kind.value, 0) + 1
    ops = ", ".join(f"{k}x{v}" for k, v in sorted(kinds.items()))
    print(f"{label:<22} {len(g.nodes):3d} nodes  ({ops})")


g = gen_model("resnet-block", depth=2, channels=16, hw=16, seed=0)
inputs = {"data": np.random.default_rng(1)
          .standard_normal((1, 16, 16, 16)).astype(np.float32)}
baseline = execute(g, inputs)[0]
describe(g, "original")

g1 = fold_batchnorm(g)
describe(g1, "after BN folding")
assert np.abs(execute(g1, inputs)[0] - baseline).max() < 1e-4

g2 = fuse_elementwise(g1)
describe(g2, "after fusion")
fused = [n for n in g2.nodes.values() if n.kind == OpKind.Conv2d
         and n.attrs.get("epilogue", {}).get("residual")]
print(f"  {len(fused)} convs absorbed a residual add into their epilogue")
assert np.abs(execute(g2, inputs)[0] - baseline).max() < 1e-4

g3 = alter_and_insert_transforms(g2, uniform_assignment(g2))
describe(g3, "after layout altering")
print(f"  {count_transforms(g3)} explicit LayoutTransform nodes "
      f"(vs {2 * 4} if every conv packed and unpacked on its own)")
assert np.abs(execute(g3, inputs)[0] - baseline).max() < 1e-4

g4 = pretransform_weights(g3)
describe(g4, "after weight packing")
out = execute(g4, inputs)[0]
print(f"final max deviation from the unoptimized graph: "
      f"{np.abs(out - baseline).max():.2e}")
