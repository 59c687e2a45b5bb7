"""End-to-end: generate, tune, plan, and benchmark a model.

The programmatic equivalent of

    neoplan gen  --kind chain ...
    neoplan tune --schedule-db db.npsd ...
    neoplan plan --schedule-db db.npsd ...
    neoplan run  --plan plan.json ...

including the ablation ladder that isolates each optimization's
contribution on this machine.
"""

import tempfile
from pathlib import Path

import numpy as np

from neoplan import (ScheduleDb, ThreadPool, alter_and_insert_transforms,
                     benchmark, conv_workloads, execute, gen_model,
                     load_model, local_search, plan, pretransform_weights,
                     save_model, simplify)
from neoplan.passes import per_conv_packing
from neoplan.tuning import cpu_identifier

workdir = Path(tempfile.mkdtemp())

# 1. generate and persist a model (graph JSON + binary weights)
g = gen_model("chain", depth=6, channels=32, hw=28, seed=0)
save_model(g, workdir / "model.json", workdir / "model.npwt")
g = load_model(workdir / "model.json", workdir / "model.npwt")
print(f"model: {g.name}, {len(g.nodes)} nodes -> {workdir}/model.json")

# 2. tune every distinct conv workload
g = simplify(g)
db = ScheduleDb(workdir / "schedules.npsd")
cpu = cpu_identifier()
best = {}
for nid, wl in conv_workloads(g).items():
    best[nid] = local_search(wl, budget=12, repeats=3, db=db, cpu=cpu)[0].schedule
print(f"tuned {len(db)} distinct workloads")

# 3. global layout planning over the tuned schedules
p = plan(g, db, time_budget_s=10.0)
print(f"planner: {p.solver}, predicted total {p.total_ns / 1e6:.2f} ms")

# 4. the ablation ladder
inputs = {"data": np.random.default_rng(1)
          .standard_normal((1, 32, 28, 28)).astype(np.float32)}
configs = [
    ("baseline NCHW", g),
    ("blocked, per-conv packing", per_conv_packing(g, best)),
    ("blocked, transforms eliminated",
     pretransform_weights(alter_and_insert_transforms(g, best))),
    ("blocked, globally planned",
     pretransform_weights(alter_and_insert_transforms(g, p.schedules()))),
]
reference = execute(g, inputs)[0]
with ThreadPool() as pool:
    base = None
    for label, graph in configs:
        out = execute(graph, inputs, pool)[0]
        err = np.abs(out - reference).max()
        mean, stderr = benchmark(graph, pool, inputs, samples=10)
        base = base or mean
        print(f"  {label:<32} {mean / 1e6:8.3f} ms  "
              f"({base / mean:4.2f}x, max err {err:.1e})")
