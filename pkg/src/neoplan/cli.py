"""Command-line driver: tune | plan | run | ablate | gen.

Exit codes: 0 ok, 2 validation error, 3 IO/corruption, 4 missing schedules.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import (CorruptDb, CorruptModel, InputMismatch, MissingSchedule,
                     ShapeMismatch)
from .executor import benchmark, execute, scalability_report
from .graph import OpKind, validate
from .modelio import load_model, save_model
from .models import KINDS, gen_model
from .passes import (alter_and_insert_transforms, per_conv_packing,
                     pretransform_weights, simplify)
from .planning import SchemePlan, conv_workloads, plan as plan_graph
from .runtime import ThreadPool, default_num_threads
from .tuning import ScheduleDb, cpu_identifier, local_search


def _load(args):
    g = load_model(args.model, args.weights)
    problems = validate(g)
    if problems:
        raise InputMismatch("; ".join(problems))
    return g


def _input_array(g, args):
    inp = next(n for n in g.nodes.values() if n.kind == OpKind.Input)
    shape = tuple(inp.attrs["shape"])
    if getattr(args, "input", None):
        a = np.fromfile(args.input, dtype="<f4")
        if a.size != int(np.prod(shape)):
            raise InputMismatch(
                f"input file holds {a.size} floats, model wants {shape}")
        a = a.reshape(shape)
    else:
        a = np.random.default_rng(args.seed).standard_normal(shape) \
            .astype(np.float32)
    return {inp.attrs.get("name", f"input{inp.id}"): a}


def cmd_gen(args):
    g = gen_model(args.kind, depth=args.depth, channels=args.channels,
                  hw=args.hw, seed=args.seed)
    save_model(g, args.out, args.weights)
    print(f"wrote {args.out} + {args.weights} "
          f"({sum(1 for n in g.nodes.values() if n.kind == OpKind.Conv2d)} convs)")
    return 0


def cmd_tune(args):
    g = simplify(_load(args))
    db = ScheduleDb(args.schedule_db)
    cpu = cpu_identifier()
    workloads = {}
    for wl in conv_workloads(g).values():
        workloads[wl] = None  # dedup by workload
    with ThreadPool(args.threads) as pool:
        for wl in workloads:
            res = local_search(wl, budget=args.budget, repeats=args.repeats,
                               pool=pool, db=db, cpu=cpu)
            best = res[0]
            print(f"{wl}: {len(res)} schemes, best {best.schedule.as_dict()} "
                  f"at {best.mean_ns / 1e6:.3f} ms")
    print(f"db now holds {len(db)} workload entries")
    return 0


def cmd_plan(args):
    g = simplify(_load(args))
    db = ScheduleDb(args.schedule_db)
    p = plan_graph(g, db, time_budget_s=args.budget_ms / 1000.0,
                   state_cap=args.state_cap)
    opt = pretransform_weights(alter_and_insert_transforms(g, p.schedules()))
    if args.emit_plan:
        with open(args.emit_plan, "w") as f:
            f.write(p.to_json() + "\n")
    if args.out:
        save_model(opt, args.out, args.out_weights or args.out + ".npwt")
    print(f"solver={p.solver} predicted_total={p.total_ns / 1e6:.3f} ms "
          f"convs={len(p.assignment)}")
    return 0


def cmd_run(args):
    g = _load(args)
    if args.plan:
        with open(args.plan) as f:
            p = SchemePlan.from_json(f.read())
        g = simplify(g)
        g = pretransform_weights(alter_and_insert_transforms(g, p.schedules()))
    inputs = _input_array(g, args)
    with ThreadPool(args.threads) as pool:
        mean, stderr = benchmark(g, pool, inputs, samples=args.samples)
        out = execute(g, inputs, pool)
    print(f"{args.threads or default_num_threads()},{args.samples},"
          f"{mean:.0f},{stderr:.0f}")
    if args.out:
        np.ascontiguousarray(out[0], dtype="<f4").tofile(args.out)
        print(f"wrote output {out[0].shape} to {args.out}")
    return 0


def cmd_ablate(args):
    g = simplify(_load(args))
    db = ScheduleDb(args.schedule_db)
    cpu = cpu_identifier()
    inputs = _input_array(g, args)
    best = {}
    with ThreadPool(args.threads) as pool:
        for nid, wl in conv_workloads(g).items():
            measured = db.get(cpu, wl)
            if not measured:
                raise MissingSchedule(f"workload {wl} not tuned; run `tune` first")
            best[nid] = measured[0].schedule

        p = plan_graph(g, db, time_budget_s=args.budget_ms / 1000.0)
        configs = [
            ("baseline-nchw", g),
            ("layout-opt", per_conv_packing(g, best)),
            ("transform-elim",
             pretransform_weights(alter_and_insert_transforms(g, best))),
            ("global-search",
             pretransform_weights(alter_and_insert_transforms(g, p.schedules()))),
        ]
        base_mean = None
        print(f"{'config':<16}{'mean_ms':>10}{'stderr_ms':>11}{'speedup':>9}")
        for name, graph in configs:
            mean, stderr = benchmark(graph, pool, inputs, samples=args.samples)
            if base_mean is None:
                base_mean = mean
            print(f"{name:<16}{mean / 1e6:>10.3f}{stderr / 1e6:>11.3f}"
                  f"{base_mean / mean:>9.2f}")
    return 0


def cmd_scaling(args):
    g = _load(args)
    inputs = _input_array(g, args)
    print("threads,samples,mean_ns,stderr_ns")
    for line in scalability_report(g, inputs, args.samples, args.thread_list):
        print(line)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="neoplan")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True)
            sp.add_argument("--weights", required=True)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("gen", help="generate a synthetic model")
    sp.add_argument("--kind", choices=KINDS, required=True)
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--channels", type=int, default=16)
    sp.add_argument("--hw", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", required=True)
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("tune", help="local schedule search for every conv")
    common(sp)
    sp.add_argument("--schedule-db", required=True)
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--budget", type=int, default=None,
                    help="max schedules measured per workload")
    sp.set_defaults(fn=cmd_tune)

    sp = sub.add_parser("plan", help="global layout planning")
    common(sp)
    sp.add_argument("--schedule-db", required=True)
    sp.add_argument("--budget-ms", type=float, default=10000.0)
    sp.add_argument("--state-cap", type=int, default=10 ** 6)
    sp.add_argument("--emit-plan", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--out-weights", default=None)
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("run", help="execute and benchmark a model")
    common(sp)
    sp.add_argument("--plan", default=None)
    sp.add_argument("--input", default=None, help="raw little-endian f32 file")
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("ablate", help="per-optimization speedup table")
    common(sp)
    sp.add_argument("--schedule-db", required=True)
    sp.add_argument("--samples", type=int, default=20)
    sp.add_argument("--budget-ms", type=float, default=10000.0)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("scaling", help="throughput vs thread count CSV")
    common(sp)
    sp.add_argument("--samples", type=int, default=20)
    sp.add_argument("--thread-list", type=lambda s: [int(t) for t in s.split(",")],
                    default=[1])
    sp.add_argument("--input", default=None)
    sp.set_defaults(fn=cmd_scaling)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MissingSchedule as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (CorruptModel, CorruptDb, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (InputMismatch, ShapeMismatch, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
