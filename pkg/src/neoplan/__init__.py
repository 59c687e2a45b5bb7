"""Optimizing mini-compiler and runtime for CNN inference on multi-core CPUs:
blocked NCHW[x]c layouts, a tunable direct-convolution template, graph-level
layout planning, and a static-partition thread pool."""

from .errors import (AssignmentIncomplete, CorruptDb, CorruptModel,
                     CycleDetected, IndivisibleChannel, Infeasible,
                     InputMismatch, MissingSchedule, NeoplanError,
                     NonConstantStatistics, ScheduleInvalid, ShapeMismatch,
                     StateExplosion, WrongLayout)
from .executor import ExecutablePlan, benchmark, execute, scalability_report
from .graph import (DataType, Graph, Node, OpKind, TensorSpec, infer_shapes,
                    topo_sort, validate)
from .kernels import (ConvSchedule, ConvWorkload, Epilogue, conv_blocked,
                      conv_reference, vector_lane_width)
from .layout import (KCRS, Layout, NCHW, NHWC, Tensor, kcrsck, nchwc,
                     pack_data, pack_weights, retile_data, unpack_data,
                     unpack_weights)
from .modelio import load_model, read_weights, save_model, write_weights
from .models import gen_model
from .passes import (LayoutBehavior, alter_and_insert_transforms, classify,
                     count_transforms, fold_batchnorm, fuse_elementwise,
                     per_conv_packing, pretransform_weights, simplify,
                     uniform_assignment)
from .pbqp import PbqpInstance, pbqp_solve
from .planning import (SchemeCandidate, SchemePlan, TransformCostTable,
                       conv_workloads, dp_plan, pbqp_reduce, plan,
                       prune_candidates, solve_dp)
from .runtime import ThreadPool, parallel_for, physical_cores
from .tuning import (CandidateSpace, MeasuredScheme, ScheduleDb,
                     cpu_identifier, generate_candidates, local_search,
                     measure)

__version__ = "0.1.0"
