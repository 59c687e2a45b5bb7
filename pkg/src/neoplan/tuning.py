"""Per-convolution schedule search: candidate generation, timed measurement,
and a file-backed schedule database keyed by (cpu id, workload)."""

from __future__ import annotations

import json
import platform
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptDb, ScheduleInvalid
from .kernels import ConvSchedule, ConvWorkload, conv_blocked, vector_lane_width
from .layout import KCRS, Tensor, pack_data, pack_weights
from .runtime import ThreadPool, physical_cores

REG_N_CHOICES = (32, 16, 8, 4, 2)


def factors_desc(n: int) -> list[int]:
    return [d for d in range(n, 0, -1) if n % d == 0]


@dataclass(frozen=True)
class CandidateSpace:
    ic_bn_list: tuple
    oc_bn_list: tuple
    reg_n_list: tuple
    unroll_list: tuple = (True, False)

    def __iter__(self):
        for ic in self.ic_bn_list:
            for oc in self.oc_bn_list:
                for rn in self.reg_n_list:
                    for u in self.unroll_list:
                        yield ConvSchedule(ic, oc, rn, u)

    def size(self) -> int:
        return (len(self.ic_bn_list) * len(self.oc_bn_list)
                * len(self.reg_n_list) * len(self.unroll_list))


@dataclass
class MeasuredScheme:
    schedule: ConvSchedule
    mean_ns: float
    stderr_ns: float
    repeats: int

    def to_dict(self) -> dict:
        return {"schedule": self.schedule.as_dict(), "mean_ns": self.mean_ns,
                "stderr_ns": self.stderr_ns, "repeats": self.repeats}

    @classmethod
    def from_dict(cls, d: dict) -> "MeasuredScheme":
        return cls(ConvSchedule.from_dict(d["schedule"]), d["mean_ns"],
                   d["stderr_ns"], d["repeats"])


def generate_candidates(wl: ConvWorkload) -> CandidateSpace:
    """All channel factors (descending) and out-width-compatible reg_n."""
    reg = tuple(r for r in REG_N_CHOICES if r <= wl.out_w) or (1,)
    return CandidateSpace(
        ic_bn_list=tuple(factors_desc(wl.in_channel)),
        oc_bn_list=tuple(factors_desc(wl.out_channel)),
        reg_n_list=reg,
    )


def cpu_identifier() -> str:
    model = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.startswith("model name"):
                    model = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{model}/{physical_cores()}cores/{vector_lane_width()}lanes"


def _workload_key(wl: ConvWorkload) -> str:
    return json.dumps([wl.in_channel, wl.out_channel, wl.in_h, wl.in_w,
                       wl.kernel_h, wl.kernel_w, wl.stride, wl.pad])


def _workload_from_key(s: str) -> ConvWorkload:
    return ConvWorkload(*json.loads(s))


_DB_MAGIC = b"NPSD"
_DB_VERSION = 1


class ScheduleDb:
    """Single-file store: magic + version header, then length-prefixed JSON
    records each followed by its CRC32."""

    def __init__(self, path=None):
        self.path = path
        self._data: dict[tuple[str, str], list[MeasuredScheme]] = {}
        if path is not None:
            self._load()

    def _load(self):
        try:
            with open(self.path, "rb") as f:
                raw = f.read()
        except FileNotFoundError:
            return
        if len(raw) < 8 or raw[:4] != _DB_MAGIC:
            raise CorruptDb(f"{self.path}: bad magic")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != _DB_VERSION:
            raise CorruptDb(f"{self.path}: unsupported version {version}")
        off = 8
        while off < len(raw):
            if off + 4 > len(raw):
                raise CorruptDb(f"{self.path}: truncated record header")
            (length,) = struct.unpack_from("<I", raw, off)
            off += 4
            if off + length + 4 > len(raw):
                raise CorruptDb(f"{self.path}: truncated record")
            payload = raw[off:off + length]
            off += length
            (crc,) = struct.unpack_from("<I", raw, off)
            off += 4
            if zlib.crc32(payload) != crc:
                raise CorruptDb(f"{self.path}: record checksum mismatch")
            rec = json.loads(payload)
            key = (rec["cpu"], rec["workload"])
            self._data[key] = [MeasuredScheme.from_dict(d) for d in rec["schemes"]]

    def _save(self):
        if self.path is None:
            return
        blob = bytearray(_DB_MAGIC + struct.pack("<I", _DB_VERSION))
        for (cpu, wlk), schemes in sorted(self._data.items()):
            payload = json.dumps({
                "cpu": cpu, "workload": wlk,
                "schemes": [m.to_dict() for m in schemes],
            }).encode()
            blob += struct.pack("<I", len(payload)) + payload
            blob += struct.pack("<I", zlib.crc32(payload))
        tmp = str(self.path) + ".tmp"
        with open(tmp, "wb") as f:
            f.write(blob)
        import os
        os.replace(tmp, self.path)

    def put(self, cpu: str, wl: ConvWorkload, schemes: list[MeasuredScheme]):
        schemes = sorted(schemes, key=lambda m: m.mean_ns)
        self._data[(cpu, _workload_key(wl))] = schemes
        self._save()

    def get(self, cpu: str, wl: ConvWorkload):
        return self._data.get((cpu, _workload_key(wl)))

    def workloads(self, cpu: str) -> list[ConvWorkload]:
        return [_workload_from_key(k) for c, k in self._data if c == cpu]

    def __len__(self):
        return len(self._data)


def _measurement_data(wl: ConvWorkload, sch: ConvSchedule):
    rng = np.random.default_rng(zlib.crc32(_workload_key(wl).encode()))
    x = Tensor(rng.standard_normal(
        (1, wl.in_channel, wl.in_h, wl.in_w)).astype(np.float32))
    w = Tensor(rng.standard_normal(
        (wl.out_channel, wl.in_channel, wl.kernel_h, wl.kernel_w)).astype(np.float32),
        KCRS)
    return pack_data(x, sch.ic_bn), pack_weights(w, sch.ic_bn, sch.oc_bn)


def measure(wl: ConvWorkload, sch: ConvSchedule, repeats: int = 20,
            pool: ThreadPool | None = None, warmups: int = 3) -> MeasuredScheme:
    """Time conv_blocked on randomized-once data, warm-ups excluded."""
    sch.check(wl)
    xb, wb = _measurement_data(wl, sch)
    for _ in range(max(1, warmups)):
        conv_blocked(xb, wb, wl, sch, pool=pool)
    times = np.empty(repeats, dtype=np.float64)
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        conv_blocked(xb, wb, wl, sch, pool=pool)
        times[i] = time.perf_counter_ns() - t0
    stderr = float(times.std(ddof=1) / np.sqrt(repeats)) if repeats > 1 else 0.0
    return MeasuredScheme(sch, float(times.mean()), stderr, repeats)


def _budgeted(space: CandidateSpace, budget: int) -> list[ConvSchedule]:
    """Keep the full (ic_bn, oc_bn) grid; sample reg_n x unroll per pair."""
    pairs = [(ic, oc) for ic in space.ic_bn_list for oc in space.oc_bn_list]
    per_pair = max(1, budget // max(1, len(pairs)))
    lane = vector_lane_width()
    variants = sorted(
        ((rn, u) for rn in space.reg_n_list for u in space.unroll_list),
        key=lambda v: (abs(v[0] - lane), not v[1]))
    out = []
    for ic, oc in pairs:
        for rn, u in variants[:per_pair]:
            out.append(ConvSchedule(ic, oc, rn, u))
    return out


def local_search(wl: ConvWorkload, budget: int | None = None,
                 repeats: int = 20, warmups: int = 3,
                 pool: ThreadPool | None = None,
                 db: ScheduleDb | None = None,
                 cpu: str | None = None) -> list[MeasuredScheme]:
    """Measure the schedule space and return it sorted by mean time.

    With a warm db the stored list is returned without re-measuring.
    """
    cpu = cpu or cpu_identifier()
    if db is not None:
        cached = db.get(cpu, wl)
        if cached is not None:
            return cached
    space = generate_candidates(wl)
    if budget is not None and space.size() > budget:
        schedules = _budgeted(space, budget)
    else:
        schedules = list(space)
    results = []
    for sch in schedules:
        try:
            results.append(measure(wl, sch, repeats=repeats, warmups=warmups,
                                   pool=pool))
        except ScheduleInvalid:
            continue
    results.sort(key=lambda m: m.mean_ns)
    if db is not None:
        db.put(cpu, wl, results)
    return results
