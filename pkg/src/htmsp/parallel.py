"""Data-parallel Spatial Pooler kernels.

Each column is one work group. The overlap kernel stages the column's
"connected AND input-on" predicates into a group-local buffer and reduces
them with a binary tree; boost and the ``min_overlap`` cutoff are applied
inside the group. The fused kernel writes those overlaps to a global buffer,
then every group re-fetches its neighborhood slice, sums the predicate
"neighbor >= me" and compares that count with ``winners_set_size``.

All work groups advance in lock step as rows of 2-D numpy arrays, so each
reduction level is a single vector operation over every group at once.
Timings are split into the four phases the benchmark harness reports.
"""

from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from htmsp import sp
from htmsp.errors import ComputationError, InputError

DEFAULT_MAX_GROUP_SIZE = 1024
# Work groups dispatched together in the inhibition pass; keeps the
# fetched neighborhood slices cache-sized.
_WAVE = 64

PROFILE_CSV_FIELDS = ("iteration", "phase", "duration_ns", "backend", "num_columns",
                      "synapses", "min_overlap", "winners_set_size")


class Phase(str, enum.Enum):
    STAGING_IN = "staging_in"
    KERNEL_OVERLAP = "kernel_overlap"
    KERNEL_INHIBITION = "kernel_inhibition"
    STAGING_OUT = "staging_out"


@dataclass(frozen=True)
class ProfileRecord:
    phase: Phase
    duration: int  # ns
    iteration: int

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")


@dataclass(frozen=True)
class KernelPlan:
    group_size: int
    num_groups: int
    fused: bool = True
    chunks: int = 1  # elements each work-item accumulates before the tree


def _next_pow2(x: int) -> int:
    return 1 << max(0, int(x) - 1).bit_length()


def plan_kernels(config: sp.SpConfig, fused: bool = True,
                 max_group_size: int = DEFAULT_MAX_GROUP_SIZE) -> KernelPlan:
    if max_group_size < 1 or max_group_size & (max_group_size - 1):
        raise ValueError(f"max_group_size must be a power of two, got {max_group_size}")
    group = min(_next_pow2(config.synapses_per_column), max_group_size)
    chunks = -(-config.synapses_per_column // group)
    return KernelPlan(group_size=group, num_groups=config.num_columns, fused=fused, chunks=chunks)


def tree_reduce(local: np.ndarray) -> np.ndarray:
    """Sum each row of ``local`` (width a power of two) by pairwise halving."""
    buf = np.array(local, copy=True)
    width = buf.shape[-1]
    if width & (width - 1):
        raise ValueError(f"group width {width} is not a power of two")
    stride = width // 2
    while stride:
        buf[..., :stride] += buf[..., stride:2 * stride]
        stride //= 2
    return buf[..., 0]


def group_reduce(pred: np.ndarray, plan: KernelPlan) -> np.ndarray:
    """Per-group population count of a (groups, synapses) predicate matrix.

    Work-item ``i`` first accumulates elements ``i, i + G, i + 2G, ...``
    (a strided chunk when the row is wider than the group), then the group
    runs the tree reduction over its ``G`` partial sums.
    """
    groups, width = pred.shape
    padded = plan.group_size * plan.chunks
    local = np.zeros((groups, padded), dtype=np.int32)
    local[:, :width] = pred
    if plan.chunks > 1:
        local = local.reshape(groups, plan.chunks, plan.group_size).sum(axis=1, dtype=np.int32)
    return tree_reduce(local)


@dataclass
class _Staged:
    packed_frame: np.ndarray
    packed_connected: np.ndarray
    boost: np.ndarray


def _stage_in(state: sp.SpState, bits: np.ndarray) -> _Staged:
    # Bit packing stands in for the host->device transfer; boosts are re-sent every frame.
    return _Staged(
        packed_frame=np.packbits(bits),
        packed_connected=np.packbits(state.connected(), axis=1),
        boost=state.boost.copy(),
    )


def _overlap_kernel(state: sp.SpState, staged: _Staged, plan: KernelPlan) -> np.ndarray:
    cfg = state.config
    frame = np.unpackbits(staged.packed_frame, count=cfg.input_size).view(bool)
    connected = np.unpackbits(staged.packed_connected, axis=1,
                              count=cfg.synapses_per_column).view(bool)
    pred = connected & frame[state.synapse_inputs]
    raw = group_reduce(pred, plan)
    return np.where(raw >= cfg.min_overlap, raw * staged.boost, 0.0)


def _inhibition_kernel(overlaps: np.ndarray, radius: int, winners: int) -> np.ndarray:
    """Second pass of the fused kernel over the global overlap buffer."""
    num_columns = overlaps.shape[0]
    width = 2 * radius + 1
    glob = np.full(num_columns + 2 * radius, -np.inf)
    glob[radius:radius + num_columns] = overlaps
    active = np.zeros(num_columns, dtype=bool)
    # Zero-overlap groups exit before fetching their neighborhood; a column
    # at or below 1 can never beat the floor of the threshold.
    live = np.flatnonzero(overlaps > 1.0)
    windows = sliding_window_view(glob, width)
    for start in range(0, live.size, _WAVE):
        groups = live[start:start + _WAVE]
        mine = overlaps[groups, None]
        beaten_by = np.count_nonzero(windows[groups] >= mine, axis=1) - 1  # minus self
        active[groups] = beaten_by < winners
    return active


def _ns() -> int:
    return time.perf_counter_ns()


def parallel_overlap(state: sp.SpState, frame, plan: KernelPlan):
    """Overlap kernel only. Returns ``(overlaps, records)``."""
    cfg = state.config
    iteration = state.iteration
    t0 = _ns()
    bits = sp.as_frame(frame, cfg.input_size)
    staged = _stage_in(state, bits)
    t1 = _ns()
    device_overlaps = _overlap_kernel(state, staged, plan)
    t2 = _ns()
    overlaps = device_overlaps.copy()
    state.overlap[:] = overlaps
    t3 = _ns()
    records = [
        ProfileRecord(Phase.STAGING_IN, t1 - t0, iteration),
        ProfileRecord(Phase.KERNEL_OVERLAP, t2 - t1, iteration),
        ProfileRecord(Phase.STAGING_OUT, t3 - t2, iteration),
    ]
    return overlaps, records


def parallel_inhibition_fused(state: sp.SpState, frame, plan: KernelPlan):
    """Fused overlap + inhibition. Returns ``(active_indices, records)``."""
    cfg = state.config
    iteration = state.iteration
    t0 = _ns()
    bits = sp.as_frame(frame, cfg.input_size)
    staged = _stage_in(state, bits)
    t1 = _ns()
    global_overlaps = _overlap_kernel(state, staged, plan)
    t2 = _ns()
    device_active = _inhibition_kernel(global_overlaps, state.inhibition_radius,
                                       cfg.winners_set_size)
    t3 = _ns()
    state.overlap[:] = global_overlaps
    state.active[:] = device_active
    winners = np.flatnonzero(device_active)
    t4 = _ns()
    records = [
        ProfileRecord(Phase.STAGING_IN, t1 - t0, iteration),
        ProfileRecord(Phase.KERNEL_OVERLAP, t2 - t1, iteration),
        ProfileRecord(Phase.KERNEL_INHIBITION, t3 - t2, iteration),
        ProfileRecord(Phase.STAGING_OUT, t4 - t3, iteration),
    ]
    return winners, records


def phase_totals(records: Iterable[ProfileRecord]) -> dict[Phase, int]:
    totals = {phase: 0 for phase in Phase}
    for rec in records:
        totals[Phase(rec.phase)] += rec.duration
    return totals


def overlap_share(records: Iterable[ProfileRecord]) -> float:
    """Fraction of kernel time spent in the overlap kernel."""
    records = list(records)
    phases = {Phase(r.phase) for r in records}
    if Phase.KERNEL_OVERLAP not in phases or Phase.KERNEL_INHIBITION not in phases:
        raise ComputationError("overlap_share needs kernel_overlap and kernel_inhibition samples")
    totals = phase_totals(records)
    overlap = totals[Phase.KERNEL_OVERLAP]
    denom = overlap + totals[Phase.KERNEL_INHIBITION]
    if denom == 0:
        raise ComputationError("kernel phases have zero total duration")
    return overlap / denom


class SequentialBackend:
    """sp-core behind the backend interface; compute time goes to the kernel phases."""

    name = "sequential"

    def __init__(self, config: sp.SpConfig):
        self.config = config

    def step(self, state: sp.SpState, frame, learning_enabled: bool):
        iteration = state.iteration
        t0 = _ns()
        overlaps = sp.compute_overlap(state, frame)
        t1 = _ns()
        winners = sp.compute_inhibition(state, overlaps)
        t2 = _ns()
        if learning_enabled:
            sp.learn(state, frame, winners)
        records = [
            ProfileRecord(Phase.STAGING_IN, 0, iteration),
            ProfileRecord(Phase.KERNEL_OVERLAP, t1 - t0, iteration),
            ProfileRecord(Phase.KERNEL_INHIBITION, t2 - t1, iteration),
            ProfileRecord(Phase.STAGING_OUT, 0, iteration),
        ]
        return winners, records


class ParallelBackend:
    """Fused data-parallel kernels for overlap + inhibition; learning stays on the host."""

    name = "parallel"

    def __init__(self, config: sp.SpConfig, max_group_size: int = DEFAULT_MAX_GROUP_SIZE):
        self.config = config
        self.plan = plan_kernels(config, fused=True, max_group_size=max_group_size)

    def step(self, state: sp.SpState, frame, learning_enabled: bool):
        winners, records = parallel_inhibition_fused(state, frame, self.plan)
        if learning_enabled:
            sp.learn(state, frame, winners)
        return winners, records


BACKENDS = {"sequential": SequentialBackend, "parallel": ParallelBackend}


def make_backend(name: str, config: sp.SpConfig):
    try:
        return BACKENDS[name](config)
    except KeyError:
        raise InputError(f"unknown backend {name!r}; expected one of {sorted(BACKENDS)}") from None


def write_profile_csv(path, records: Sequence[ProfileRecord], backend: str,
                      config: sp.SpConfig, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if not append or fh.tell() == 0:
            writer.writerow(PROFILE_CSV_FIELDS)
        for rec in records:
            writer.writerow([rec.iteration, Phase(rec.phase).value, rec.duration, backend,
                             config.num_columns, config.synapses_per_column,
                             config.min_overlap, config.winners_set_size])


def read_profile_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
