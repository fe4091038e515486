"""Reference sequential Spatial Pooler.

Columns live on a 1-D strip. Per-column state is stored as parallel numpy
arrays inside :class:`SpState`; :meth:`SpState.column` gives a per-column
view when one is more convenient.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter1d

from htmsp.errors import ConfigError, InputError

STATE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SpConfig:
    num_columns: int = 2048
    synapses_per_column: int = 128
    min_overlap: int = 8
    winners_set_size: int = 40
    perm_increment: float = 0.1
    perm_decrement: float = 0.1
    initial_permanence: float = 0.21
    connected_threshold: float = 0.2
    initial_inhibition_radius: int = 80
    max_boost: float = 2.0
    duty_cycle_period: int = 1000
    input_size: int = 240 * 134
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("num_columns", "synapses_per_column", "winners_set_size",
                     "initial_inhibition_radius", "duty_cycle_period", "input_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.min_overlap, bool) or not isinstance(self.min_overlap, (int, np.integer)) \
                or self.min_overlap < 0:
            raise ConfigError(f"min_overlap must be a non-negative integer, got {self.min_overlap!r}")
        for name in ("perm_increment", "perm_decrement", "initial_permanence", "connected_threshold"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
        if not isinstance(self.max_boost, (int, float)) or not self.max_boost >= 1.0:
            raise ConfigError(f"max_boost must be >= 1, got {self.max_boost!r}")
        if self.winners_set_size > self.num_columns:
            raise ConfigError(
                f"winners_set_size ({self.winners_set_size}) must not exceed "
                f"num_columns ({self.num_columns})")
        if self.min_overlap > self.synapses_per_column:
            raise ConfigError(
                f"min_overlap ({self.min_overlap}) must not exceed "
                f"synapses_per_column ({self.synapses_per_column})")
        if self.synapses_per_column > self.input_size:
            raise ConfigError(
                f"synapses_per_column ({self.synapses_per_column}) must not exceed "
                f"input_size ({self.input_size})")
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, (int, np.integer)) \
                or not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed!r}")

    def replace(self, **changes) -> "SpConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Column:
    """Read-only snapshot of one column, for inspection and debugging."""

    synapse_inputs: np.ndarray
    permanences: np.ndarray
    boost: float
    overlap: float
    active: bool
    active_duty_cycle: float
    overlap_duty_cycle: float


@dataclass(eq=False)
class SpState:
    config: SpConfig
    synapse_inputs: np.ndarray      # (C, S) int64, fixed after init
    permanences: np.ndarray         # (C, S) float64
    boost: np.ndarray               # (C,)
    overlap: np.ndarray             # (C,) last boosted overlap
    active: np.ndarray              # (C,) bool
    active_duty_cycle: np.ndarray   # (C,)
    overlap_duty_cycle: np.ndarray  # (C,)
    inhibition_radius: int
    iteration: int = 0
    _span: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_columns(self) -> int:
        return self.config.num_columns

    def column(self, index: int) -> Column:
        return Column(
            synapse_inputs=self.synapse_inputs[index].copy(),
            permanences=self.permanences[index].copy(),
            boost=float(self.boost[index]),
            overlap=float(self.overlap[index]),
            active=bool(self.active[index]),
            active_duty_cycle=float(self.active_duty_cycle[index]),
            overlap_duty_cycle=float(self.overlap_duty_cycle[index]),
        )

    @property
    def columns(self) -> list[Column]:
        return [self.column(i) for i in range(self.num_columns)]

    def connected(self) -> np.ndarray:
        return self.permanences >= self.config.connected_threshold

    def copy(self) -> "SpState":
        return SpState(
            config=self.config,
            synapse_inputs=self.synapse_inputs.copy(),
            permanences=self.permanences.copy(),
            boost=self.boost.copy(),
            overlap=self.overlap.copy(),
            active=self.active.copy(),
            active_duty_cycle=self.active_duty_cycle.copy(),
            overlap_duty_cycle=self.overlap_duty_cycle.copy(),
            inhibition_radius=self.inhibition_radius,
            iteration=self.iteration,
        )

    def equals(self, other: "SpState") -> bool:
        """Bitwise equality of config and every per-column field."""
        if self.config != other.config:
            return False
        if (self.inhibition_radius, self.iteration) != (other.inhibition_radius, other.iteration):
            return False
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in _ARRAY_FIELDS
        )


_ARRAY_FIELDS = ("synapse_inputs", "permanences", "boost", "overlap", "active",
                 "active_duty_cycle", "overlap_duty_cycle")


def as_frame(frame, input_size: int) -> np.ndarray:
    """Coerce a bit vector to a bool array, checking its length."""
    bits = np.asarray(frame)
    if bits.ndim != 1 or bits.shape[0] != input_size:
        raise InputError(f"frame has shape {bits.shape}, expected ({input_size},)")
    if bits.dtype != np.bool_:
        bits = bits != 0
    return bits


def init_sp(config: SpConfig) -> SpState:
    config.validate()
    c, s = config.num_columns, config.synapses_per_column
    inputs = np.empty((c, s), dtype=np.int64)
    for col in range(c):
        rng = np.random.default_rng([config.rng_seed, col])
        inputs[col] = rng.choice(config.input_size, size=s, replace=False)
    return SpState(
        config=config,
        synapse_inputs=inputs,
        permanences=np.full((c, s), float(config.initial_permanence)),
        boost=np.ones(c),
        overlap=np.zeros(c),
        active=np.zeros(c, dtype=bool),
        active_duty_cycle=np.zeros(c),
        overlap_duty_cycle=np.zeros(c),
        inhibition_radius=int(config.initial_inhibition_radius),
    )


def compute_overlap(state: SpState, frame) -> np.ndarray:
    """Boosted overlap of every column, zeroed below ``min_overlap``."""
    cfg = state.config
    bits = as_frame(frame, cfg.input_size)
    connected = state.connected()
    overlaps = np.zeros(cfg.num_columns)
    for col in range(cfg.num_columns):
        raw = int(np.count_nonzero(connected[col] & bits[state.synapse_inputs[col]]))
        if raw >= cfg.min_overlap:
            overlaps[col] = raw * state.boost[col]
    state.overlap[:] = overlaps
    return overlaps


def neighborhood(col: int, radius: int, num_columns: int) -> tuple[int, int]:
    """Half-open index range of the truncated neighborhood around ``col``."""
    return max(0, col - radius), min(num_columns, col + radius + 1)


def compute_inhibition(state: SpState, overlaps) -> np.ndarray:
    """Local winner-take-all: a column wins if it strictly beats the n-th
    largest overlap among its neighbors (itself excluded), floored at 1."""
    cfg = state.config
    overlaps = np.asarray(overlaps, dtype=np.float64)
    if overlaps.shape != (cfg.num_columns,):
        raise InputError(f"overlaps has shape {overlaps.shape}, expected ({cfg.num_columns},)")
    n = cfg.winners_set_size
    active = np.zeros(cfg.num_columns, dtype=bool)
    for col in range(cfg.num_columns):
        if overlaps[col] <= 1.0:
            continue
        lo, hi = neighborhood(col, state.inhibition_radius, cfg.num_columns)
        others = np.concatenate((overlaps[lo:col], overlaps[col + 1:hi]))
        if others.size >= n:
            kth = others.size - n
            nth_max = np.partition(others, kth)[kth]
        else:
            nth_max = -math.inf
        active[col] = overlaps[col] > max(nth_max, 1.0)
    state.active[:] = active
    return np.flatnonzero(active)


def _neighborhood_max(values: np.ndarray, radius: int) -> np.ndarray:
    # 'nearest' padding repeats edge values, which leaves a max unchanged,
    # so this equals the max over the truncated neighborhood.
    return maximum_filter1d(values, size=2 * radius + 1, mode="nearest")


def _connected_span(inputs: np.ndarray, connected: np.ndarray) -> np.ndarray:
    """Input-index extent of each row's connected synapses (0 if none)."""
    big = np.iinfo(np.int64).max
    lo = np.where(connected, inputs, big).min(axis=1)
    hi = np.where(connected, inputs, -1).max(axis=1)
    return np.where(hi >= 0, hi - lo + 1, 0)


def learn(state: SpState, frame, active) -> SpState:
    """One Hebbian + homeostatic update in place; returns ``state``."""
    cfg = state.config
    bits = as_frame(frame, cfg.input_size)
    active_idx = np.unique(np.asarray(active, dtype=np.int64))
    if active_idx.size and (active_idx[0] < 0 or active_idx[-1] >= cfg.num_columns):
        raise InputError("active column index out of range")
    if state._span is None:
        state._span = _connected_span(state.synapse_inputs, state.connected())
    touched = [active_idx]

    if active_idx.size:
        on = bits[state.synapse_inputs[active_idx]]
        perms = state.permanences[active_idx]
        perms = np.where(on, perms + cfg.perm_increment, perms - cfg.perm_decrement)
        state.permanences[active_idx] = np.clip(perms, 0.0, 1.0)

    is_active = np.zeros(cfg.num_columns, dtype=bool)
    is_active[active_idx] = True
    alpha = 1.0 / cfg.duty_cycle_period
    state.active_duty_cycle += alpha * (is_active - state.active_duty_cycle)
    overlapped = state.overlap >= cfg.min_overlap
    state.overlap_duty_cycle += alpha * (overlapped - state.overlap_duty_cycle)

    radius = state.inhibition_radius
    min_duty = 0.01 * _neighborhood_max(state.active_duty_cycle, radius)
    starved = state.active_duty_cycle < min_duty
    boost = np.ones(cfg.num_columns)
    boost[starved] = 1.0 + (min_duty[starved] - state.active_duty_cycle[starved]) \
        / min_duty[starved] * (cfg.max_boost - 1.0)
    state.boost[:] = np.clip(boost, 1.0, cfg.max_boost)

    min_overlap_duty = 0.01 * _neighborhood_max(state.overlap_duty_cycle, radius)
    weak = np.flatnonzero(state.overlap_duty_cycle < min_overlap_duty)
    if weak.size:
        bumped = state.permanences[weak] + 0.1 * cfg.connected_threshold
        state.permanences[weak] = np.clip(bumped, 0.0, 1.0)
        touched.append(weak)

    changed = np.unique(np.concatenate(touched))
    if changed.size:
        state._span[changed] = _connected_span(
            state.synapse_inputs[changed],
            state.permanences[changed] >= cfg.connected_threshold)
    mean_field = state._span.mean() * cfg.num_columns / cfg.input_size
    state.inhibition_radius = int(min(max(math.floor(mean_field / 2.0 + 0.5), 1), cfg.num_columns))
    state.iteration += 1
    return state


def sp_step(state: SpState, frame, learning_enabled: bool) -> np.ndarray:
    overlaps = compute_overlap(state, frame)
    winners = compute_inhibition(state, overlaps)
    if learning_enabled:
        learn(state, frame, winners)
    return winners


def save_state(state: SpState, path) -> None:
    """Write a versioned ``.npz`` snapshot; :func:`load_state` restores it exactly."""
    meta = {
        "version": STATE_FORMAT_VERSION,
        "config": state.config.to_dict(),
        "inhibition_radius": state.inhibition_radius,
        "iteration": state.iteration,
    }
    arrays = {name: getattr(state, name) for name in _ARRAY_FIELDS}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_state(path) -> SpState:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("version") != STATE_FORMAT_VERSION:
            raise InputError(f"{path}: unsupported state format version {meta.get('version')!r}")
        arrays = {name: data[name].copy() for name in _ARRAY_FIELDS}
    return SpState(
        config=SpConfig(**meta["config"]),
        inhibition_radius=int(meta["inhibition_radius"]),
        iteration=int(meta["iteration"]),
        **arrays,
    )
