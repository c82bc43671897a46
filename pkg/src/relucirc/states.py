"""Grid-search enumeration of realized network states, output-sign classes,
boundary states, and layer projections.

A state is keyed by its raw bit row (layer 1 first). Sign flags follow the
closed-half-space convention: a state is flagged "nonneg" when some evaluated
input gave output >= 0 and "neg" when some input gave output <= 0, so an
exact zero lands in both classes and the boundary set is their intersection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mlp import ArchSpec, InputError, MlpParams, NetworkState, forward_batch

__all__ = [
    "GridSpec",
    "StateRegistry",
    "LayerProjection",
    "GridBudgetError",
    "enumerate_states",
    "refine_boundary",
    "project",
    "merge_registries",
    "save_states_csv",
    "load_states_csv",
]

DEFAULT_POINT_BUDGET = 10**8
_CHUNK = 1 << 16


class GridBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if not (len(self.lower) == len(self.upper) == len(self.resolution)):
            raise InputError("lower/upper/resolution length mismatch")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise InputError("need lower < upper componentwise")
        if any(r < 2 for r in self.resolution):
            raise InputError("resolution must be >= 2 per axis")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def total_points(self) -> int:
        n = 1
        for r in self.resolution:
            n *= r
        return n

    @property
    def cell_size(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (r - 1) for lo, hi, r in zip(self.lower, self.upper, self.resolution))

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.resolution[axis])

    def points_for(self, flat_idx: np.ndarray) -> np.ndarray:
        """Coordinates of grid points given flat (C-order) indices."""
        multi = np.unravel_index(flat_idx, self.resolution)
        cols = [self.axis_coords(ax)[multi[ax]] for ax in range(self.dim)]
        return np.stack(cols, axis=1)

    def iter_chunks(self, chunk: int = _CHUNK):
        n = self.total_points
        for start in range(0, n, chunk):
            idx = np.arange(start, min(start + chunk, n))
            yield idx, self.points_for(idx)

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(self.lower, self.upper, tuple(r * factor for r in self.resolution))

    @classmethod
    def for_data(cls, points: np.ndarray, resolution: int = 512, expand: float = 0.25) -> "GridSpec":
        """Bounding box of ``points`` expanded by ``expand`` per side."""
        points = np.asarray(points, dtype=np.float64)
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = hi - lo
        span[span == 0] = 1.0
        return cls(tuple(lo - expand * span), tuple(hi + expand * span),
                   (resolution,) * points.shape[1])


@dataclass
class _Rec:
    nonneg: bool
    neg: bool
    rep: np.ndarray          # first input that realized the state
    rep_pos: np.ndarray | None
    rep_neg: np.ndarray | None


class StateRegistry:
    """Realized states with output-sign flags and representative inputs."""

    def __init__(self, arch: ArchSpec):
        self.arch = arch
        self._recs: dict[bytes, _Rec] = {}
        self._sign_cache: tuple[GridSpec, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._recs)

    def __contains__(self, bits) -> bool:
        return self._key(bits) in self._recs

    @staticmethod
    def _key(bits) -> bytes:
        if isinstance(bits, bytes):
            return bits
        if isinstance(bits, NetworkState):
            return bits.as_array().tobytes()
        return np.ascontiguousarray(bits, dtype=np.uint8).tobytes()

    def add(self, bits, x: np.ndarray, out_nonneg: bool, out_nonpos: bool) -> None:
        key = self._key(bits)
        rec = self._recs.get(key)
        x = np.asarray(x, dtype=np.float64)
        if rec is None:
            rec = _Rec(False, False, x.copy(), None, None)
            self._recs[key] = rec
        if out_nonneg:
            rec.nonneg = True
            if rec.rep_pos is None:
                rec.rep_pos = x.copy()
        if out_nonpos:
            rec.neg = True
            if rec.rep_neg is None:
                rec.rep_neg = x.copy()

    def _bits_of(self, keys) -> np.ndarray:
        n = self.arch.total_hidden
        if not keys:
            return np.zeros((0, n), dtype=np.uint8)
        return np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(len(keys), n)

    def _sorted_keys(self, pred) -> list[bytes]:
        return sorted(k for k, r in self._recs.items() if pred(r))

    def sigma_all(self) -> np.ndarray:
        """All realized states as a bit matrix, lexicographically sorted."""
        return self._bits_of(self._sorted_keys(lambda r: True))

    def sigma_plus(self) -> np.ndarray:
        return self._bits_of(self._sorted_keys(lambda r: r.nonneg))

    def sigma_minus(self) -> np.ndarray:
        return self._bits_of(self._sorted_keys(lambda r: r.neg))

    def sigma_zero(self) -> np.ndarray:
        return self._bits_of(self._sorted_keys(lambda r: r.nonneg and r.neg))

    def representative(self, bits) -> np.ndarray:
        return self._recs[self._key(bits)].rep

    def flags(self, bits) -> tuple[bool, bool]:
        rec = self._recs[self._key(bits)]
        return rec.nonneg, rec.neg

    def states(self) -> list[NetworkState]:
        return [NetworkState(tuple(int(b) for b in row), self.arch.hidden_widths)
                for row in self.sigma_all()]

    def copy(self) -> "StateRegistry":
        out = StateRegistry(self.arch)
        for k, r in self._recs.items():
            out._recs[k] = _Rec(r.nonneg, r.neg, r.rep.copy(),
                                None if r.rep_pos is None else r.rep_pos.copy(),
                                None if r.rep_neg is None else r.rep_neg.copy())
        out._sign_cache = self._sign_cache
        return out


def _ingest_chunk(reg: StateRegistry, bits: np.ndarray, out: np.ndarray, X: np.ndarray) -> None:
    uniq, inv = np.unique(bits, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    nonneg = out >= 0
    nonpos = out <= 0
    k = uniq.shape[0]
    # first occurrence index per (unique state, output sign); descending scan
    # so that the smallest index wins
    pos_first = np.full(k, -1)
    neg_first = np.full(k, -1)
    desc = np.arange(bits.shape[0])[::-1]
    for sel, firsts in ((nonneg, pos_first), (nonpos, neg_first)):
        idxs = desc[sel[desc]]
        firsts[inv[idxs]] = idxs
    for u in range(k):
        row = uniq[u]
        if pos_first[u] >= 0:
            i = pos_first[u]
            reg.add(row, X[i], True, out[i] <= 0)
        if neg_first[u] >= 0 and neg_first[u] != pos_first[u]:
            i = neg_first[u]
            reg.add(row, X[i], False, True)


def enumerate_states(params: MlpParams, grid: GridSpec,
                     point_budget: int = DEFAULT_POINT_BUDGET) -> StateRegistry:
    """Evaluate the net at every grid point and register the realized states."""
    if grid.dim != params.arch.input_dim:
        raise InputError(f"grid dim {grid.dim} != input dim {params.arch.input_dim}")
    if grid.total_points > point_budget:
        raise GridBudgetError(f"{grid.total_points} grid points exceed budget {point_budget}")
    reg = StateRegistry(params.arch)
    signs = np.empty(grid.total_points, dtype=bool)
    for idx, X in grid.iter_chunks():
        out, bits = forward_batch(params, X)
        signs[idx] = out >= 0
        _ingest_chunk(reg, bits, out, X)
    reg._sign_cache = (grid, signs)
    return reg


def _sign_grid(params: MlpParams, reg: StateRegistry, grid: GridSpec) -> np.ndarray:
    if reg._sign_cache is not None and reg._sign_cache[0] == grid:
        return reg._sign_cache[1]
    signs = np.empty(grid.total_points, dtype=bool)
    for idx, X in grid.iter_chunks():
        out, _ = forward_batch(params, X)
        signs[idx] = out >= 0
    return signs


def refine_boundary(params: MlpParams, registry: StateRegistry, grid: GridSpec,
                    iterations: int = 40) -> StateRegistry:
    """Bisect every axis-aligned grid edge with an output sign change and
    register the states found just on either side of the located crossing.

    The returned registry's boundary set is a superset of the input's.
    """
    reg = registry.copy()
    signs = _sign_grid(params, registry, grid).reshape(grid.resolution)
    cell = grid.cell_size
    for axis in range(grid.dim):
        lo_sl = tuple(slice(0, -1) if a == axis else slice(None) for a in range(grid.dim))
        hi_sl = tuple(slice(1, None) if a == axis else slice(None) for a in range(grid.dim))
        change = signs[lo_sl] != signs[hi_sl]
        if not change.any():
            continue
        multi = np.nonzero(change)
        base = np.stack(multi, axis=1)
        a = grid.points_for(np.ravel_multi_index(tuple(base.T), grid.resolution))
        b = a.copy()
        b[:, axis] += cell[axis]
        sa = signs[lo_sl][multi]
        for _ in range(iterations):
            mid = 0.5 * (a + b)
            out, _ = forward_batch(params, mid)
            sm = out >= 0
            take_a = sm == sa
            a[take_a] = mid[take_a]
            b[~take_a] = mid[~take_a]
        x_star = 0.5 * (a + b)
        delta = 1e-9 * cell[axis]
        for side in (-1.0, 1.0):
            P = x_star.copy()
            P[:, axis] += side * delta
            out, bits = forward_batch(params, P)
            for i in range(P.shape[0]):
                reg.add(bits[i], P[i], out[i] >= 0, out[i] <= 0)
    return reg


@dataclass
class LayerProjection:
    layers: tuple[int, ...]
    projected: np.ndarray  # deduplicated (k, sum of selected widths) bit matrix
    back_refs: dict[bytes, list[bytes]] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.projected.shape[0]


def project(registry: StateRegistry, layers, source: str = "full") -> LayerProjection:
    """Deduplicated projection of the full (or boundary) state set onto the
    hidden layers in ``layers``."""
    layers = tuple(sorted(set(int(j) for j in layers)))
    if not layers:
        raise InputError("layer index set must be nonempty")
    d = registry.arch.depth
    if any(not 1 <= j <= d for j in layers):
        raise InputError(f"layer indices must lie in 1..{d}")
    if source == "full":
        bits = registry.sigma_all()
    elif source == "boundary":
        bits = registry.sigma_zero()
    else:
        raise InputError("source must be 'full' or 'boundary'")
    cols = np.concatenate([np.arange(registry.arch.layer_slice(j).start,
                                     registry.arch.layer_slice(j).stop) for j in layers])
    proj = bits[:, cols]
    uniq, inv = np.unique(proj, axis=0, return_inverse=True) if bits.shape[0] else (proj, np.empty(0, int))
    back: dict[bytes, list[bytes]] = {}
    for i in range(bits.shape[0]):
        back.setdefault(uniq[inv[i]].tobytes(), []).append(bits[i].tobytes())
    return LayerProjection(layers, uniq, back)


def merge_registries(a: StateRegistry, b: StateRegistry) -> StateRegistry:
    """Union of states with OR of flags (associative and commutative)."""
    if a.arch != b.arch:
        raise InputError("cannot merge registries of different architectures")
    out = a.copy()
    out._sign_cache = None
    for key, rec in b._recs.items():
        if rec.nonneg:
            out.add(key, rec.rep_pos if rec.rep_pos is not None else rec.rep, True, False)
        if rec.neg:
            out.add(key, rec.rep_neg if rec.rep_neg is not None else rec.rep, False, True)
    return out


def save_states_csv(registry: StateRegistry, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        dim = registry.arch.input_dim
        w.writerow(["bitstring", "nonneg", "neg"] + [f"x{i}" for i in range(dim)])
        for key in sorted(registry._recs):
            rec = registry._recs[key]
            bitstr = "".join(str(b) for b in np.frombuffer(key, dtype=np.uint8))
            w.writerow([bitstr, int(rec.nonneg), int(rec.neg)] + [repr(v) for v in rec.rep])


def load_states_csv(path, arch: ArchSpec) -> StateRegistry:
    reg = StateRegistry(arch)
    with open(path, newline="") as f:
        r = csv.reader(f)
        next(r)
        for row in r:
            bits = np.array([int(c) for c in row[0]], dtype=np.uint8)
            nonneg, neg = bool(int(row[1])), bool(int(row[2]))
            x = np.array([float(v) for v in row[3:]])
            if nonneg:
                reg.add(bits, x, True, False)
            if neg:
                reg.add(bits, x, False, True)
    return reg
