"""Grid versions of line-null sets and the word-ladder null decomposition.

A :class:`GridSet` is a boolean occupancy grid over a coordinate box of the
Heisenberg group or of ``R^k`` (``k <= 3``).  ``line_measure`` integrates the
indicator along the left-invariant flow ``t -> p delta_t(e_i)`` with the
trapezoid rule; on the grid "positive measure" means "larger than ``theta``".

For a word ``w`` and letter ``i``, ``A_wi`` keeps the cells of ``A_w`` whose
line along ``X_i`` meets ``A_w`` in more than ``theta``.  With
``w = 1 2 ... n`` the pieces ``C_i = U_k (A_{w^k 1..i-1} minus A_{w^k 1..i})``
and the residual ``A_{w^m}`` partition ``A``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .carnot_group import CarnotGroup, euclidean, heisenberg
from .errors import ConfigError, DomainError, UnsupportedError

MAGIC = b"CLGRID1\n"
_CHUNK = 1 << 21  # sample points per vectorised batch


def _check_group(group: CarnotGroup) -> None:
    heis = group.rank == 2 and group.step == 2
    eucl = group.step == 1 and group.rank <= 3
    if not (heis or eucl):
        raise UnsupportedError(f"grid sets support heisenberg and euclidean(k<=3), not {group.label}")


def flow(group: CarnotGroup, points: np.ndarray, i: int, ts: np.ndarray) -> np.ndarray:
    """``p delta_t(e_i)`` for every point (rows) and time; shape ``(N, T, dim)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ts = np.asarray(ts, dtype=float)
    out = np.repeat(points[:, None, :], len(ts), axis=1)
    out[:, :, i] += ts[None, :]
    if group.step == 2:
        # (x, y, z)(t, 0, 0) = (x + t, y, z - y t / 2); (x, y, z)(0, t, 0) = (x, y + t, z + x t / 2)
        other = 1 - i
        sign = -0.5 if i == 0 else 0.5
        out[:, :, 2] += sign * points[:, None, other] * ts[None, :]
    return out


@dataclass
class GridSet:
    group: CarnotGroup
    bounds: tuple[tuple[float, float], ...]
    resolution: int
    cells: np.ndarray

    def __post_init__(self):
        _check_group(self.group)
        dim = self.group.dim
        if len(self.bounds) != dim:
            raise DomainError(f"need {dim} coordinate bounds")
        if self.resolution < 1:
            raise DomainError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.shape != (self.resolution,) * dim:
            raise DomainError(f"cell array must have shape {(self.resolution,) * dim}")
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)

    @classmethod
    def empty(cls, group: CarnotGroup, resolution: int, bounds=None) -> GridSet:
        bounds = bounds or ((-1.0, 1.0),) * group.dim
        return cls(group, tuple(bounds), resolution, np.zeros((resolution,) * group.dim, dtype=bool))

    def like(self, cells: np.ndarray) -> GridSet:
        return GridSet(self.group, self.bounds, self.resolution, cells)

    @property
    def dim(self) -> int:
        return self.group.dim

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / self.resolution for lo, hi in self.bounds])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    def is_empty(self) -> bool:
        return not self.cells.any()

    def centers(self, index: np.ndarray | None = None) -> np.ndarray:
        """Centers of the given cell indices (rows), or of all occupied cells."""
        if index is None:
            index = np.argwhere(self.cells)
        lo = np.array([b[0] for b in self.bounds])
        return lo + (index + 0.5) * self.widths

    def all_centers(self) -> np.ndarray:
        idx = np.indices(self.cells.shape).reshape(self.dim, -1).T
        return self.centers(idx)

    def lookup(self, pts: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        """Occupancy of the cells containing ``pts`` (false outside the box)."""
        cells = self.cells if cells is None else cells
        lo = np.array([b[0] for b in self.bounds])
        idx = np.floor((pts - lo) / self.widths).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.resolution), axis=-1)
        idx = np.clip(idx, 0, self.resolution - 1)
        hit = cells[tuple(idx[..., a] for a in range(self.dim))]
        return hit & inside

    # io -----------------------------------------------------------------

    def header(self) -> dict:
        return {
            "label": self.group.label,
            "bounds": [list(b) for b in self.bounds],
            "resolution": self.resolution,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        payload = np.packbits(self.cells.ravel()).tobytes()
        return MAGIC + struct.pack("<I", len(head)) + head + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> GridSet:
        if not data.startswith(MAGIC):
            raise ConfigError("not a grid set file")
        off = len(MAGIC)
        (n,) = struct.unpack_from("<I", data, off)
        head = json.loads(data[off + 4 : off + 4 + n])
        group = group_from_label(head["label"])
        res = head["resolution"]
        bits = np.unpackbits(np.frombuffer(data[off + 4 + n :], dtype=np.uint8))
        cells = bits[: res**group.dim].astype(bool).reshape((res,) * group.dim)
        return cls(group, tuple(tuple(b) for b in head["bounds"]), res, cells)

    def to_json(self) -> str:
        out = self.header()
        out["cells"] = np.argwhere(self.cells).tolist()
        return json.dumps(out, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> GridSet:
        data = json.loads(text)
        group = group_from_label(data["label"])
        res = data["resolution"]
        cells = np.zeros((res,) * group.dim, dtype=bool)
        for idx in data["cells"]:
            cells[tuple(idx)] = True
        return cls(group, tuple(tuple(b) for b in data["bounds"]), res, cells)


def group_from_label(label: str) -> CarnotGroup:
    label = label.strip()
    if label == "heisenberg":
        return heisenberg()
    if label.startswith("euclidean(") and label.endswith(")"):
        return euclidean(int(label[len("euclidean(") : -1]))
    raise UnsupportedError(f"grid sets support heisenberg and euclidean(k), not {label!r}")


@dataclass
class WordSet:
    """``A_w``: the cells of the base set that survive the word ``w`` (letters from 1)."""

    base: GridSet
    word: tuple[int, ...]
    cells: np.ndarray

    @property
    def grid(self) -> GridSet:
        return self.base.like(self.cells)

    @property
    def count(self) -> int:
        return int(self.cells.sum())


# line measures ---------------------------------------------------------------


def _t_grid(A: GridSet, i: int, step: float, offset: float, extent: float | None) -> np.ndarray:
    """``t = j * step`` covering the box along axis ``i`` from a base coordinate ``offset``."""
    if extent is not None:
        jmax = int(np.ceil(extent / step))
        return np.arange(-jmax, jmax + 1) * step
    lo, hi = A.bounds[i]
    j0 = int(np.floor((lo - offset) / step)) - 1
    j1 = int(np.ceil((hi - offset) / step)) + 1
    return np.arange(j0, j1 + 1) * step


def _trapezoid_counts(hits: np.ndarray) -> np.ndarray:
    """Trapezoid sums of 0/1 samples in units of the step (exact half-integers)."""
    h = hits.astype(np.int64)
    inner = h[..., :-1] + h[..., 1:]
    return inner.sum(axis=-1) / 2.0


def line_measure(A: GridSet, p, i: int, step: float | None = None, extent: float | None = None) -> float:
    """Trapezoid estimate of ``|{t : p delta_t(e_i) in A}|`` (0-based direction ``i``)."""
    if not 0 <= i < A.group.rank:
        raise DomainError(f"direction index must be a first-layer generator in [0, {A.group.rank})")
    p = np.asarray(p.to_float() if hasattr(p, "to_float") else p, dtype=float)
    step = float(A.widths[i]) if step is None else float(step)
    ts = _t_grid(A, i, step, float(p[i]), extent)
    ts = np.concatenate(([ts[0] - step], ts, [ts[-1] + step]))
    pts = flow(A.group, p[None, :], i, ts)[0]
    hits = A.lookup(pts)
    return float(_trapezoid_counts(hits)) * step


def line_measures(A: GridSet, points: np.ndarray, i: int, cells: np.ndarray | None = None) -> np.ndarray:
    """Vectorised ``line_measure`` at the default step for many base points."""
    points = np.atleast_2d(points)
    if len(points) == 0:
        return np.zeros(0)
    step = float(A.widths[i])
    lo, hi = A.bounds[i]
    span = hi - lo
    # every base point lies in the box, so this window covers the whole box along axis i
    jmax = int(np.ceil(span / step)) + 2
    js = np.arange(-jmax, jmax + 1)
    ts = js * step
    out = np.empty(len(points))
    per = max(1, _CHUNK // len(ts))
    for s in range(0, len(points), per):
        pts = flow(A.group, points[s : s + per], i, ts)
        out[s : s + per] = _trapezoid_counts(A.lookup(pts, cells)) * step
    return out


def _positive_cells(A: GridSet, cells: np.ndarray, i: int, theta: float) -> np.ndarray:
    idx = np.argwhere(cells)
    out = np.zeros_like(cells)
    if len(idx) == 0:
        return out
    m = line_measures(A, A.centers(idx), i, cells)
    keep = idx[m > theta]
    out[tuple(keep.T)] = True
    return out


def positive_line_subset(A: GridSet | WordSet, i: int, theta: float) -> WordSet:
    """Cells ``p`` of ``A`` with ``|A cap p R X_i| > theta`` (``i`` is 0-based)."""
    if not theta > 0:
        raise DomainError("theta must be positive")
    if isinstance(A, WordSet):
        base, word, cells = A.base, A.word, A.cells
    else:
        base, word, cells = A, (), A.cells
    return WordSet(base, word + (i + 1,), _positive_cells(base, cells, i, theta))


def positive_line_oracle(A: GridSet, i: int, theta: float) -> np.ndarray:
    """Cell-by-cell scalar integration over every cell of the grid (slow reference)."""
    out = np.zeros_like(A.cells)
    for idx in np.ndindex(A.cells.shape):
        if not A.cells[idx]:
            continue
        c = A.centers(np.array([idx]))[0]
        out[idx] = line_measure(A, c, i) > theta
    return out


def max_line_measure(A: GridSet, i: int) -> float:
    """Largest line measure along ``X_i`` over lines through every cell center of the grid."""
    if A.is_empty():
        return 0.0
    return float(line_measures(A, A.all_centers(), i).max())


# decomposition -----------------------------------------------------------------


@dataclass
class NullDecomposition:
    pieces: list[GridSet]
    residual: GridSet
    generators: tuple[int, ...]
    theta: float
    rounds: int
    ladder: list[tuple[str, int]] = field(default_factory=list)
    stabilized_round: int | None = None

    @property
    def residual_empty(self) -> bool:
        return self.residual.is_empty()

    def to_dict(self) -> dict:
        return {
            "generators": [g + 1 for g in self.generators],
            "theta": self.theta,
            "rounds": self.rounds,
            "piece_counts": [p.count for p in self.pieces],
            "residual_count": self.residual.count,
            "residual_empty": self.residual_empty,
            "stabilized_round": self.stabilized_round,
            "ladder": [{"word": w, "cells": n} for w, n in self.ladder],
        }


def null_decompose(A: GridSet, theta: float | None = None, m_rounds: int | None = None,
                   generators: Sequence[int] | None = None) -> NullDecomposition:
    """Word-ladder decomposition ``A = C_1 u ... u C_n u A_{w^m}``.

    ``theta`` defaults to three cell widths and ``m_rounds`` to the topological
    dimension.  ``stabilized_round`` is the first round after which the
    surviving set stopped changing.
    """
    theta = 3.0 * float(A.widths.max()) if theta is None else float(theta)
    m_rounds = A.dim if m_rounds is None else int(m_rounds)
    if m_rounds < 1:
        raise DomainError("m_rounds must be >= 1")
    gens = tuple(range(A.group.rank)) if generators is None else tuple(generators)
    pieces = [np.zeros_like(A.cells) for _ in gens]
    current = WordSet(A, (), A.cells.copy())
    ladder = [("", current.count)]
    stabilized = None
    for k in range(m_rounds):
        start = current.cells
        for slot, i in enumerate(gens):
            nxt = positive_line_subset(current, i, theta)
            pieces[slot] |= current.cells & ~nxt.cells
            current = nxt
            ladder.append(("".join(str(c) for c in current.word), current.count))
        if stabilized is None and np.array_equal(start, current.cells):
            stabilized = k
    return NullDecomposition(
        pieces=[A.like(p) for p in pieces],
        residual=A.like(current.cells),
        generators=gens,
        theta=theta,
        rounds=m_rounds,
        ladder=ladder,
        stabilized_round=stabilized,
    )


@dataclass
class ClassUVerdict:
    in_class: bool
    decomposition: NullDecomposition
    max_piece_measures: list[float]

    def to_dict(self) -> dict:
        return {
            "in_class": self.in_class,
            "max_piece_measures": self.max_piece_measures,
            "decomposition": self.decomposition.to_dict(),
        }


def class_U_check(A: GridSet, generators: Sequence[int] | None = None, theta: float | None = None,
                  m_rounds: int | None = None) -> ClassUVerdict:
    """Grid test for membership in U({a_1..a_m}): empty residual and every piece
    ``C_i`` meets each ``X_{a_i}`` line in at most ``theta``."""
    gens = tuple(range(A.group.rank)) if generators is None else tuple(generators)
    for g in gens:
        if not 0 <= g < A.group.rank:
            raise DomainError(f"generator {g} is not a first-layer basis direction")
    dec = null_decompose(A, theta, m_rounds, gens)
    measures = [max_line_measure(p, i) for p, i in zip(dec.pieces, gens)]
    ok = dec.residual_empty and all(m <= dec.theta for m in measures)
    return ClassUVerdict(ok, dec, measures)


def theta_sensitivity(A: GridSet, multipliers: Iterable[float] = (1, 2, 3, 4, 6),
                      m_rounds: int | None = None) -> list[dict]:
    w = float(A.widths.max())
    rows = []
    for k in multipliers:
        dec = null_decompose(A, k * w, m_rounds)
        rows.append({
            "theta_cells": k,
            "theta": k * w,
            "residual_cells": dec.residual.count,
            "piece_counts": [p.count for p in dec.pieces],
        })
    return rows


# rasterisation ---------------------------------------------------------------

SHAPES = ("empty", "full", "point", "plane", "line", "sphere", "circle", "slab", "dust")


def rasterize(group: CarnotGroup | str, shape: str, resolution: int = 64, bounds=None,
              seed: int = 0, **params) -> GridSet:
    """Built-in shapes on the box ``bounds`` (default ``[-1, 1]^dim``).

    ``plane``/``line``: ``normal``, ``offset`` (points with ``normal . x = offset``);
    ``sphere``/``circle``: ``radius``, ``center``; ``slab``: ``axis``, ``half_width``;
    ``point``: ``at``; ``dust``: ``density`` (kept fraction per subdivision), ``levels``.
    Hypersurfaces are one cell thick: a cell is kept when ``|F(c)| / |grad F(c)|``
    is at most half a cell width.
    """
    if isinstance(group, str):
        group = group_from_label(group)
    A = GridSet.empty(group, resolution, bounds)
    dim = group.dim
    c = A.all_centers()
    h = float(A.widths.max())
    if shape == "empty":
        mask = np.zeros(len(c), dtype=bool)
    elif shape == "full":
        mask = np.ones(len(c), dtype=bool)
    elif shape == "point":
        at = np.asarray(params.get("at", [0.0] * dim), dtype=float)
        cells = np.zeros_like(A.cells)
        idx = np.floor((at - np.array([b[0] for b in A.bounds])) / A.widths).astype(int)
        idx = np.clip(idx, 0, resolution - 1)
        cells[tuple(idx)] = True
        return A.like(cells)
    elif shape in ("plane", "line"):
        default = [0.0] * dim
        default[-1] = 1.0
        if dim >= 2 and shape == "line":
            default = [-0.3, 1.0] + [0.0] * (dim - 2)
        normal = np.asarray(params.get("normal", default), dtype=float)
        offset = float(params.get("offset", 0.1 if shape == "line" else 0.0))
        dist = np.abs(c @ normal - offset) / np.linalg.norm(normal)
        mask = dist <= h / 2
    elif shape in ("sphere", "circle"):
        radius = float(params.get("radius", 0.6))
        center = np.asarray(params.get("center", [0.0] * dim), dtype=float)
        dist = np.abs(np.linalg.norm(c - center, axis=1) - radius)
        mask = dist <= h / 2
    elif shape == "slab":
        axis = int(params.get("axis", 0))
        half = float(params.get("half_width", 0.5))
        mask = np.abs(c[:, axis]) < half
    elif shape == "dust":
        density = float(params.get("density", 0.5))
        levels = int(params.get("levels", max(1, int(np.log2(resolution)))))
        rng = np.random.default_rng([seed, 41])
        keep = np.ones((1,) * dim, dtype=bool)
        for _ in range(levels):
            keep = keep.repeat(2, axis=0)
            for a in range(1, dim):
                keep = keep.repeat(2, axis=a)
            keep &= rng.uniform(size=keep.shape) < density
        reps = max(1, resolution // keep.shape[0])
        for a in range(dim):
            keep = keep.repeat(reps, axis=a)
        cells = np.zeros_like(A.cells)
        n = min(resolution, keep.shape[0])
        cells[(slice(0, n),) * dim] = keep[(slice(0, n),) * dim]
        return A.like(cells)
    else:
        raise ConfigError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    return A.like(mask.reshape(A.cells.shape))
