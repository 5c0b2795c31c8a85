"""Key-value group descriptors.

A descriptor file has one ``key = value`` per line; ``#`` starts a comment::

    label = heisenberg        # or: rank = 2 / step = 3, or free(2,3), euclidean(2)
    norm = koranyi            # koranyi | ball_box
    layer_weights = [1, 1]
    lp = 2                    # makes the descriptor an lp space ...
    component = free_tower    # ... over this component (default: the group above)
    truncation = 5
    sum = lp                  # lp | c0

Grid keys for the negligibility lab: ``shape``, ``resolution``, ``bounds``
(half-width of the cube or a list of ``[lo, hi]`` pairs) and the shape
parameters ``radius``, ``normal``, ``offset``, ``axis``, ``half_width``,
``density``, ``levels``.

Bases are rebuilt from ``(rank, step)``; they are never stored.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

from .carnot_group import CarnotGroup, _group_from_key, euclidean, free_carnot, heisenberg
from .errors import ConfigError
from .homogeneous_metric import HomogeneousNorm, default_norm
from .lp_scalable import LpSpace

GROUP_KEYS = {"label", "rank", "step", "norm", "layer_weights"}
LP_KEYS = {"lp", "component", "truncation", "sum"}
GRID_KEYS = {"shape", "resolution", "bounds", "radius", "normal", "offset", "axis", "half_width",
             "density", "levels", "center", "at"}
KEYS = GROUP_KEYS | LP_KEYS | GRID_KEYS

_FREE = re.compile(r"^free\((\d+),\s*(\d+)\)$")
_EUCL = re.compile(r"^euclidean\((\d+)\)$")


def group_from_name(name: str) -> CarnotGroup:
    """``heisenberg``, ``free(r,s)`` or ``euclidean(k)``."""
    name = name.strip().replace(" ", "")
    if name == "heisenberg":
        return heisenberg()
    m = _FREE.match(name)
    if m:
        return free_carnot(int(m.group(1)), int(m.group(2)))
    m = _EUCL.match(name)
    if m:
        return euclidean(int(m.group(1)))
    raise ConfigError(f"unknown group {name!r}; expected heisenberg, free(r,s) or euclidean(k)")


def _value(raw: str, key: str, lineno: int):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if not raw:
            raise ConfigError(f"line {lineno}: empty value for {key!r}") from None
        return raw


@dataclass
class Descriptor:
    values: dict = field(default_factory=dict)
    source: str = "<inline>"

    @classmethod
    def parse(cls, text: str, source: str = "<inline>") -> Descriptor:
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = _value(raw, key, lineno)
        return cls(values, source)

    @classmethod
    def load(cls, spec: str) -> Descriptor:
        """Read a descriptor file; a bare group name such as ``heisenberg`` is accepted too."""
        if os.path.isfile(spec):
            with open(spec, encoding="utf-8") as fh:
                return cls.parse(fh.read(), spec)
        try:
            group_from_name(spec)
        except ConfigError:
            raise ConfigError(f"descriptor {spec!r} is neither a file nor a group name") from None
        return cls({"label": spec.strip()}, spec)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def to_dict(self) -> dict:
        return dict(sorted(self.values.items()))

    # builders ------------------------------------------------------------

    def group(self) -> CarnotGroup:
        label = self.values.get("label")
        rank, step = self.values.get("rank"), self.values.get("step")
        if label is not None and rank is None and step is None:
            return group_from_name(str(label))
        if rank is None or step is None:
            raise ConfigError("descriptor needs a group label or both rank and step")
        if not isinstance(rank, int) or not isinstance(step, int):
            raise ConfigError("rank and step must be integers")
        # hall_basis enforces the supported range
        grp = free_carnot(rank, step)
        if label is None:
            return grp
        try:
            named = group_from_name(str(label))
        except ConfigError:
            return _group_from_key(rank, step, str(label))  # free-text label
        if (named.rank, named.step) != (rank, step):
            raise ConfigError(f"label {label!r} contradicts rank={rank}, step={step}")
        return named

    def norm(self, group: CarnotGroup | None = None) -> HomogeneousNorm:
        kind = self.values.get("norm")
        weights = self.values.get("layer_weights", [])
        if not isinstance(weights, list):
            raise ConfigError("layer_weights must be a list such as [1, 1]")
        if kind is None:
            base = default_norm(group) if group is not None else HomogeneousNorm()
            return HomogeneousNorm(base.kind, tuple(weights))
        return HomogeneousNorm(str(kind), tuple(float(w) for w in weights))

    @property
    def is_space(self) -> bool:
        return "lp" in self.values or "component" in self.values or self.values.get("sum") == "c0"

    def space(self) -> LpSpace:
        p = self.values.get("lp", 1)
        if not isinstance(p, (int, float)):
            raise ConfigError("lp must be a number")
        kind = str(self.values.get("sum", "lp"))
        truncation = self.values.get("truncation", 8)
        if not isinstance(truncation, int):
            raise ConfigError("truncation must be an integer")
        comp = str(self.values.get("component", "")).strip()
        if comp == "free_tower":
            return LpSpace.free_tower(p, truncation, kind)
        group = group_from_name(comp) if comp else self.group()
        return LpSpace.constant(group, p, truncation, self.norm(group), kind)

    def grid_bounds(self, dim: int):
        b = self.values.get("bounds", 1.0)
        if isinstance(b, (int, float)):
            return tuple((-float(b), float(b)) for _ in range(dim))
        if isinstance(b, list) and len(b) == dim and all(isinstance(x, list) and len(x) == 2 for x in b):
            return tuple((float(lo), float(hi)) for lo, hi in b)
        raise ConfigError(f"bounds must be a half-width or {dim} [lo, hi] pairs")

    def shape_params(self) -> dict:
        keys = GRID_KEYS - {"shape", "resolution", "bounds"}
        return {k: v for k, v in self.values.items() if k in keys}
