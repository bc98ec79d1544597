"""Decomposition of 2D/3D sample domains into rectangular patch boxes.

Two plan families are supported:

* type A: a regular ``p_1 x ... x p_d`` grid whose cells are grown by
  ``delta`` positions across every interior boundary, so neighbouring
  patches share a ``2 * delta`` wide band;
* type B (2D only): the nine cells of a 3x3 grid followed by four large
  patches, each spanning a 2x2 block of that grid.

Patches keep every channel; only spatial axes are decomposed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ParameterError, ShapeError, UnsupportedVariantError


@dataclass(frozen=True)
class DomainShape:
    spatial: tuple[int, ...]
    channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "spatial", tuple(int(e) for e in self.spatial))
        if len(self.spatial) not in (2, 3):
            raise ShapeError(f"domain must have 2 or 3 spatial dims, got {self.spatial}")
        if any(e < 1 for e in self.spatial) or self.channels < 1:
            raise ShapeError(f"domain extents must be positive, got {self.spatial} x {self.channels}")

    @property
    def ndim(self):
        return len(self.spatial)

    @property
    def shape(self):
        return (*self.spatial, self.channels)

    @classmethod
    def from_shape(cls, shape):
        """From a per-sample shape ``(*spatial, channels)``."""
        return cls(tuple(shape[:-1]), int(shape[-1]))


@dataclass(frozen=True)
class PatchBox:
    offset: tuple[int, ...]
    size: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(int(o) for o in self.offset))
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        if len(self.offset) != len(self.size):
            raise ShapeError(f"offset {self.offset} and size {self.size} differ in rank")
        if any(o < 0 for o in self.offset) or any(s < 1 for s in self.size):
            raise ShapeError(f"invalid patch box offset={self.offset} size={self.size}")

    @property
    def slices(self):
        return tuple(slice(o, o + s) for o, s in zip(self.offset, self.size))

    @property
    def volume(self):
        return int(np.prod(self.size))

    def contains(self, point):
        return all(o <= q < o + s for q, o, s in zip(point, self.offset, self.size))


@dataclass(frozen=True)
class DecompositionPlan:
    domain: DomainShape
    variant: str
    patches: tuple[PatchBox, ...]
    p: tuple[int, ...] | None = None
    delta: int = 0

    @property
    def n(self):
        return len(self.patches)

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def to_text(self):
        lines = [
            f"domain = {' '.join(map(str, self.domain.shape))}",
            f"variant = {self.variant}",
        ]
        if self.p is not None:
            lines.append(f"p = {' '.join(map(str, self.p))}")
        lines += [f"delta = {self.delta}", f"N = {self.n}"]
        for i, box in enumerate(self.patches):
            lines.append(
                f"patch {i} offset {' '.join(map(str, box.offset))} size {' '.join(map(str, box.size))}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        header, patches = {}, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("patch "):
                tok = line.split()
                try:
                    i_off, i_size = tok.index("offset"), tok.index("size")
                    offset = tuple(int(t) for t in tok[i_off + 1:i_size])
                    size = tuple(int(t) for t in tok[i_size + 1:])
                except ValueError as exc:
                    raise FormatError(f"malformed patch record: {raw!r}") from exc
                patches.append(PatchBox(offset, size))
            elif "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
                header[key] = value
            else:
                raise FormatError(f"unrecognized plan line: {raw!r}")
        try:
            dims = [int(t) for t in header["domain"].split()]
            plan = cls(
                DomainShape(tuple(dims[:-1]), dims[-1]),
                header["variant"],
                tuple(patches),
                tuple(int(t) for t in header["p"].split()) if "p" in header else None,
                int(header.get("delta", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"incomplete plan header: {exc}") from exc
        if "N" in header and int(header["N"]) != plan.n:
            raise FormatError(f"plan declares N={header['N']} but lists {plan.n} patches")
        return plan


def _grid_cells(extent, parts):
    """Split ``[0, extent)`` into ``parts`` cells; the last absorbs the remainder."""
    base = extent // parts
    starts = [i * base for i in range(parts)]
    ends = starts[1:] + [extent]
    return list(zip(starts, ends))


def _as_domain(domain):
    if isinstance(domain, DomainShape):
        return domain
    return DomainShape(tuple(domain))


def plan_type_a(domain, p, delta=0):
    """Regular grid decomposition with overlap ``delta``."""
    domain = _as_domain(domain)
    d = domain.ndim
    if np.isscalar(p):
        p = (int(p),) * d
    p = tuple(int(v) for v in p)
    if len(p) != d:
        raise ParameterError(f"p has {len(p)} entries for a {d}-dimensional domain")
    if any(v < 1 for v in p):
        raise ParameterError(f"p must be positive, got {p}")
    if delta < 0:
        raise ParameterError(f"delta must be nonnegative, got {delta}")
    bases = [e // v for e, v in zip(domain.spatial, p)]
    if min(bases) < 1:
        raise ParameterError(f"p={p} exceeds domain extents {domain.spatial}")
    if delta >= min(bases):
        raise ParameterError(f"delta={delta} must be smaller than the smallest cell extent {min(bases)}")

    per_dim = []
    for e, parts in zip(domain.spatial, p):
        cells = []
        for i, (lo, hi) in enumerate(_grid_cells(e, parts)):
            lo = max(lo - delta, 0) if i > 0 else lo
            hi = min(hi + delta, e) if i < parts - 1 else hi
            cells.append((lo, hi))
        per_dim.append(cells)
    patches = tuple(
        PatchBox(tuple(lo for lo, _ in combo), tuple(hi - lo for lo, hi in combo))
        for combo in itertools.product(*per_dim)
    )
    return DecompositionPlan(domain, "type-a", patches, p, int(delta))


def plan_type_b(domain):
    """Nine 3x3 grid cells followed by four 2x2-block patches (2D only)."""
    domain = _as_domain(domain)
    if domain.ndim != 2:
        raise UnsupportedVariantError("type-B decomposition is defined for 2D domains only")
    if min(domain.spatial) < 3:
        raise ParameterError(f"type-B decomposition needs extents >= 3, got {domain.spatial}")
    small = plan_type_a(domain, (3, 3), 0).patches
    large_dims = []
    for e in domain.spatial:
        b = e // 3
        large_dims.append([(0, 2 * b), (b, e)])
    large = tuple(
        PatchBox(tuple(lo for lo, _ in combo), tuple(hi - lo for lo, hi in combo))
        for combo in itertools.product(*large_dims)
    )
    return DecompositionPlan(domain, "type-b", small + large, None, 0)


def make_plan(domain, variant="type-a", p=2, delta=0):
    if variant in ("type-a", "a", "A"):
        return plan_type_a(domain, p, delta)
    if variant in ("type-b", "b", "B"):
        return plan_type_b(domain)
    raise UnsupportedVariantError(f"unknown decomposition variant {variant!r}")


def extract_patch(sample, box):
    """Sub-tensor of ``sample`` over ``box``, all channels retained.

    ``sample`` is ``[..., *spatial, C]``; any leading axes (for instance a
    batch axis) are carried through, so whole datasets can be cut at once.
    """
    d = len(box.size)
    if sample.ndim < d + 1:
        raise ShapeError(f"sample of shape {sample.shape} has fewer than {d} spatial dims")
    spatial = sample.shape[-d - 1:-1]
    if any(o + s > e for o, s, e in zip(box.offset, box.size, spatial)):
        raise ShapeError(f"box offset={box.offset} size={box.size} exceeds extents {spatial}")
    lead = (slice(None),) * (sample.ndim - d - 1)
    return np.ascontiguousarray(sample[(*lead, *box.slices, slice(None))])


def coverage_map(plan):
    """Number of patches covering each spatial position."""
    counts = np.zeros(plan.domain.spatial, dtype=np.int64)
    for box in plan.patches:
        counts[box.slices] += 1
    return counts


def stitch(patches, plan):
    """Inverse of patch extraction for partitions: place each patch at its offset."""
    first = patches[0]
    d = plan.domain.ndim
    out = np.zeros((*first.shape[:-d - 1], *plan.domain.spatial, first.shape[-1]), dtype=first.dtype)
    lead = (slice(None),) * (first.ndim - d - 1)
    for patch, box in zip(patches, plan.patches):
        out[(*lead, *box.slices, slice(None))] = patch
    return out
