"""Flat torus / box domains in one or two dimensions.

All balls are closed. On the torus, distances wrap coordinate-wise, and the
ball around ``z`` is the Euclidean ball clipped to the fundamental cell
centred at ``z`` (for ``r`` up to half a side this is the whole Euclidean
ball). On the box, balls are simply intersected with the box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels


@dataclass(frozen=True)
class Domain:
    kind: str
    lengths: tuple

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise ValueError(f"domain kind must be 'torus' or 'box', got {self.kind!r}")
        lengths = tuple(float(x) for x in self.lengths)
        if len(lengths) not in (1, 2):
            raise ValueError(f"only dimensions 1 and 2 are supported, got {len(lengths)}")
        if any(not (x > 0 and math.isfinite(x)) for x in lengths):
            raise ValueError(f"side lengths must be positive and finite, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def torus(cls, *lengths: float) -> "Domain":
        return cls("torus", lengths)

    @classmethod
    def box(cls, *lengths: float) -> "Domain":
        return cls("box", lengths)

    @classmethod
    def square_torus(cls, side: float, dim: int = 2) -> "Domain":
        return cls("torus", (side,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def L(self) -> np.ndarray:
        return np.array(self.lengths, dtype=np.float64)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def wrap(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        if not self.periodic:
            return p
        return np.mod(p, self.L)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= 0.0) & (p <= self.L), axis=-1)

    def uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.random((size, self.dim)) * self.L

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lengths": list(self.lengths)}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(d["kind"], tuple(d["lengths"]))


def _check_dim(points: np.ndarray, dom: Domain) -> None:
    if points.shape[-1] != dom.dim:
        raise ValueError(f"point dimension {points.shape[-1]} does not match domain dimension {dom.dim}")


def displacement(a, b, dom: Domain) -> np.ndarray:
    """Coordinate-wise |a - b|, wrapped on the torus."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    _check_dim(a, dom)
    _check_dim(b, dom)
    diff = np.abs(a - b)
    if dom.periodic:
        diff = np.mod(diff, dom.L)
        diff = np.minimum(diff, dom.L - diff)
    return diff


def distance(a, b, dom: Domain):
    """Distance between points (broadcast over leading axes)."""
    diff = displacement(a, b, dom)
    out = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(out) if out.ndim == 0 else out


def sq_distances(points, center, dom: Domain) -> np.ndarray:
    """Squared distances from an ``(n, d)`` array of in-domain points to ``center``."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, dom.dim)
    c = np.asarray(center, dtype=np.float64).reshape(dom.dim)
    return kernels.sq_distances(pts, c, dom.L, dom.periodic)


def in_ball(points, center, r: float, dom: Domain) -> np.ndarray:
    return sq_distances(points, center, dom) <= r * r


# --------------------------------------------------------------------------
# ball volumes


def _half_disk_primitive(x: float, r: float) -> float:
    # antiderivative of sqrt(r^2 - x^2)
    x = min(max(x, -r), r)
    s = math.sqrt(max(r * r - x * x, 0.0))
    return 0.5 * (x * s + r * r * math.asin(x / r))


def _disk_corner_area(x0: float, y0: float, r: float) -> float:
    """Area of {|p| <= r, p_x <= x0, p_y <= y0} for the centred disk."""
    if y0 <= -r or x0 <= -r:
        return 0.0
    X = min(x0, r)
    base = _half_disk_primitive(-r, r)

    def S(x):
        return _half_disk_primitive(x, r) - base

    if y0 >= r:
        return 2.0 * S(X)
    w = math.sqrt(r * r - y0 * y0)
    m = min(max(X, -w), w)
    if y0 >= 0.0:
        return 2.0 * S(X) - (S(m) - S(-w)) + y0 * (m + w)
    if X <= -w:
        return 0.0
    return S(m) - S(-w) + y0 * (m + w)


def clipped_ball_volume(r: float, lo: Sequence[float], hi: Sequence[float]) -> float:
    """Volume of the centred closed ball of radius ``r`` intersected with the box ``[lo, hi]``."""
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    if r <= 0.0 or any(h <= l for l, h in zip(lo, hi)):
        return 0.0
    if len(lo) == 1:
        return max(0.0, min(r, hi[0]) - max(-r, lo[0]))
    if all(-l >= r and h >= r for l, h in zip(lo, hi)):
        return math.pi * r * r
    corners = [(x, y) for x in (lo[0], hi[0]) for y in (lo[1], hi[1])]
    if all(x * x + y * y <= r * r for x, y in corners):
        return (hi[0] - lo[0]) * (hi[1] - lo[1])
    area = (
        _disk_corner_area(hi[0], hi[1], r)
        - _disk_corner_area(lo[0], hi[1], r)
        - _disk_corner_area(hi[0], lo[1], r)
        + _disk_corner_area(lo[0], lo[1], r)
    )
    return max(area, 0.0)


def unit_ball_volume(dim: int) -> float:
    return 2.0 if dim == 1 else math.pi


def ball_volume(z, r: float, dom: Domain) -> float:
    """Lebesgue measure of ``{x in dom : distance(x, z) <= r}``."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    _check_dim(z, dom)
    if r <= 0.0:
        return 0.0
    if dom.periodic:
        half = dom.L / 2.0
        return min(clipped_ball_volume(r, -half, half), dom.volume)
    return min(clipped_ball_volume(r, -z, dom.L - z), dom.volume)


def _box_pieces_relative(z: np.ndarray, box_lo: np.ndarray, box_hi: np.ndarray, dom: Domain):
    """Split ``[box_lo, box_hi] - z`` into boxes inside the cell centred at the origin."""
    if not dom.periodic:
        lo = np.maximum(box_lo, 0.0) - z
        hi = np.minimum(box_hi, dom.L) - z
        return [(lo, hi)]
    L = dom.L
    per_axis = []
    for a in range(dom.dim):
        length = box_hi[a] - box_lo[a]
        if length >= L[a]:
            per_axis.append([(-L[a] / 2, L[a] / 2)])
            continue
        start = (box_lo[a] - z[a] + L[a] / 2) % L[a] - L[a] / 2
        stop = start + length
        if stop <= L[a] / 2:
            per_axis.append([(start, stop)])
        else:
            per_axis.append([(start, L[a] / 2), (-L[a] / 2, stop - L[a])])
    pieces = []
    if dom.dim == 1:
        for (l0, h0) in per_axis[0]:
            pieces.append((np.array([l0]), np.array([h0])))
    else:
        for (l0, h0) in per_axis[0]:
            for (l1, h1) in per_axis[1]:
                pieces.append((np.array([l0, l1]), np.array([h0, h1])))
    return pieces


def ball_box_volume(z, r: float, box_lo, box_hi, dom: Domain) -> float:
    """Volume of ``B(z, r) ∩ [box_lo, box_hi]`` with the box given in domain coordinates."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    box_lo = np.asarray(box_lo, dtype=np.float64).reshape(-1)
    box_hi = np.asarray(box_hi, dtype=np.float64).reshape(-1)
    _check_dim(z, dom)
    if r <= 0.0:
        return 0.0
    total = 0.0
    for lo, hi in _box_pieces_relative(z, box_lo, box_hi, dom):
        if dom.periodic:
            lo = np.maximum(lo, -dom.L / 2)
            hi = np.minimum(hi, dom.L / 2)
        total += clipped_ball_volume(r, lo, hi)
    return total


# --------------------------------------------------------------------------
# sampling


def _euclidean_ball_offsets(rng: np.random.Generator, r: float, dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return (r * (2.0 * rng.random(n) - 1.0)).reshape(n, 1)
    w = rng.random((2, n))
    rho = r * np.sqrt(w[0])
    phi = 2.0 * math.pi * w[1]
    out = np.empty((n, 2))
    out[:, 0] = rho * np.cos(phi)
    out[:, 1] = rho * np.sin(phi)
    return out


def sample_uniform_ball(z, r: float, dom: Domain, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Uniform point(s) in ``B(z, r) ∩ dom`` by rejection from the unclipped ball."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    _check_dim(z, dom)
    n = 1 if size is None else int(size)
    if r <= 0.0:
        out = np.repeat(z[None, :], n, axis=0)
        return out[0] if size is None else out
    half = dom.L / 2.0
    if dom.periodic and r < half.min():
        # the whole Euclidean ball fits in the cell: no rejection needed
        out = np.mod(z + _euclidean_ball_offsets(rng, r, dom.dim, n), dom.L)
        return out[0] if size is None else out
    chunks = []
    filled = 0
    while filled < n:
        need = n - filled
        off = _euclidean_ball_offsets(rng, r, dom.dim, max(need, 8))
        if dom.periodic:
            ok = np.all((off >= -half) & (off < half), axis=1)
            pts = np.mod(z + off[ok], dom.L)
        else:
            pts = z + off
            pts = pts[np.all((pts >= 0.0) & (pts <= dom.L), axis=1)]
        pts = pts[:need]
        chunks.append(pts)
        filled += len(pts)
    out = np.concatenate(chunks, axis=0)
    return out[0] if size is None else out


def sample_uniform_balls(centers, radii, dom: Domain, rng: np.random.Generator) -> np.ndarray:
    """One uniform point in each ``B(centers[i], radii[i]) ∩ dom`` (vectorised rejection)."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, dom.dim)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    out = centers.copy()
    todo = np.flatnonzero(radii > 0.0)
    half = dom.L / 2.0
    while todo.size:
        off = _euclidean_ball_offsets(rng, 1.0, dom.dim, todo.size) * radii[todo, None]
        if dom.periodic:
            ok = np.all((off >= -half) & (off < half), axis=1)
            out[todo[ok]] = np.mod(centers[todo[ok]] + off[ok], dom.L)
        else:
            pts = centers[todo] + off
            ok = np.all((pts >= 0.0) & (pts <= dom.L), axis=1)
            out[todo[ok]] = pts[ok]
        todo = todo[~ok]
    return out
