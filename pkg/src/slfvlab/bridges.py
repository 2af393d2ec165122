"""Bridges at a single site: family fractions carried by the events that hit it.

A bridge is ``w ↦ p0·w + Σ p_i·1[l_i ≤ w]`` with ``p0 + Σ p_i = 1``. Jumps are
stored newest first, which is the order they come out of :func:`compose`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .environment import Environment, events_covering

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Bridge:
    p0: float
    labels: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.float64).reshape(-1)
        masses = np.array(self.masses, dtype=np.float64).reshape(-1)
        if labels.shape != masses.shape:
            raise ValueError("labels and masses must have the same length")
        if not 0.0 <= self.p0 <= 1.0 + MASS_TOL:
            raise ValueError(f"slope must lie in [0, 1], got {self.p0}")
        if np.any((labels < 0) | (labels > 1)) or np.any(masses < 0):
            raise ValueError("labels must lie in [0, 1] and masses must be non-negative")
        if abs(self.p0 + masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"bridge masses do not sum to one: {self.p0 + masses.sum()}")
        labels.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "p0", float(self.p0))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "masses", masses)

    def __len__(self) -> int:
        return len(self.labels)

    def __call__(self, w):
        w = np.asarray(w, dtype=np.float64)
        flat = w.reshape(-1)
        out = self.p0 * flat
        if len(self):
            out = out + (flat[:, None] >= self.labels[None, :]) @ self.masses
        out = out.reshape(w.shape)
        return float(out) if out.ndim == 0 else out

    @property
    def mass_defect(self) -> float:
        return abs(self.p0 + float(self.masses.sum()) - 1.0)

    def to_dict(self) -> dict:
        return {"p0": self.p0, "jumps": [{"l": float(l), "p": float(p)} for l, p in zip(self.labels, self.masses)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Bridge":
        d = json.loads(text)
        jumps = d["jumps"]
        return cls(d["p0"], [j["l"] for j in jumps], [j["p"] for j in jumps])


def identity() -> Bridge:
    return Bridge(1.0, [], [])


def elementary(l: float, u: float) -> Bridge:
    """``b_{l,u}(w) = (1 - u) w + u 1[l ≤ w]``."""
    if not 0.0 <= l <= 1.0:
        raise ValueError(f"label must lie in [0, 1], got {l}")
    if not 0.0 < u <= 1.0:
        raise ValueError(f"impact must lie in (0, 1], got {u}")
    return Bridge(1.0 - u, [l], [u])


def compose(newer: Bridge, older: Bridge) -> Bridge:
    """``newer ⋄ older``: ``w ↦ newer.p0 · older(w) + Σ_newer p_i 1[l_i ≤ w]``."""
    return Bridge(
        newer.p0 * older.p0,
        np.concatenate([newer.labels, older.labels]),
        np.concatenate([newer.masses, newer.p0 * older.masses]),
    )


def build(env: Environment, x, s: float, t: float) -> Bridge:
    """Bridge at ``x`` made of the events hitting ``x`` during ``(s, t]``."""
    if env.l is None:
        raise ValueError("environment has no event labels; call extend_with_parents first")
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    ids = events_covering(x, s, t, env)[::-1]  # newest first
    if ids.size == 0:
        return identity()
    u = env.u[ids]
    keep = np.concatenate([[1.0], np.cumprod(1.0 - u)])
    return Bridge(float(keep[-1]), env.l[ids], u * keep[:-1])


def build_by_folding(env: Environment, x, s: float, t: float) -> Bridge:
    """Same as :func:`build`, one ``compose`` per event (reference implementation)."""
    if env.l is None:
        raise ValueError("environment has no event labels; call extend_with_parents first")
    b = identity()
    for i in events_covering(x, s, t, env):
        if env.u[i] > 0:
            b = compose(elementary(float(env.l[i]), float(env.u[i])), b)
    return b


@dataclass(frozen=True)
class Preimage:
    """Result of :func:`invert`: a jump (``index`` into the bridge) or a continuity point."""

    is_jump: bool
    value: float
    index: int = -1


def _sorted_intervals(b: Bridge):
    # ties in label: older jump first (larger newest-first index)
    order = np.lexsort((-np.arange(len(b)), b.labels))
    masses = b.masses[order]
    before = np.concatenate([[0.0], np.cumsum(masses)[:-1]])
    start = b.p0 * b.labels[order] + before
    return order, start, start + masses, before


def invert_many(b: Bridge, v) -> tuple:
    """Vectorised :func:`invert`: ``(jump_index or -1, value)`` per entry of ``v``."""
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if np.any((v < 0) | (v > 1)):
        raise ValueError("inverted values must lie in [0, 1]")
    idx = np.full(v.shape, -1, dtype=np.int64)
    if len(b) == 0:
        return idx, v.copy()
    order, start, end, before = _sorted_intervals(b)
    k = np.searchsorted(start, v, side="right")
    # endpoints belong to the jump; search backwards over adjacent intervals sharing an endpoint
    cand = k - 1
    hit = (cand >= 0) & (v <= end[np.maximum(cand, 0)])
    idx[hit] = order[cand[hit]]
    value = np.empty(v.shape)
    value[hit] = b.labels[idx[hit]]
    miss = ~hit
    if np.any(miss):
        if b.p0 <= 0.0:
            # only reachable through rounding: snap to the closest jump
            j = np.clip(k[miss], 0, len(b) - 1)
            idx[miss] = order[j]
            value[miss] = b.labels[idx[miss]]
        else:
            cum = np.concatenate([before, [before[-1] + b.masses[order[-1]]]])
            value[miss] = np.clip((v[miss] - cum[k[miss]]) / b.p0, 0.0, 1.0)
    return idx, value


def invert(b: Bridge, v: float) -> Preimage:
    """Preimage of ``v``: the label of the jump whose mass interval holds ``v``, or else the continuity point."""
    idx, value = invert_many(b, [v])
    return Preimage(bool(idx[0] >= 0), float(value[0]), int(idx[0]))
