"""Poisson environments of reproduction events.

An environment is the time-sorted list of events ``(t, z, r, u)`` falling in a
space-time window, optionally extended by a parental location ``y`` and a
parental label ``l`` per event, together with a uniform-grid index that
answers "which events cover this point during (t0, t1]" queries.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate, special

from . import geometry, kernels
from .geometry import Domain
from .seeding import SeedKey, as_key

VARIANTS = ("ball", "gaussian", "multi_parent_ball")
HEADER_TAG = "# slfvlab-environment"


@dataclass(frozen=True)
class EventModel:
    """Law of the marks of a single event.

    ``rate`` is the number of events per unit volume per unit time. For the
    ball variants the radius law is a finite mixture ``radii``/``radius_weights``
    and the impact law is a point mass (``impact_kind="fixed"``) or a Beta law.
    For the gaussian variant ``u0``, ``theta2`` (θ²), ``alpha`` and the
    truncation radius in multiples of θ describe the killing/parent kernels.
    """

    variant: str = "ball"
    rate: float = 1.0
    radii: tuple = (1.0,)
    radius_weights: tuple = (1.0,)
    impact_kind: str = "fixed"
    impact_value: float = 0.5
    beta_a: float = 1.0
    beta_b: float = 1.0
    r_max: Optional[float] = None
    u0: float = 1.0
    theta2: float = 1.0
    alpha: float = 1.0
    truncation: float = 5.0
    offspring_weights: tuple = (1.0,)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown event model variant {self.variant!r}")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be finite and non-negative, got {self.rate}")
        radii = tuple(float(r) for r in self.radii)
        weights = tuple(float(w) for w in self.radius_weights)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "radius_weights", weights)
        object.__setattr__(self, "offspring_weights", tuple(float(w) for w in self.offspring_weights))
        if self.variant == "gaussian":
            if not 0.0 < self.u0 <= 1.0:
                raise ValueError(f"u0 must lie in (0, 1], got {self.u0}")
            if not self.theta2 > 0 or not self.alpha > 0 or not self.truncation > 0:
                raise ValueError("theta2, alpha and truncation must be positive")
            return
        if len(radii) == 0 or len(radii) != len(weights):
            raise ValueError("radii and radius_weights must be non-empty and of equal length")
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("radius weights must be non-negative with positive sum")
        if any(not r > 0 for r in radii):
            raise ValueError(f"radii must be positive, got {radii}")
        if self.impact_kind == "fixed":
            if not 0.0 <= self.impact_value <= 1.0:
                raise ValueError(f"impact must lie in [0, 1], got {self.impact_value}")
        elif self.impact_kind == "beta":
            if not (self.beta_a > 0 and self.beta_b > 0):
                raise ValueError("beta impact parameters must be positive")
        else:
            raise ValueError(f"impact_kind must be 'fixed' or 'beta', got {self.impact_kind!r}")
        if self.variant == "multi_parent_ball":
            ow = self.offspring_weights
            if len(ow) == 0 or any(w < 0 for w in ow) or sum(ow) <= 0:
                raise ValueError("offspring_weights must be non-negative with positive sum")

    # ---- constructors

    @classmethod
    def ball(cls, rate: float, radius: float = 1.0, impact: float = 0.5, **kw) -> "EventModel":
        return cls(variant="ball", rate=rate, radii=(radius,), radius_weights=(1.0,),
                   impact_kind="fixed", impact_value=impact, **kw)

    @classmethod
    def gaussian(cls, rate: float, u0: float, theta2: float, alpha: float = 1.0, truncation: float = 5.0) -> "EventModel":
        return cls(variant="gaussian", rate=rate, u0=u0, theta2=theta2, alpha=alpha, truncation=truncation)

    @classmethod
    def multi_parent(cls, rate: float, radius: float, impact: float, offspring_weights: Sequence[float]) -> "EventModel":
        return cls(variant="multi_parent_ball", rate=rate, radii=(radius,), radius_weights=(1.0,),
                   impact_kind="fixed", impact_value=impact, offspring_weights=tuple(offspring_weights))

    # ---- derived quantities

    @property
    def theta(self) -> float:
        return math.sqrt(self.theta2)

    @property
    def radius_bound(self) -> float:
        """Largest radius the radius law can produce (ball variants)."""
        if self.variant == "gaussian":
            return self.theta
        bound = max(self.radii) if self.r_max is None else float(self.r_max)
        if not math.isfinite(bound):
            raise ValueError("radius law must have a finite r_max")
        if any(r > bound for r in self.radii):
            raise ValueError(f"radius {max(self.radii)} exceeds r_max={bound}")
        return bound

    @property
    def reach_max(self) -> float:
        """Largest distance at which an event can touch a point."""
        if self.variant == "gaussian":
            return self.truncation * self.theta
        return self.radius_bound

    @property
    def probabilities(self) -> np.ndarray:
        w = np.array(self.radius_weights, dtype=np.float64)
        return w / w.sum()

    @property
    def mean_impact(self) -> float:
        if self.variant == "gaussian":
            return self.u0
        if self.impact_kind == "fixed":
            return self.impact_value
        return self.beta_a / (self.beta_a + self.beta_b)

    @property
    def charges_unit_impact(self) -> bool:
        """Whether ``ν_r({1}) > 0`` for some radius in the support."""
        if self.variant == "gaussian":
            return self.u0 >= 1.0
        return self.impact_kind == "fixed" and self.impact_value >= 1.0

    @property
    def max_parents(self) -> int:
        return len(self.offspring_weights) if self.variant == "multi_parent_ball" else 1

    def sample_marks(self, rng: np.random.Generator, n: int):
        """Radii, impacts and (multi-parent only) parent counts for ``n`` events."""
        if self.variant == "gaussian":
            return np.full(n, self.theta), np.full(n, self.u0), None
        p = self.probabilities
        if len(p) == 1:
            r = np.full(n, self.radii[0])
        else:
            r = np.asarray(self.radii)[rng.choice(len(p), size=n, p=p)]
        if self.impact_kind == "fixed":
            u = np.full(n, self.impact_value)
        else:
            u = rng.beta(self.beta_a, self.beta_b, size=n)
        n_parents = None
        if self.variant == "multi_parent_ball":
            ow = np.array(self.offspring_weights)
            n_parents = 1 + rng.choice(len(ow), size=n, p=ow / ow.sum())
        return r, u, n_parents

    def reach(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return self.truncation * r if self.variant == "gaussian" else r

    def impact_at(self, r: float, u: float, sq_dist) -> np.ndarray:
        """Probability that an individual at squared distance ``sq_dist`` is replaced."""
        sq_dist = np.asarray(sq_dist, dtype=np.float64)
        if self.variant == "gaussian":
            reach = self.truncation * r
            return np.where(sq_dist <= reach * reach, u * np.exp(-sq_dist / (2.0 * r * r)), 0.0)
        return np.where(sq_dist <= r * r, u, 0.0)

    def sample_parent_location(self, z, r: float, dom: Domain, rng: np.random.Generator, size: Optional[int] = None):
        """Location of the parent: uniform in the ball, or drawn from ``v(z, .)``."""
        if self.variant != "gaussian":
            return geometry.sample_uniform_ball(z, r, dom, rng, size)
        return sample_gaussian_kernel(z, self.alpha * r, dom, rng, size)

    def sample_offspring_location(self, z, r: float, dom: Domain, rng: np.random.Generator, size: Optional[int] = None):
        """Where a replaced individual lands.

        Ball variants: uniform in the ball. Gaussian: the truncated killing
        profile ``u(z, .)`` normalised, i.e. a Gaussian of scale θ cut at the
        truncation radius, which keeps Lebesgue measure invariant.
        """
        if self.variant != "gaussian":
            return geometry.sample_uniform_ball(z, r, dom, rng, size)
        return sample_gaussian_kernel(z, r, dom, rng, size, cutoff=self.truncation * r)

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "rate": self.rate}
        if self.variant == "gaussian":
            d.update(u0=self.u0, theta2=self.theta2, alpha=self.alpha, truncation=self.truncation)
            return d
        d.update(radii=list(self.radii), radius_weights=list(self.radius_weights), impact_kind=self.impact_kind)
        if self.impact_kind == "fixed":
            d["impact_value"] = self.impact_value
        else:
            d.update(beta_a=self.beta_a, beta_b=self.beta_b)
        if self.r_max is not None:
            d["r_max"] = self.r_max
        if self.variant == "multi_parent_ball":
            d["offspring_weights"] = list(self.offspring_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventModel":
        kw = dict(d)
        for key in ("radii", "radius_weights", "offspring_weights"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def sample_gaussian_kernel(z, scale: float, dom: Domain, rng: np.random.Generator,
                           size: Optional[int] = None, cutoff: float = math.inf) -> np.ndarray:
    """Draw from the isotropic Gaussian of standard deviation ``scale`` centred at ``z``.

    Wrapped on the torus, conditioned to the domain on the box; ``cutoff``
    truncates the radial law.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    n = 1 if size is None else int(size)
    chunks, filled = [], 0
    while filled < n:
        need = n - filled
        off = rng.normal(0.0, scale, size=(max(need, 8), dom.dim))
        if math.isfinite(cutoff):
            off = off[np.sum(off * off, axis=1) <= cutoff * cutoff]
        pts = z + off
        if dom.periodic:
            pts = np.mod(pts, dom.L)
        else:
            pts = pts[np.all((pts >= 0.0) & (pts <= dom.L), axis=1)]
        pts = pts[:need]
        chunks.append(pts)
        filled += len(pts)
    out = np.concatenate(chunks, axis=0)
    return out[0] if size is None else out


@dataclass(frozen=True)
class Event:
    t: float
    z: np.ndarray
    r: float
    u: float
    y: Optional[np.ndarray] = None
    l: Optional[float] = None
    n_parents: Optional[int] = None
    index: int = -1


class GridIndex:
    """Uniform grid over the domain; each cell lists the events whose reach meets it."""

    def __init__(self, dom: Domain, z: np.ndarray, reach: np.ndarray, reach_max: float):
        self.domain = dom
        L = dom.L
        cells = []
        for a in range(dom.dim):
            m = int(L[a] // reach_max) if reach_max > 0 else 1
            cells.append(min(max(m, 1), 512))
        self.shape = tuple(cells)
        self.cell_size = L / np.array(cells)
        n_cells = int(np.prod(cells))
        buckets = [[] for _ in range(n_cells)]
        for i in range(len(z)):
            for c in self._cells_touching(z[i], reach[i]):
                buckets[c].append(i)
        counts = np.array([len(b) for b in buckets], dtype=np.int64)
        self.cell_start = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.cell_items = (np.concatenate([np.asarray(b, dtype=np.int64) for b in buckets])
                           if counts.sum() else np.zeros(0, dtype=np.int64))

    def _axis_cells(self, a: int, lo: float, hi: float):
        m = self.shape[a]
        c = self.cell_size[a]
        i0 = int(math.floor(lo / c))
        i1 = int(math.floor(hi / c))
        if self.domain.periodic:
            if i1 - i0 + 1 >= m:
                return range(m)
            return sorted({i % m for i in range(i0, i1 + 1)})
        return range(max(i0, 0), min(i1, m - 1) + 1)

    def _cells_touching(self, z, reach):
        axes = [self._axis_cells(a, z[a] - reach, z[a] + reach) for a in range(self.domain.dim)]
        if self.domain.dim == 1:
            return list(axes[0])
        m1 = self.shape[1]
        return [i * m1 + j for i in axes[0] for j in axes[1]]

    def cell_of(self, x: np.ndarray) -> int:
        idx = 0
        for a in range(self.domain.dim):
            i = int(x[a] // self.cell_size[a])
            i = min(max(i, 0), self.shape[a] - 1)
            idx = idx * self.shape[a] + i
        return idx


class Environment:
    """Immutable event configuration on ``(t_begin, t_end] × domain``."""

    def __init__(self, domain: Domain, model: EventModel, window: tuple, t, z, r, u,
                 y=None, l=None, n_parents=None, seed_key: Optional[SeedKey] = None):
        self.domain = domain
        self.model = model
        self.t_begin, self.t_end = float(window[0]), float(window[1])
        if not self.t_end > self.t_begin:
            raise ValueError(f"window duration must be positive, got {window}")
        self.t = _frozen(np.asarray(t, dtype=np.float64).reshape(-1))
        n = len(self.t)
        self.z = _frozen(np.asarray(z, dtype=np.float64).reshape(n, domain.dim))
        self.r = _frozen(np.asarray(r, dtype=np.float64).reshape(n))
        self.u = _frozen(np.asarray(u, dtype=np.float64).reshape(n))
        self.y = None if y is None else _frozen(np.asarray(y, dtype=np.float64).reshape(n, domain.dim))
        self.l = None if l is None else _frozen(np.asarray(l, dtype=np.float64).reshape(n))
        self.n_parents = None if n_parents is None else _frozen(np.asarray(n_parents, dtype=np.int64).reshape(n))
        self.seed_key = seed_key
        if n and (np.any(np.diff(self.t) < 0) or self.t[0] <= self.t_begin or self.t[-1] > self.t_end):
            raise ValueError("event times must be sorted and inside the window")
        self.reach = _frozen(model.reach(self.r))
        self._reach2 = _frozen(self.reach * self.reach)
        reach_max = float(self.reach.max()) if n else model.reach_max
        self.index = GridIndex(domain, self.z, self.reach, max(reach_max, 1e-12))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def window(self) -> tuple:
        return (self.t_begin, self.t_end)

    @property
    def marked(self) -> bool:
        return self.y is not None and self.l is not None

    def event(self, i: int) -> Event:
        return Event(
            t=float(self.t[i]), z=self.z[i], r=float(self.r[i]), u=float(self.u[i]),
            y=None if self.y is None else self.y[i],
            l=None if self.l is None else float(self.l[i]),
            n_parents=None if self.n_parents is None else int(self.n_parents[i]),
            index=int(i),
        )

    def events_between(self, t0: float, t1: float) -> np.ndarray:
        """Ids of all events with ``t0 < t <= t1``."""
        lo = np.searchsorted(self.t, t0, side="right")
        hi = np.searchsorted(self.t, t1, side="right")
        return np.arange(lo, hi, dtype=np.int64)

    def with_marks(self, y, l) -> "Environment":
        return Environment(self.domain, self.model, self.window, self.t, self.z, self.r, self.u,
                           y=y, l=l, n_parents=self.n_parents, seed_key=self.seed_key)

    def digest(self) -> str:
        buf = io.StringIO()
        write_environment(self, buf)
        return hashlib.sha256(buf.getvalue().encode("ascii")).hexdigest()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# operations


def generate_environment(model: EventModel, window: tuple, dom: Domain, seed_key) -> Environment:
    """Poisson configuration of events with intensity ``rate · dt ⊗ dz ⊗ marks``."""
    key = as_key(seed_key)
    t0, t1 = float(window[0]), float(window[1])
    if not t1 > t0:
        raise ValueError(f"window duration must be positive, got {window}")
    model.reach_max  # rejects unbounded radius laws
    rng = key.child("environment").rng()
    n = int(rng.poisson(model.rate * (t1 - t0) * dom.volume))
    times = t0 + (t1 - t0) * rng.random(n)
    # an exact draw of t0 would fall outside (t0, t1]
    times = np.where(times <= t0, np.nextafter(t0, math.inf), times)
    order = np.argsort(times, kind="stable")
    times = times[order]
    centers = dom.uniform(rng, n)
    r, u, n_parents = model.sample_marks(rng, n)
    return Environment(dom, model, (t0, t1), times, centers, r, u, n_parents=n_parents, seed_key=key)


def extend_with_parents(env: Environment, seed_key) -> Environment:
    """Mark each event with a uniform parental location ``y`` in its ball and a uniform label ``l``."""
    if env.model.variant == "gaussian":
        raise ValueError("parental marks are only defined for ball-shaped events")
    rng = as_key(seed_key).child("marks").rng()
    labels = rng.random(len(env))
    y = geometry.sample_uniform_balls(env.z, env.r, env.domain, rng)
    return env.with_marks(y, labels)


def _check_window(env: Environment, t0: float, t1: float) -> None:
    eps = 1e-12 * max(1.0, abs(env.t_begin), abs(env.t_end))
    if t0 > t1 or t0 < env.t_begin - eps or t1 > env.t_end + eps:
        raise ValueError(f"query interval ({t0}, {t1}] is not inside the environment window {env.window}")


def events_covering(x, t0: float, t1: float, env: Environment) -> np.ndarray:
    """Ids (time-ascending) of events with ``t0 < t <= t1`` whose reach contains ``x``."""
    _check_window(env, t0, t1)
    x = np.asarray(x, dtype=np.float64).reshape(env.domain.dim)
    if len(env) == 0:
        return np.zeros(0, dtype=np.int64)
    idx = env.index
    c = idx.cell_of(x)
    return kernels.query_cell(
        x, float(t0), float(t1), idx.cell_start[c], idx.cell_start[c + 1], idx.cell_items,
        env.t, env.z, env._reach2, env.domain.L, env.domain.periodic,
    )


def events_covering_bruteforce(x, t0: float, t1: float, env: Environment) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    ids = env.events_between(t0, t1)
    if ids.size == 0:
        return ids
    d = geometry.distance(env.z[ids], x, env.domain)
    return ids[np.atleast_1d(d) <= env.reach[ids]]


def _gaussian_mass(x, model: EventModel, dom: Domain) -> float:
    """∫ exp(-|x - z|²/2θ²) dz over the truncated ball around ``x`` inside the domain."""
    theta = model.theta
    R = model.truncation * theta
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if dom.periodic and np.all(R <= dom.L / 2):
        if dom.dim == 1:
            return math.sqrt(2 * math.pi) * theta * math.erf(R / (math.sqrt(2) * theta))
        return 2 * math.pi * theta * theta * (1.0 - math.exp(-R * R / (2 * theta * theta)))
    if dom.periodic:
        lo, hi = -dom.L / 2, dom.L / 2
    else:
        lo, hi = -x, dom.L - x
    s2 = math.sqrt(2.0) * theta

    def seg(a, b):
        return theta * math.sqrt(math.pi / 2) * (special.erf(b / s2) - special.erf(a / s2))

    if dom.dim == 1:
        return seg(max(lo[0], -R), min(hi[0], R))

    def inner(px):
        s = math.sqrt(max(R * R - px * px, 0.0))
        a, b = max(-s, lo[1]), min(s, hi[1])
        return math.exp(-px * px / (2 * theta * theta)) * seg(a, b) if b > a else 0.0

    a0, b0 = max(lo[0], -R), min(hi[0], R)
    if b0 <= a0:
        return 0.0
    return integrate.quad(inner, a0, b0, epsabs=0.0, epsrel=1e-11, limit=200)[0]


def jump_rate(x, model: EventModel, dom: Domain) -> float:
    """Rate at which a single lineage sitting at ``x`` is affected by an event."""
    if model.variant == "gaussian":
        return model.rate * model.u0 * _gaussian_mass(x, model, dom)
    mean_u = model.mean_impact
    if mean_u == 0.0 or model.rate == 0.0:
        return 0.0
    total = 0.0
    for r, p in zip(model.radii, model.probabilities):
        total += p * geometry.ball_volume(x, r, dom)
    return model.rate * mean_u * total


def integrability_value(model: EventModel, dom: Domain) -> float:
    """``rate · E[u r^d]``, the finiteness condition on the event law."""
    d = dom.dim
    if model.variant == "gaussian":
        return model.rate * model.u0 * model.theta ** d
    r = np.asarray(model.radii)
    return float(model.rate * model.mean_impact * np.sum(model.probabilities * r ** d))


# --------------------------------------------------------------------------
# text serialisation


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_environment(env: Environment, dest: Union[str, Path, io.TextIOBase]) -> None:
    """Header line (JSON) followed by one ``t z... r u [y... l] [n]`` record per event."""
    columns = ["t"] + [f"z{a}" for a in range(env.domain.dim)] + ["r", "u"]
    if env.marked:
        columns += [f"y{a}" for a in range(env.domain.dim)] + ["l"]
    if env.n_parents is not None:
        columns += ["n_parents"]
    header = {
        "domain": env.domain.to_dict(),
        "model": env.model.to_dict(),
        "window": [_fmt(env.t_begin), _fmt(env.t_end)],
        "columns": columns,
        "count": len(env),
        "seed": None if env.seed_key is None else {"master": env.seed_key.master, "path": list(env.seed_key.path)},
    }
    lines = [HEADER_TAG + " " + json.dumps(header, sort_keys=True)]
    for i in range(len(env)):
        rec = [_fmt(env.t[i])] + [_fmt(v) for v in env.z[i]] + [_fmt(env.r[i]), _fmt(env.u[i])]
        if env.marked:
            rec += [_fmt(v) for v in env.y[i]] + [_fmt(env.l[i])]
        if env.n_parents is not None:
            rec.append(str(int(env.n_parents[i])))
        lines.append(" ".join(rec))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="ascii")
    else:
        dest.write(text)


def read_environment(src: Union[str, Path, io.TextIOBase]) -> Environment:
    text = Path(src).read_text(encoding="ascii") if isinstance(src, (str, Path)) else src.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(HEADER_TAG):
        raise ValueError("not an environment file: missing header line")
    header = json.loads(lines[0][len(HEADER_TAG):])
    dom = Domain.from_dict(header["domain"])
    model = EventModel.from_dict(header["model"])
    cols = header["columns"]
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if len(rows) != header["count"]:
        raise ValueError(f"expected {header['count']} records, found {len(rows)}")
    for k, row in enumerate(rows):
        if len(row) != len(cols):
            raise ValueError(f"record {k + 1} has {len(row)} fields, expected {len(cols)}")
    data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64).reshape(len(rows), len(cols))
    col = {name: j for j, name in enumerate(cols)}
    d = dom.dim
    z = data[:, [col[f"z{a}"] for a in range(d)]]
    y = data[:, [col[f"y{a}"] for a in range(d)]] if "l" in col else None
    l = data[:, col["l"]] if "l" in col else None
    npar = data[:, col["n_parents"]].astype(np.int64) if "n_parents" in col else None
    seed = header.get("seed")
    key = None if seed is None else SeedKey(seed["master"], tuple(seed["path"]))
    window = tuple(float(v) for v in header["window"])
    return Environment(dom, model, window, data[:, col["t"]], z, data[:, col["r"]], data[:, col["u"]],
                       y=y, l=l, n_parents=npar, seed_key=key)
