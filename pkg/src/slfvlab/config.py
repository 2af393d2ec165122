"""Flat key/value run configuration (TOML syntax, no tables).

Key names carry their units where a unit applies. Every key is optional;
the defaults below are recorded in each report's parameters, so nothing is
silently assumed.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .environment import EventModel
from .geometry import Domain
from .lookdown import TypeKernel
from .mutation import MutationModel

COMMANDS = ("gen-env", "forward", "backward", "skeleton", "bridge", "duality", "cdi", "variation",
            "lookdown-vs-coalescent", "validate-config",
            # single-oracle checks that have no home in the list above
            "jump-rate", "pair-merge", "poisson", "convergence", "theta")

_NUM = (int, float)
_LIST = (list,)

# key -> (accepted python types, default)
SCHEMA: Dict[str, tuple] = {
    "command": ((str,), None),
    "seed": ((int,), 0),
    "workers": ((int,), 1),
    "replicates": ((int,), 100),
    "environments": ((int,), 100),
    "out": ((str,), "out"),
    "environment_file": ((str,), None),
    # domain
    "domain_kind": ((str,), "torus"),
    "domain_lengths": (_LIST, [10.0, 10.0]),
    # event model
    "model_variant": ((str,), "ball"),
    "rate_per_area_time": (_NUM, 1.0),
    "radius": (_NUM, None),
    "radii": (_LIST, None),
    "radius_weights": (_LIST, None),
    "impact_kind": ((str,), "fixed"),
    "impact": (_NUM, 0.5),
    "impact_beta_a": (_NUM, 1.0),
    "impact_beta_b": (_NUM, 1.0),
    "u0": (_NUM, 1.0),
    "theta2_area": (_NUM, 1.0),
    "parent_scale_alpha": (_NUM, 1.0),
    "truncation_in_theta": (_NUM, 5.0),
    "offspring_weights": (_LIST, [1.0]),
    # mutation
    "mutation": ((str,), "none"),
    "mutation_rate_per_time": (_NUM, 0.0),
    "mutation_target": (_LIST, [0.5, 0.5]),
    "mutation_matrix_per_time": (_LIST, None),
    # initial types
    "kernel": ((str,), "uniform"),
    "kernel_probs": (_LIST, [1.0]),
    "kernel_type": ((int,), 0),
    "kernel_types": ((int,), 2),
    "kernel_left": (_LIST, [1.0, 0.0]),
    "kernel_right": (_LIST, [0.0, 1.0]),
    # times
    "window_start_time": (_NUM, 0.0),
    "window_end_time": (_NUM, 1.0),
    "t_sample_time": (_NUM, None),
    "horizon_time": (_NUM, None),
    # particles and samples
    "n_per_area": (_NUM, 1000.0),
    "n_values_per_area": (_LIST, [100.0, 1000.0, 10000.0]),
    "points": (_LIST, None),
    "x": (_LIST, None),
    "epsilon_length": (_NUM, 0.05),
    "g": (_LIST, None),
    "duality_mode": ((str,), "quenched"),
    "backward_mode": ((str,), "quenched"),
    # statistics
    "significance_level": (_NUM, 0.01),
    "z_band_se": (_NUM, 3.0),
    # experiment specific
    "c_values_per_area": (_LIST, [50.0, 100.0, 200.0, 400.0]),
    "c_main_per_area": (_NUM, None),
    "main_replicates": ((int,), None),
    "box_center": (_LIST, None),
    "box_half_widths": (_LIST, None),
    "box_shape": ((str,), "indicator"),
    "basis_terms": ((int,), 64),
    "cells_per_axis": ((int,), 5),
    "n_events": ((int,), 100),
    "grid_points": ((int,), 100),
    "draws": ((int,), 100_000),
    "min_events": ((int,), 1000),
    "samples": ((int,), 2000),
}


# where output goes and how many processes run: never part of a result
EXECUTION_KEYS = ("out", "workers")


class ConfigError(ValueError):
    """Malformed configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key, self.line = key, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field {key!r}")
        super().__init__((", ".join(where) + ": " if where else "") + message)


def _key_lines(text: str) -> Dict[str, int]:
    out = {}
    for i, ln in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*([A-Za-z0-9_\-]+|\"[^\"]*\")\s*=", ln)
        if m:
            out.setdefault(m.group(1).strip('"'), i)
    return out


def _floats(v, key, lines, dim=None):
    try:
        a = [float(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError("expected a list of numbers", key, lines.get(key)) from None
    if dim is not None and len(a) != dim:
        raise ConfigError(f"expected {dim} numbers, got {len(a)}", key, lines.get(key))
    return a


@dataclass
class RunConfig:
    values: Dict[str, Any]
    lines: Dict[str, int] = field(default_factory=dict)
    source: Optional[str] = None

    # ---- construction

    @classmethod
    def from_text(cls, text: str, source: Optional[str] = None) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"syntax error: {exc}", line=int(m.group(1)) if m else None) from None
        return cls.from_mapping(raw, _key_lines(text), source)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        return cls.from_text(text, str(p))

    @classmethod
    def from_mapping(cls, raw: Dict[str, Any], lines: Optional[Dict[str, int]] = None,
                     source: Optional[str] = None) -> "RunConfig":
        lines = lines or {}
        vals = {k: d for k, (_, d) in SCHEMA.items()}
        for k, v in raw.items():
            if k not in SCHEMA:
                raise ConfigError("unknown key", k, lines.get(k))
            types = SCHEMA[k][0]
            if isinstance(v, dict):
                raise ConfigError("tables are not allowed; the config is flat", k, lines.get(k))
            ok = isinstance(v, types) and not (isinstance(v, bool) and bool not in types)
            if types == _NUM and isinstance(v, bool):
                ok = False
            if not ok:
                names = "/".join(t.__name__ for t in types)
                raise ConfigError(f"expected {names}, got {type(v).__name__}", k, lines.get(k))
            vals[k] = v
        cfg = cls(vals, lines, source)
        cfg.validate()
        return cfg

    def with_overrides(self, **kw) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k: v for k, v in kw.items() if v is not None})
        cfg = RunConfig(vals, self.lines, self.source)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def _fail(self, key: str, msg: str):
        raise ConfigError(msg, key, self.lines.get(key))

    # ---- validation

    def validate(self) -> None:
        v = self.values
        if v["command"] is not None and v["command"] not in COMMANDS:
            self._fail("command", f"unknown command {v['command']!r}")
        if not 0 <= v["seed"] < 2 ** 64:
            self._fail("seed", "seed must be an unsigned 64-bit integer")
        for k in ("workers", "replicates", "environments", "basis_terms", "cells_per_axis", "n_events",
                  "grid_points", "draws", "samples"):
            if v[k] < 1:
                self._fail(k, "must be at least 1")
        if not 0 < v["significance_level"] < 1:
            self._fail("significance_level", "must lie in (0, 1)")
        if not v["z_band_se"] > 0:
            self._fail("z_band_se", "must be positive")
        if not v["window_end_time"] > v["window_start_time"]:
            self._fail("window_end_time", "window must have positive duration")
        if not v["n_per_area"] > 0:
            self._fail("n_per_area", "must be positive")
        if not v["epsilon_length"] > 0:
            self._fail("epsilon_length", "must be positive")
        # building each object runs the owning module's own checks
        dom = self.domain()
        self.model()
        kern = self.kernel()
        mut = self.mutation()
        if mut is not None and mut.q != kern.q:
            self._fail("mutation", f"mutation acts on {mut.q} types but the kernel has {kern.q}")
        for k in ("points",):
            if v[k] is not None:
                if not isinstance(v[k], list) or not v[k]:
                    self._fail(k, "expected a non-empty list of points")
                for p in v[k]:
                    _floats(p if isinstance(p, list) else [p], k, self.lines, dom.dim)
        if v["x"] is not None:
            _floats(v["x"], "x", self.lines, dom.dim)
        if v["g"] is not None:
            for w in v["g"]:
                _floats(w if isinstance(w, list) else [w], "g", self.lines, kern.q)
        for k in ("box_center", "box_half_widths"):
            if v[k] is not None:
                _floats(v[k], k, self.lines, dom.dim)
        if v["duality_mode"] not in ("quenched", "annealed"):
            self._fail("duality_mode", "must be 'quenched' or 'annealed'")
        if v["backward_mode"] not in ("quenched", "annealed"):
            self._fail("backward_mode", "must be 'quenched' or 'annealed'")
        if v["box_shape"] not in ("indicator", "bump"):
            self._fail("box_shape", "must be 'indicator' or 'bump'")

    # ---- derived objects

    def domain(self) -> Domain:
        L = _floats(self["domain_lengths"], "domain_lengths", self.lines)
        try:
            if self["domain_kind"] == "torus":
                return Domain.torus(*L)
            if self["domain_kind"] == "box":
                return Domain.box(*L)
        except ValueError as exc:
            self._fail("domain_lengths", str(exc))
        self._fail("domain_kind", "must be 'torus' or 'box'")

    def model(self) -> EventModel:
        v = self.values
        variant = v["model_variant"]
        try:
            if variant == "gaussian":
                return EventModel.gaussian(v["rate_per_area_time"], v["u0"], v["theta2_area"],
                                           v["parent_scale_alpha"], v["truncation_in_theta"])
            if v["radii"] is not None and v["radius"] is not None:
                self._fail("radius", "give either radius or radii, not both")
            radii = _floats(v["radii"], "radii", self.lines) if v["radii"] is not None else [
                float(v["radius"]) if v["radius"] is not None else 1.0]
            weights = (_floats(v["radius_weights"], "radius_weights", self.lines)
                       if v["radius_weights"] is not None else [1.0] * len(radii))
            return EventModel(variant=variant, rate=float(v["rate_per_area_time"]), radii=tuple(radii),
                              radius_weights=tuple(weights), impact_kind=v["impact_kind"],
                              impact_value=float(v["impact"]), beta_a=float(v["impact_beta_a"]),
                              beta_b=float(v["impact_beta_b"]),
                              offspring_weights=tuple(_floats(v["offspring_weights"], "offspring_weights",
                                                              self.lines)))
        except ConfigError:
            raise
        except ValueError as exc:
            self._fail("model_variant", f"invalid event model: {exc}")

    def mutation(self) -> Optional[MutationModel]:
        v = self.values
        kind = v["mutation"]
        try:
            if kind == "none":
                return None
            if kind == "flip":
                return MutationModel.flip(float(v["mutation_rate_per_time"]))
            if kind == "parent_independent":
                return MutationModel.parent_independent(float(v["mutation_rate_per_time"]),
                                                        _floats(v["mutation_target"], "mutation_target", self.lines))
            if kind == "matrix":
                if v["mutation_matrix_per_time"] is None:
                    self._fail("mutation_matrix_per_time", "required when mutation = 'matrix'")
                return MutationModel([_floats(row, "mutation_matrix_per_time", self.lines)
                                      for row in v["mutation_matrix_per_time"]])
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            self._fail("mutation", f"invalid mutation model: {exc}")
        self._fail("mutation", "must be one of none, flip, parent_independent, matrix")

    def kernel(self) -> TypeKernel:
        v = self.values
        kind = v["kernel"]
        try:
            if kind == "uniform":
                return TypeKernel.uniform(_floats(v["kernel_probs"], "kernel_probs", self.lines))
            if kind == "delta":
                return TypeKernel.delta(v["kernel_type"], v["kernel_types"])
            if kind == "half_space":
                return TypeKernel.half_space(self.domain().dim, _floats(v["kernel_left"], "kernel_left", self.lines),
                                             _floats(v["kernel_right"], "kernel_right", self.lines))
        except ConfigError:
            raise
        except (IndexError, ValueError) as exc:
            self._fail("kernel", f"invalid type kernel: {exc}")
        self._fail("kernel", "must be one of uniform, delta, half_space")

    def window(self) -> tuple:
        return (float(self["window_start_time"]), float(self["window_end_time"]))

    def t_sample(self) -> float:
        return float(self["t_sample_time"]) if self["t_sample_time"] is not None else self.window()[1]

    def horizon(self) -> float:
        if self["horizon_time"] is not None:
            return float(self["horizon_time"])
        return self.t_sample() - self.window()[0]

    def point_list(self, default=None) -> list:
        pts = self["points"]
        if pts is None:
            if default is None:
                self._fail("points", "required for this command")
            return default
        return [[float(c) for c in p] for p in pts]

    def to_dict(self, execution: bool = True) -> dict:
        """All values; ``execution=False`` drops the ones that cannot change results."""
        skip = () if execution else EXECUTION_KEYS
        return {k: v for k, v in sorted(self.values.items()) if k not in skip}
