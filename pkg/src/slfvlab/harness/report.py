"""Experiment reports: JSON for machines, text for people, CSV for raw values."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "tolist"):
        return _clean(v.tolist())
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


@dataclass
class Check:
    """One pass/fail decision together with everything needed to re-derive it."""

    name: str
    kind: str
    passed: bool
    statistic: Optional[float] = None
    threshold: Optional[float] = None
    estimate: Optional[float] = None
    se: Optional[float] = None
    oracle: Optional[float] = None
    oracle_source: str = ""
    p_value: Optional[float] = None
    alpha: Optional[float] = None
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if v is not None and v != "" and v != {}}
        d["passed"] = bool(self.passed)
        return _clean(d)


def z_check(name: str, estimate: float, se: float, oracle: float, source: str, band: float = 3.0, **detail) -> Check:
    from .stats import z_score
    z = z_score(estimate, se, oracle)
    return Check(name, "z", bool(abs(z) <= band), statistic=z, threshold=band, estimate=estimate,
                 se=se, oracle=oracle, oracle_source=source, detail=detail)


def p_check(name: str, kind: str, statistic: float, p_value: float, alpha: float, **detail) -> Check:
    return Check(name, kind, bool(p_value > alpha), statistic=statistic, p_value=p_value, alpha=alpha, detail=detail)


@dataclass
class ExperimentReport:
    name: str
    seed: str
    parameters: Dict[str, Any]
    checks: List[Check] = field(default_factory=list)
    estimates: Dict[str, Any] = field(default_factory=dict)
    raw: Dict[str, list] = field(default_factory=dict)
    runtime: float = 0.0  # kept out of the JSON so that reports are byte-reproducible

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return _clean({
            "experiment": self.name,
            "seed": self.seed,
            "parameters": self.parameters,
            "estimates": self.estimates,
            "checks": [c.to_dict() for c in self.checks],
            "pass": self.passed,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def text(self, runtime: bool = True) -> str:
        lines = [f"experiment {self.name}  seed={self.seed}  {'PASS' if self.passed else 'FAIL'}"]
        for k, v in sorted(self.parameters.items()):
            lines.append(f"  param {k} = {v}")
        for k, v in sorted(self.estimates.items()):
            lines.append(f"  estimate {k} = {v}")
        for c in self.checks:
            bits = [f"{c.kind}"]
            if c.estimate is not None:
                bits.append(f"est={c.estimate:.6g}")
            if c.se is not None:
                bits.append(f"se={c.se:.3g}")
            if c.oracle is not None:
                bits.append(f"oracle={c.oracle:.6g} ({c.oracle_source})")
            if c.statistic is not None:
                bits.append(f"stat={c.statistic:.4g}")
            if c.p_value is not None:
                bits.append(f"p={c.p_value:.4g} alpha={c.alpha}")
            if c.threshold is not None:
                bits.append(f"threshold={c.threshold:.4g}")
            lines.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.name}: " + " ".join(bits))
        if runtime:
            lines.append(f"  runtime {self.runtime:.2f}s")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = sorted(self.raw)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        n = max((len(self.raw[c]) for c in cols), default=0)
        for i in range(n):
            w.writerow([repr(float(self.raw[c][i])) if i < len(self.raw[c]) else "" for c in cols])
        return buf.getvalue()
