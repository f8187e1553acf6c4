from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class CertificateReport:
    """Outcome of one sampled verification.

    ``margin`` is the worst sampled value of the checked quantity, oriented
    so that larger is worse: a condition ``q < thr`` fails at samples where
    ``q >= thr``. ``witness`` holds the point (or pair of points) attaining
    it and ``context`` names the condition and the threshold applied there.
    """

    check: str
    verdict: str
    margin: float
    witness: list = field(default_factory=list)
    tolerance: float = 0.0
    samples_used: int = 0
    seed: int | None = None
    context: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @property
    def exit_code(self) -> int:
        return {PASS: 0, FAIL: 1}.get(self.verdict, 2)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(
            {
                "check": self.check,
                "verdict": self.verdict,
                "margin": self.margin,
                "witness": [np.asarray(w, dtype=float) for w in self.witness],
                "tolerance": self.tolerance,
                "samples": self.samples_used,
                "seed": self.seed,
                "context": self.context,
                "conditions": self.conditions,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
