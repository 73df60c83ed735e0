"""Scalar sampling distributions used for factor initialisation and stability studies."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_SPEC = re.compile(r"^\s*(uniform|normal|u|n)\s*\(\s*([^,]+)\s*,\s*([^)]+)\s*\)\s*$", re.I)


@dataclass(frozen=True)
class DistributionSpec:
    """``uniform(a, b)`` on ``[a, b]`` or ``normal(mean, stddev)``."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ValidationError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "uniform" and not self.b > self.a:
            raise ValidationError("uniform(a, b) needs b > a")
        if self.kind == "normal" and not self.b > 0:
            raise ValidationError("normal(mean, stddev) needs stddev > 0")

    @classmethod
    def parse(cls, text: str) -> "DistributionSpec":
        """Parse ``"uniform(1,2)"``, ``"normal(9, 0.1)"``, ``"U(0,1)"`` or ``"N(0,1)"``."""
        m = _SPEC.match(text)
        if not m:
            raise ValidationError(f"cannot parse distribution {text!r}")
        kind = {"u": "uniform", "n": "normal"}.get(m.group(1).lower(), m.group(1).lower())
        return cls(kind, float(m.group(2)), float(m.group(3)))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return rng.normal(self.a, self.b, size)

    def label(self) -> str:
        short = "U" if self.kind == "uniform" else "N"
        return f"{short}({self.a:g},{self.b:g})"

    def __str__(self) -> str:
        return f"{self.kind}({self.a:g},{self.b:g})"


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; the only RNG constructor used in the package."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for an independent stream keyed by ``keys``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0])
