"""Numeric policy and run-level defaults."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field, replace
from typing import Optional

from .errors import ConfigError


@dataclass(frozen=True)
class NumericPolicy:
    """Tolerances shared by every module.

    Attributes
    ----------
    struct_tol : float
        Structural invariants such as ``g^T J g = J``.
    roundtrip_tol : float
        Reconstruction of a factorization.
    nan_eps0 : float
        Radius around the identity inside which the NAN factorization is attempted.
    newton_max_iter : int
        Iteration cap for every Newton-type solve.
    absorb_tol : float
        Residual accepted when a perturbation is absorbed into a neighbouring factor.
    classifier_slack : float
        Multiplier on the ``7 eps`` threshold used when labelling pants.
    """

    struct_tol: float = 1e-9
    roundtrip_tol: float = 1e-10
    nan_eps0: float = 0.1
    newton_max_iter: int = 60
    absorb_tol: float = 1e-13
    classifier_slack: float = 1.2

    def with_(self, **kw) -> "NumericPolicy":
        return replace(self, **kw)


DEFAULT_POLICY = NumericPolicy()


@dataclass
class RunConfig:
    """Parameters shared by the command line entry points.

    ``delta`` and ``xi`` default to ``eps`` and ``R**-2`` when left as None.
    """

    n: int = 4
    R: float = 8.0
    eps: float = 0.05
    delta: Optional[float] = None
    xi: Optional[float] = None
    seed: int = 0
    seeds: int = 20
    steiner_seeds: int = 3
    samples: int = 20000
    grid: tuple = (4, 8)
    out_dir: str = "out"
    policy: NumericPolicy = field(default_factory=NumericPolicy)

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        if self.delta is None:
            self.delta = self.eps
        if self.xi is None:
            self.xi = self.R ** -2
        self.validate()

    def validate(self) -> None:
        problems = []
        if not isinstance(self.n, int) or not 2 <= self.n <= 8:
            problems.append(f"n: expected an integer in [2, 8], got {self.n!r}")
        if not 4 <= self.R <= 20:
            problems.append(f"R: expected a value in [4, 20], got {self.R!r}")
        if not 0 < self.eps <= math.pi / 30:
            problems.append(f"eps: expected a value in (0, pi/30], got {self.eps!r}")
        if not self.delta > 0:
            problems.append(f"delta: expected a positive value, got {self.delta!r}")
        if not self.xi > 0:
            problems.append(f"xi: expected a positive value, got {self.xi!r}")
        if self.samples < 1:
            problems.append(f"samples: expected a positive count, got {self.samples!r}")
        if self.seeds < 1 or self.steiner_seeds < 1:
            problems.append("seeds: expected positive counts")
        if len(self.grid) != 2 or min(self.grid) < 1:
            problems.append(f"grid: expected two positive sizes, got {self.grid!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d
