"""Seeded generators for the synthetic benchmark problems.

Gaussian variates come from numpy's ``Generator.standard_normal`` (ziggurat),
seeded per call; outputs are reproducible for a fixed numpy version.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nfsic.errors import InputError
from nfsic.statistic import JointSample

SG = "sg"
SIN = "sin"
GSIGN = "gsign"
NEG_LINEAR = "neglinear"
KINDS = (SG, SIN, GSIGN, NEG_LINEAR)

MAX_PROPOSALS_PER_POINT = 10**6


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    dx: int = 1
    dy: int = 1
    omega: float = 1.0
    noise_sd: float = 0.3

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise InputError(f"unknown problem {self.kind!r}; expected one of {KINDS}")
        if self.dx < 1 or self.dy < 1:
            raise InputError("dx and dy must be >= 1")
        if kind in (SIN, NEG_LINEAR) and (self.dx != 1 or self.dy != 1):
            raise InputError(f"{kind} is defined only for dx = dy = 1")
        if kind == GSIGN and self.dy != 1:
            raise InputError("gsign has dy = 1")
        if kind == SIN and not self.omega > 0:
            raise InputError("omega must be positive")
        if kind == NEG_LINEAR and self.noise_sd < 0:
            raise InputError("noise_sd must be nonnegative")

    @property
    def is_null(self) -> bool:
        return self.kind == SG

    def with_param(self, name: str, value) -> "ProblemSpec":
        """Copy with one parameter changed; ``d`` sets dx and dy together."""
        fields = dict(kind=self.kind, dx=self.dx, dy=self.dy, omega=self.omega, noise_sd=self.noise_sd)
        if name == "d":
            fields["dx"] = fields["dy"] = int(value)
        elif name in ("dx", "dy"):
            fields[name] = int(value)
        elif name in ("omega", "noise_sd"):
            fields[name] = float(value)
        else:
            raise InputError(f"{name!r} is not a problem parameter")
        return ProblemSpec(**fields)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dx": self.dx, "dy": self.dy,
                "omega": self.omega, "noise_sd": self.noise_sd}


def _check_n(n: int) -> int:
    n = int(n)
    if n < 2:
        raise InputError(f"n must be >= 2, got {n}")
    return n


def sample_sg(n: int, dx: int, dy: int, seed: int) -> JointSample:
    """Independent standard normals X in R^dx and Y in R^dy."""
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((n, dx))
    ys = rng.standard_normal((n, dy))
    return JointSample(xs, ys)


def sample_sin(n: int, omega: float, seed: int) -> JointSample:
    """Exact rejection sampler for p(x, y) ~ 1 + sin(omega x) sin(omega y) on (-pi, pi)^2."""
    n = _check_n(n)
    if not omega > 0:
        raise InputError(f"omega must be positive, got {omega}")
    rng = np.random.default_rng(seed)
    out = np.empty((0, 2))
    proposed = 0
    while out.shape[0] < n:
        need = n - out.shape[0]
        batch = max(2 * need + 16, 64)
        prop = rng.uniform(-math.pi, math.pi, size=(batch, 2))
        accept_prob = 0.5 * (1.0 + np.sin(omega * prop[:, 0]) * np.sin(omega * prop[:, 1]))
        keep = rng.uniform(size=batch) < accept_prob
        out = np.vstack([out, prop[keep]])
        proposed += batch
        if proposed > MAX_PROPOSALS_PER_POINT * n:
            raise RuntimeError("rejection sampler exceeded its proposal budget")
    out = out[:n]
    return JointSample(out[:, :1], out[:, 1:])


def sample_gsign(n: int, dx: int, seed: int) -> JointSample:
    """Y = |Z| * prod_i sgn(X_i) with X ~ N(0, I_dx), Z ~ N(0, 1)."""
    n = _check_n(n)
    if dx < 1:
        raise InputError(f"dx must be >= 1, got {dx}")
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((n, dx))
    z = rng.standard_normal(n)
    ys = np.abs(z) * np.prod(np.sign(xs), axis=1)
    return JointSample(xs, ys[:, np.newaxis])


def sample_neg_linear(n: int, noise_sd: float = 0.3, seed: int = 0) -> JointSample:
    """Y = -X + noise_sd * N(0, 1), X ~ N(0, 1)."""
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = -x + noise_sd * rng.standard_normal(n)
    return JointSample(x[:, np.newaxis], y[:, np.newaxis])


def generate(problem: ProblemSpec, n: int, seed: int) -> JointSample:
    if problem.kind == SG:
        return sample_sg(n, problem.dx, problem.dy, seed)
    if problem.kind == SIN:
        return sample_sin(n, problem.omega, seed)
    if problem.kind == GSIGN:
        return sample_gsign(n, problem.dx, seed)
    return sample_neg_linear(n, problem.noise_sd, seed)
