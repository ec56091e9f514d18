"""Domain types: risk-model parameters, claim distributions and band strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import integrate, optimize, special

from divbands._special import scaled_upper_gamma
from divbands.errors import DomainError, InfiniteMeanError, InvariantError, PoleError

# below this |s * x0| the incomplete-gamma route loses digits
PARETO_LT_SWITCH = 1e-3


@dataclass(frozen=True)
class ErlangComponent:
    weight: float
    shape: int
    rate: float

    def __post_init__(self):
        if int(self.shape) != self.shape or self.shape < 1:
            raise InvariantError(f"Erlang shape must be a positive integer, got {self.shape}")
        if not self.rate > 0:
            raise InvariantError(f"Erlang rate must be positive, got {self.rate}")
        object.__setattr__(self, "shape", int(self.shape))


@dataclass(frozen=True)
class ParetoComponent:
    """Shifted (Lomax) Pareto with density ``alpha/x0 * (1 + y/x0)**(-alpha-1)``."""

    weight: float
    alpha: float
    x0: float

    def __post_init__(self):
        if not self.alpha > 0 or not self.x0 > 0:
            raise InvariantError(f"Pareto needs alpha > 0 and x0 > 0, got {self.alpha}, {self.x0}")


Component = Union[ErlangComponent, ParetoComponent]


@dataclass(frozen=True)
class ClaimDistribution:
    """Finite mixture of Erlang and shifted Pareto claim-size laws."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvariantError("a claim distribution needs at least one component")
        weights = np.array([c.weight for c in comps], dtype=float)
        if np.any(weights <= 0):
            raise InvariantError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvariantError(f"mixture weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "components", comps)

    # -- constructors -------------------------------------------------------
    @classmethod
    def erlang(cls, shape: int, rate: float) -> "ClaimDistribution":
        return cls((ErlangComponent(1.0, shape, rate),))

    @classmethod
    def pareto(cls, alpha: float, x0: float) -> "ClaimDistribution":
        return cls((ParetoComponent(1.0, alpha, x0),))

    @classmethod
    def mixture(cls, parts: Iterable[tuple]) -> "ClaimDistribution":
        """Build from ``(weight, ClaimDistribution-with-one-component)`` pairs."""
        comps = []
        for w, dist in parts:
            for c in dist.components:
                if isinstance(c, ErlangComponent):
                    comps.append(ErlangComponent(w * c.weight, c.shape, c.rate))
                else:
                    comps.append(ParetoComponent(w * c.weight, c.alpha, c.x0))
        return cls(tuple(comps))

    @classmethod
    def from_dict(cls, record: dict) -> "ClaimDistribution":
        """Parse the tagged record used by the CLI configuration files."""
        kind = record.get("kind")
        if kind == "erlang":
            _check_keys(record, {"kind", "k", "rate"})
            return cls.erlang(record["k"], record["rate"])
        if kind == "erlang_mixture":
            _check_keys(record, {"kind", "components"})
            comps = []
            for c in record["components"]:
                _check_keys(c, {"w", "k", "rate"})
                comps.append(ErlangComponent(c["w"], c["k"], c["rate"]))
            return cls(tuple(comps))
        if kind == "shifted_pareto":
            _check_keys(record, {"kind", "alpha", "x0"})
            return cls.pareto(record["alpha"], record["x0"])
        if kind == "cross_mixture":
            _check_keys(record, {"kind", "components"})
            comps = []
            for c in record["components"]:
                if c.get("type") == "erlang":
                    _check_keys(c, {"type", "w", "k", "rate"})
                    comps.append(ErlangComponent(c["w"], c["k"], c["rate"]))
                elif c.get("type") == "pareto":
                    _check_keys(c, {"type", "w", "alpha", "x0"})
                    comps.append(ParetoComponent(c["w"], c["alpha"], c["x0"]))
                else:
                    raise InvariantError(f"unknown mixture component type {c.get('type')!r}")
            return cls(tuple(comps))
        raise InvariantError(f"unknown claim distribution kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "erlang_mixture":
            return {
                "kind": "erlang_mixture",
                "components": [{"w": c.weight, "k": c.shape, "rate": c.rate} for c in self.components],
            }
        if self.kind == "shifted_pareto":
            c = self.components[0]
            return {"kind": "shifted_pareto", "alpha": c.alpha, "x0": c.x0}
        out = []
        for c in self.components:
            if isinstance(c, ErlangComponent):
                out.append({"type": "erlang", "w": c.weight, "k": c.shape, "rate": c.rate})
            else:
                out.append({"type": "pareto", "w": c.weight, "alpha": c.alpha, "x0": c.x0})
        return {"kind": "cross_mixture", "components": out}

    # -- descriptors --------------------------------------------------------
    @property
    def kind(self) -> str:
        erl = [isinstance(c, ErlangComponent) for c in self.components]
        if all(erl):
            return "erlang_mixture"
        if len(self.components) == 1:
            return "shifted_pareto"
        return "cross_mixture"

    @property
    def is_erlang_mixture(self) -> bool:
        return self.kind == "erlang_mixture"

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def length_scale(self) -> float:
        """Smallest natural length scale among the components."""
        scales = [1.0 / c.rate if isinstance(c, ErlangComponent) else c.x0 for c in self.components]
        return min(scales)

    # -- functions of the law ----------------------------------------------
    def density(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise DomainError("claim density is defined for y >= 0 only")
        out = np.zeros_like(y)
        for c in self.components:
            out = out + c.weight * _component_density(c, y)
        return out[()]

    def density_derivative(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for c in self.components:
            f = _component_density(c, y)
            if isinstance(c, ErlangComponent):
                if c.shape == 1:
                    d = -c.rate * f
                else:
                    g = np.exp(c.shape * math.log(c.rate) + special.xlogy(c.shape - 2, y) - c.rate * y
                               - special.gammaln(c.shape))
                    d = g * ((c.shape - 1) - c.rate * y)
            else:
                d = -(c.alpha + 1.0) / (c.x0 + y) * f
            out = out + c.weight * d
        return out[()]

    def survival(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for c in self.components:
            if isinstance(c, ErlangComponent):
                out = out + c.weight * special.gammaincc(c.shape, c.rate * np.maximum(y, 0.0))
            else:
                out = out + c.weight * (1.0 + np.maximum(y, 0.0) / c.x0) ** (-c.alpha)
        return np.where(y < 0, 1.0, out)[()]

    def cdf(self, y):
        return 1.0 - np.asarray(self.survival(y))

    def quantile(self, q: float) -> float:
        if not 0 <= q < 1:
            raise DomainError("quantile level must lie in [0, 1)")
        hi = self.mean() + 1.0
        while self.survival(hi) > 1 - q:
            hi *= 2.0
        # the survival function of heavy tails is flat in absolute terms; bracket in log space
        return float(optimize.brentq(lambda x: math.log(self.survival(x)) - math.log1p(-q), 0.0, hi,
                                     xtol=1e-12 * hi, rtol=1e-14))

    def mean(self) -> float:
        m = 0.0
        for c in self.components:
            if isinstance(c, ErlangComponent):
                m += c.weight * c.shape / c.rate
            else:
                if c.alpha <= 1:
                    raise InfiniteMeanError(f"Pareto part with alpha={c.alpha} has infinite mean")
                m += c.weight * c.x0 / (c.alpha - 1.0)
        return m

    def laplace(self, s):
        """Laplace transform of the density, ``E[exp(-s Y)]``, for real or complex ``s``."""
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape, dtype=complex)
        for c in self.components:
            if isinstance(c, ErlangComponent):
                if np.any(np.abs(s + c.rate) == 0):
                    raise PoleError(f"s = {-c.rate} is a pole of the Erlang({c.shape},{c.rate}) transform")
                out = out + c.weight * (c.rate / (c.rate + s)) ** c.shape
            else:
                out = out + c.weight * _pareto_laplace(c, s)
        return out[()]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.components), size=size, p=self.weights)
        out = np.empty(size)
        for j, c in enumerate(self.components):
            sel = idx == j
            n = int(sel.sum())
            if isinstance(c, ErlangComponent):
                out[sel] = rng.gamma(c.shape, 1.0 / c.rate, size=n)
            else:
                out[sel] = c.x0 * ((1.0 - rng.random(n)) ** (-1.0 / c.alpha) - 1.0)
        return out


def _check_keys(record: dict, allowed: set) -> None:
    unknown = set(record) - allowed
    if unknown:
        raise InvariantError(f"unknown keys {sorted(unknown)} in {record!r}")
    missing = allowed - set(record)
    if missing:
        raise InvariantError(f"missing keys {sorted(missing)} in {record!r}")


def _component_density(c: Component, y: np.ndarray) -> np.ndarray:
    if isinstance(c, ErlangComponent):
        k, b = c.shape, c.rate
        return np.exp(k * math.log(b) + special.xlogy(k - 1, y) - b * y - special.gammaln(k))
    return c.alpha / c.x0 * (1.0 + y / c.x0) ** (-c.alpha - 1.0)


def _pareto_laplace(c: ParetoComponent, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    out = np.empty(s.shape, dtype=complex)
    zero = s == 0
    out[zero] = 1.0
    if np.any((s.real <= 0) & ~zero):
        raise DomainError("the Pareto transform needs Re(s) > 0")
    z = s * c.x0
    near = (np.abs(z) < PARETO_LT_SWITCH) & ~zero
    far = ~near & ~zero
    if far.any():
        zf = z[far]
        out[far] = c.alpha * np.exp(c.alpha * np.log(zf)) * scaled_upper_gamma(-c.alpha, zf)
    for i in zip(*np.nonzero(np.atleast_1d(near))):
        i = i if s.ndim else ()
        out[i] = _pareto_laplace_quad(c, complex(s[i]))
    return out


def _pareto_laplace_quad(c: ParetoComponent, s: complex) -> complex:
    def f(y, part):
        v = np.exp(-s * y) * c.alpha / c.x0 * (1.0 + y / c.x0) ** (-c.alpha - 1.0)
        return v.real if part == 0 else v.imag

    re = integrate.quad(f, 0, np.inf, args=(0,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    im = integrate.quad(f, 0, np.inf, args=(1,), epsabs=1e-14, epsrel=1e-12, limit=200)[0] if s.imag else 0.0
    return complex(re, im)


def claim_density(dist: ClaimDistribution, y):
    return dist.density(y)


def claim_laplace(dist: ClaimDistribution, s):
    return dist.laplace(s)


def claim_mean(dist: ClaimDistribution) -> float:
    return dist.mean()


@dataclass(frozen=True)
class ModelParams:
    """Cramér-Lundberg parameters with the premium fixed by the safety loading."""

    lam: float
    delta: float
    eta: float
    mean_claim: float

    def __post_init__(self):
        for name in ("lam", "delta", "eta", "mean_claim"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvariantError(f"{name} must be positive and finite, got {v}")

    @classmethod
    def for_claims(cls, lam: float, delta: float, eta: float, dist: ClaimDistribution) -> "ModelParams":
        return cls(float(lam), float(delta), float(eta), dist.mean())

    @property
    def p(self) -> float:
        return (1.0 + self.eta) * self.lam * self.mean_claim

    @property
    def u0(self) -> float:
        """Upper bound on the highest optimal band level."""
        return self.p * self.lam / (self.delta * (self.lam + self.delta))


@dataclass(frozen=True)
class BandStrategy:
    """Levels ``(b0, a1, b1, ..., a_{m-1}, b_{m-1})`` of an m-band strategy."""

    levels: tuple

    def __post_init__(self):
        lv = tuple(float(x) for x in self.levels)
        if len(lv) % 2 != 1:
            raise InvariantError(f"a band strategy needs an odd number of levels, got {len(lv)}")
        if any(not math.isfinite(x) or x < 0 for x in lv):
            raise InvariantError(f"levels must be finite and non-negative: {lv}")
        if any(lv[i] > lv[i + 1] for i in range(len(lv) - 1)):
            raise InvariantError(f"levels must be sorted: {lv}")
        object.__setattr__(self, "levels", lv)

    @property
    def m(self) -> int:
        return (len(self.levels) + 1) // 2

    @property
    def a(self) -> tuple:
        """Lower band edges, starting with the implicit ``a0 = 0``."""
        return (0.0,) + self.levels[1::2]

    @property
    def b(self) -> tuple:
        return self.levels[0::2]

    def band_of(self, u: float) -> int:
        """Index k of the band with ``a_k <= u < a_{k+1}``."""
        return int(np.searchsorted(self.a, u, side="right") - 1)

    def to_list(self) -> list:
        return list(self.levels)


def normalize_strategy(s: BandStrategy) -> BandStrategy:
    """Merge bands separated by an empty lump-sum interval.

    A pair ``b_j == a_{j+1}`` leaves no lump region between two bands, so the
    two bands act as one ``[a_j, b_{j+1})``. Zero-width bands ``a_k == b_k`` keep
    their pay point and are left alone.
    """
    lv = list(s.levels)
    j = 0
    while j + 1 < len(lv):
        # pairs (b_j, a_{j+1}) sit at even positions
        if lv[j] == lv[j + 1]:
            del lv[j:j + 2]
        else:
            j += 2
    return BandStrategy(tuple(lv))


def collapsed_pairs(s: BandStrategy, tol: float) -> list:
    """Indices i with ``levels[i+1] - levels[i] <= tol``."""
    lv = s.levels
    return [i for i in range(len(lv) - 1) if lv[i + 1] - lv[i] <= tol]


def drop_collapsed(s: BandStrategy, tol: float) -> BandStrategy:
    """Remove level pairs closer than ``tol`` (merged bands or degenerate bands)."""
    lv = list(s.levels)
    i = 0
    while i + 1 < len(lv):
        if lv[i + 1] - lv[i] <= tol:
            # (b_j, a_{j+1}) merges two bands, (a_k, b_k) is a point band; both drop a pair
            del lv[i:i + 2]
            i = max(i - 1, 0)
        else:
            i += 1
    return BandStrategy(tuple(lv))


def as_strategy(levels: Union[BandStrategy, Sequence[float]]) -> BandStrategy:
    return levels if isinstance(levels, BandStrategy) else BandStrategy(tuple(levels))
