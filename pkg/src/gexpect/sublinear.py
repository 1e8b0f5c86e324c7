"""Sublinear expectations over finite families of discrete distributions.

A :class:`ScenarioFamily` realizes a sublinear expectation as the maximum of
the linear expectations of its member distributions.  Random variables are
test functions applied to the scenario coordinate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ValidationError

PROB_TOL = 1e-12
CERT_TOL = 1e-9

CONVEXITIES = ("convex", "concave", "neither")


@dataclass(frozen=True)
class TestFunction:
    """A real function of one variable with regularity metadata.

    Instances are callable on scalars or numpy arrays.  ``breakpoints`` lists
    the points where the function fails to be smooth; quadrature routines
    split their panels there.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    params: tuple = ()
    lipschitz_constant: float | None = None
    bounded: bool = False
    convexity: str = "neither"
    breakpoints: tuple[float, ...] = ()
    fn: Callable[[np.ndarray], np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.convexity not in CONVEXITIES:
            raise ValidationError(f"unknown convexity {self.convexity!r}")
        if self.fn is None:
            raise ValidationError("TestFunction needs a callable")

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(arr), dtype=float)
        if out.shape != arr.shape:
            out = np.broadcast_to(out, arr.shape).copy()
        if arr.ndim == 0:
            return float(out)
        return out

    @property
    def name(self) -> str:
        if self.kind == "constant":
            return f"constant({self.params[0]:g})"
        if self.kind == "piecewise_linear":
            return f"piecewise_linear[{len(self.params)} knots]"
        if self.kind == "derived":
            return self.params[0]
        return self.kind

    # -- algebra used to build derived random variables ------------------

    def __add__(self, other):
        if isinstance(other, TestFunction):
            lip = _sum_or_none(self.lipschitz_constant, other.lipschitz_constant)
            conv = self.convexity if self.convexity == other.convexity else "neither"
            return derived(
                f"({self.name} + {other.name})",
                lambda x, f=self, g=other: f.fn(x) + g.fn(x),
                lipschitz_constant=lip,
                bounded=self.bounded and other.bounded,
                convexity=conv,
                breakpoints=self.breakpoints + other.breakpoints,
            )
        c = float(other)
        return derived(
            f"({self.name} + {c:g})",
            lambda x, f=self: f.fn(x) + c,
            lipschitz_constant=self.lipschitz_constant,
            bounded=self.bounded,
            convexity=self.convexity,
            breakpoints=self.breakpoints,
        )

    __radd__ = __add__

    def __neg__(self):
        flip = {"convex": "concave", "concave": "convex", "neither": "neither"}
        return derived(
            f"-{self.name}",
            lambda x, f=self: -f.fn(x),
            lipschitz_constant=self.lipschitz_constant,
            bounded=self.bounded,
            convexity=flip[self.convexity],
            breakpoints=self.breakpoints,
        )

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TestFunction):
            return derived(
                f"({self.name} * {other.name})",
                lambda x, f=self, g=other: f.fn(x) * g.fn(x),
                bounded=self.bounded and other.bounded,
                breakpoints=self.breakpoints + other.breakpoints,
            )
        lam = float(other)
        conv = self.convexity
        if lam < 0:
            conv = {"convex": "concave", "concave": "convex", "neither": "neither"}[conv]
        lip = None if self.lipschitz_constant is None else abs(lam) * self.lipschitz_constant
        return derived(
            f"{lam:g}*{self.name}",
            lambda x, f=self: lam * f.fn(x),
            lipschitz_constant=lip,
            bounded=self.bounded,
            convexity=conv,
            breakpoints=self.breakpoints,
        )

    __rmul__ = __mul__

    def __abs__(self):
        return derived(
            f"|{self.name}|",
            lambda x, f=self: np.abs(f.fn(x)),
            lipschitz_constant=self.lipschitz_constant,
            bounded=self.bounded,
            convexity="convex" if self.kind == "identity" else "neither",
            breakpoints=self.breakpoints,
        )

    def power(self, p: float) -> "TestFunction":
        """``|f|**p``."""
        return derived(
            f"|{self.name}|^{p:g}",
            lambda x, f=self: np.abs(f.fn(x)) ** p,
            bounded=self.bounded,
            breakpoints=self.breakpoints,
        )

    def shifted(self, mu: float) -> "TestFunction":
        """``x -> f(x - mu)``."""
        return derived(
            f"{self.name}(x-{mu:g})",
            lambda x, f=self: f.fn(x - mu),
            lipschitz_constant=self.lipschitz_constant,
            bounded=self.bounded,
            convexity=self.convexity,
            breakpoints=tuple(b + mu for b in self.breakpoints),
        )

    def to_json(self) -> Any:
        if self.kind == "piecewise_linear":
            return {"knots": [list(k) for k in self.params]}
        if self.kind == "constant":
            return {"constant": self.params[0]}
        if self.kind == "derived":
            raise ValidationError("derived test functions are not serializable")
        return self.kind


def _sum_or_none(a, b):
    if a is None or b is None:
        return None
    return a + b


def derived(name, fn, *, lipschitz_constant=None, bounded=False, convexity="neither",
            breakpoints=()) -> TestFunction:
    return TestFunction(
        kind="derived",
        params=(name,),
        lipschitz_constant=lipschitz_constant,
        bounded=bounded,
        convexity=convexity,
        breakpoints=tuple(sorted(set(breakpoints))),
        fn=fn,
    )


def constant(c: float) -> TestFunction:
    c = float(c)
    return TestFunction(
        kind="constant", params=(c,), lipschitz_constant=0.0, bounded=True,
        convexity="convex", fn=lambda x: np.full_like(x, c, dtype=float),
    )


def piecewise_linear(knots: Iterable[Sequence[float]]) -> TestFunction:
    """Linear interpolation through ``knots``, constant beyond the end knots."""
    pts = tuple((float(x), float(y)) for x, y in knots)
    if len(pts) < 1:
        raise ValidationError("piecewise-linear function needs at least one knot")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValidationError("knots must be finite")
    if np.any(np.diff(xs) <= 0):
        raise ValidationError("knot abscissae must be strictly increasing")
    slopes = np.diff(ys) / np.diff(xs) if len(pts) > 1 else np.zeros(0)
    lip = float(np.max(np.abs(slopes))) if slopes.size else 0.0
    # flat extrapolation contributes zero slopes at both ends
    full = np.concatenate([[0.0], slopes, [0.0]])
    d = np.diff(full)
    if np.all(d >= 0):
        conv = "convex"
    elif np.all(d <= 0):
        conv = "concave"
    else:
        conv = "neither"
    return TestFunction(
        kind="piecewise_linear", params=pts, lipschitz_constant=lip, bounded=True,
        convexity=conv, breakpoints=tuple(xs.tolist()),
        fn=lambda x: np.interp(x, xs, ys),
    )


def _capped_sqrt(x):
    return np.minimum(1.0, np.sqrt(np.abs(x)))


_CATALOG: dict[str, TestFunction] = {
    "identity": TestFunction("identity", (), 1.0, False, "convex", (), lambda x: x + 0.0),
    "square": TestFunction("square", (), None, False, "convex", (), lambda x: x * x),
    "neg_square": TestFunction("neg_square", (), None, False, "concave", (), lambda x: -(x * x)),
    "positive_part": TestFunction(
        "positive_part", (), 1.0, False, "convex", (0.0,), lambda x: np.maximum(x, 0.0)),
    "neg_positive_part": TestFunction(
        "neg_positive_part", (), 1.0, False, "concave", (0.0,), lambda x: -np.maximum(x, 0.0)),
    "tanh_like": TestFunction("tanh_like", (), 1.0, True, "neither", (), np.tanh),
    # bounded, uniformly continuous, not Lipschitz at the origin
    "capped_sqrt": TestFunction(
        "capped_sqrt", (), None, True, "neither", (-1.0, 0.0, 1.0), _capped_sqrt),
}

HAT_KNOTS = ((-1.0, 0.0), (0.0, 1.0), (1.0, 0.0))


def catalog_names() -> list[str]:
    return sorted(_CATALOG) + ["constant(c)", "hat"]


def catalog(name: str) -> TestFunction:
    """Look up a catalog function by name.

    Accepts the plain names, ``hat`` (the unit tent on [-1, 1]) and
    ``constant(c)`` / ``constant:c``.
    """
    key = name.strip()
    if key in _CATALOG:
        return _CATALOG[key]
    if key == "hat":
        return piecewise_linear(HAT_KNOTS)
    for prefix, suffix in (("constant(", ")"), ("constant:", "")):
        if key.startswith(prefix) and key.endswith(suffix):
            body = key[len(prefix): len(key) - len(suffix)] if suffix else key[len(prefix):]
            try:
                return constant(float(body))
            except ValueError:
                break
    raise ValidationError(f"unknown test function {name!r}; known: {', '.join(catalog_names())}")


def test_function_from_json(obj: Any) -> TestFunction:
    if isinstance(obj, TestFunction):
        return obj
    if isinstance(obj, str):
        return catalog(obj)
    if isinstance(obj, dict):
        if "knots" in obj:
            return piecewise_linear(obj["knots"])
        if "constant" in obj:
            return constant(obj["constant"])
    raise ValidationError(f"cannot interpret test function {obj!r}")


# -- distributions and families ---------------------------------------------


@dataclass(frozen=True)
class DiscreteDistribution:
    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValidationError("a distribution needs at least one atom")
        vals = np.array([a[0] for a in atoms])
        probs = np.array([a[1] for a in atoms])
        if not np.all(np.isfinite(vals)):
            raise ValidationError("atom values must be finite")
        if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ValidationError("probabilities must lie in [0, 1]")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ValidationError(f"probabilities sum to {math.fsum(probs)!r}, not 1")

    @property
    def values(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms])

    def translated(self, mu: float) -> "DiscreteDistribution":
        return DiscreteDistribution(tuple((v + mu, p) for v, p in self.atoms))

    def to_json(self) -> dict:
        return {"atoms": [[v, p] for v, p in self.atoms]}


@dataclass(frozen=True)
class ScenarioFamily:
    measures: tuple[DiscreteDistribution, ...]

    def __post_init__(self):
        ms = tuple(
            m if isinstance(m, DiscreteDistribution) else DiscreteDistribution(tuple(m))
            for m in self.measures
        )
        object.__setattr__(self, "measures", ms)
        if not ms:
            raise ValidationError("a scenario family needs at least one measure")

    def __len__(self):
        return len(self.measures)

    def support(self) -> np.ndarray:
        """Sorted union of atom values over all measures."""
        return np.unique(np.concatenate([m.values for m in self.measures]))

    def translated(self, mu: float) -> "ScenarioFamily":
        return ScenarioFamily(tuple(m.translated(mu) for m in self.measures))

    def to_json(self) -> dict:
        return {"measures": [m.to_json() for m in self.measures]}

    @classmethod
    def from_json(cls, obj: Any) -> "ScenarioFamily":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            measures = obj["measures"]
            return cls(tuple(DiscreteDistribution(tuple(tuple(a) for a in m["atoms"]))
                             for m in measures))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed family document: {exc}") from exc


@dataclass(frozen=True)
class MomentCertificate:
    mean_upper: float
    mean_lower: float
    second_moment_upper: float
    second_moment_lower: float

    @property
    def sigma_upper(self) -> float:
        return math.sqrt(max(self.second_moment_upper, 0.0))

    @property
    def sigma_lower(self) -> float:
        return math.sqrt(max(self.second_moment_lower, 0.0))

    def zero_mean(self, tol: float = CERT_TOL) -> bool:
        return abs(self.mean_upper) <= tol and abs(self.mean_lower) <= tol

    def problems(self, strict: bool = True, tol: float = CERT_TOL) -> list[str]:
        """Reasons this family fails the CLT hypotheses (empty when admissible)."""
        out = []
        if not self.zero_mean(tol):
            out.append(f"mean bounds [{self.mean_lower:.6g}, {self.mean_upper:.6g}] are not both zero")
        if strict and self.second_moment_lower <= tol:
            out.append("lower second moment is zero (sigma_lower = 0)")
        return out

    def clt_admissible(self, strict: bool = True, tol: float = CERT_TOL) -> bool:
        return not self.problems(strict, tol)

    def as_dict(self) -> dict:
        return {
            "mean_upper": self.mean_upper,
            "mean_lower": self.mean_lower,
            "second_moment_upper": self.second_moment_upper,
            "second_moment_lower": self.second_moment_lower,
        }


# -- operations --------------------------------------------------------------


def _apply(f, x):
    return f(x) if isinstance(f, TestFunction) else np.asarray(f(x), dtype=float)


def linear_expect(dist: DiscreteDistribution, f: Callable) -> float:
    """Classical expectation of ``f`` under one distribution."""
    # plain left-to-right accumulation; the DP recursion sums in the same order
    total = 0.0
    for p, y in zip(dist.probs.tolist(), _apply(f, dist.values).tolist()):
        total += p * y
    return total


def linear_expectations(family: ScenarioFamily, f: Callable) -> np.ndarray:
    return np.array([linear_expect(m, f) for m in family.measures])


def sublinear_expect(family: ScenarioFamily, f: Callable) -> float:
    """``max`` over the family of the linear expectations of ``f``."""
    return float(np.max(linear_expectations(family, f)))


def p_norm(family: ScenarioFamily, f: Callable, p: float) -> float:
    if not p >= 1:
        raise ValidationError(f"p-norm requires p >= 1, got {p!r}")
    vals = sublinear_expect(family, lambda x: np.abs(_apply(f, x)) ** p)
    return max(vals, 0.0) ** (1.0 / p)


def certify_band(family: ScenarioFamily) -> MomentCertificate:
    means = np.array([np.dot(m.probs, m.values) for m in family.measures])
    seconds = np.array([np.dot(m.probs, m.values ** 2) for m in family.measures])
    return MomentCertificate(
        mean_upper=float(means.max()),
        mean_lower=float(means.min()),
        second_moment_upper=float(seconds.max()),
        second_moment_lower=float(seconds.min()),
    )


def require_clt_admissible(family: ScenarioFamily, strict: bool = True) -> MomentCertificate:
    cert = certify_band(family)
    problems = cert.problems(strict)
    if problems:
        raise ValidationError("family is not CLT-admissible: " + "; ".join(problems))
    return cert


def make_symmetric_two_point_family(sigmas: Sequence[float]) -> ScenarioFamily:
    """One measure per sigma, with atoms ``-sigma`` and ``+sigma`` of mass 1/2."""
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValidationError("need at least one sigma")
    if any(not (s > 0) or not math.isfinite(s) for s in sigmas):
        raise ValidationError(f"sigmas must be positive and finite, got {sigmas}")
    return ScenarioFamily(tuple(DiscreteDistribution(((-s, 0.5), (s, 0.5))) for s in sigmas))
