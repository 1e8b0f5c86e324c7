"""Nested sublinear expectations of i.i.d. sums by backward recursion.

For a family ``F`` and terminal function ``phi`` the recursion is

    v_n(s) = phi(scale(s))
    v_i(s) = max_theta  sum_a p_theta(a) v_{i+1}(s + a)

and ``E[phi(scale(S_n))] = v_0(0)``.  Each new summand is evaluated innermost,
which is the (asymmetric) order in which ``X_{i+1}`` is independent of the
block ``(X_1, ..., X_i)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BudgetExceeded, SupportCapExceeded, ValidationError
from .sublinear import ScenarioFamily, catalog, certify_band

SCALINGS = ("none", "inv_sqrt_n", "inv_n")
BACKENDS = ("exact_support", "grid")
KEY_DECIMALS = 12
DEFAULT_SUPPORT_CAP = 5_000_000


def scale_factor(scaling: str, n: int) -> float:
    if scaling == "none":
        return 1.0
    if scaling == "inv_sqrt_n":
        return 1.0 / math.sqrt(n)
    if scaling == "inv_n":
        return 1.0 / n
    raise ValidationError(f"unknown scaling {scaling!r}; expected one of {SCALINGS}")


@dataclass(frozen=True)
class DPQuery:
    family: ScenarioFamily
    phi: Callable
    n: int
    scaling: str = "none"
    backend: str = "exact_support"
    grid_dx: float | None = None
    grid_half_width: float | None = None
    support_cap: int = DEFAULT_SUPPORT_CAP

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n!r}")
        scale_factor(self.scaling, int(self.n))
        if self.backend not in BACKENDS:
            raise ValidationError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.backend == "grid":
            if not (self.grid_dx and self.grid_dx > 0 and self.grid_half_width
                    and self.grid_half_width > 0):
                raise ValidationError("grid backend needs positive grid_dx and grid_half_width")

    def to_json(self) -> dict:
        out = {
            "family": self.family.to_json(),
            "phi": self.phi.to_json() if hasattr(self.phi, "to_json") else None,
            "n": int(self.n),
            "scaling": self.scaling,
            "backend": self.backend,
        }
        if self.backend == "grid":
            out["grid_dx"] = self.grid_dx
            out["grid_half_width"] = self.grid_half_width
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DPQuery":
        from .sublinear import test_function_from_json
        try:
            return cls(
                family=ScenarioFamily.from_json(obj["family"]),
                phi=test_function_from_json(obj["phi"]),
                n=int(obj["n"]),
                scaling=obj.get("scaling", "none"),
                backend=obj.get("backend", "exact_support"),
                grid_dx=obj.get("grid_dx"),
                grid_half_width=obj.get("grid_half_width"),
            )
        except KeyError as exc:
            raise ValidationError(f"DP query is missing field {exc}") from exc


@dataclass(frozen=True)
class DPResult:
    value: float
    backend: str
    states_visited: int
    n: int

    def to_json(self) -> dict:
        return {"value": self.value, "backend": self.backend,
                "states_visited": self.states_visited, "n": self.n}


def _measure_arrays(family: ScenarioFamily):
    return [(m.values, m.probs) for m in family.measures]


def _solve_exact(q: DPQuery) -> DPResult:
    measures = _measure_arrays(q.family)
    all_atoms = np.unique(np.concatenate([v for v, _ in measures]))
    keys = [np.zeros(1)]
    reps = [np.zeros(1)]
    total = 1
    for i in range(q.n):
        cand = (reps[-1][:, None] + all_atoms[None, :]).ravel()
        rounded = np.round(cand, KEY_DECIMALS)
        k, first = np.unique(rounded, return_index=True)
        total += k.size
        if total > q.support_cap:
            raise SupportCapExceeded(
                f"reachable support exceeds cap {q.support_cap} at stage {i + 1} of {q.n}")
        keys.append(k)
        reps.append(cand[first])

    c = scale_factor(q.scaling, q.n)
    v = np.asarray(q.phi(reps[-1] * c), dtype=float)
    for i in range(q.n - 1, -1, -1):
        best = None
        for vals, probs in measures:
            acc = np.zeros(reps[i].size)
            for a, p in zip(vals, probs):
                target = np.round(reps[i] + a, KEY_DECIMALS)
                idx = np.searchsorted(keys[i + 1], target)
                acc += p * v[idx]
            best = acc if best is None else np.maximum(best, acc)
        v = best
    return DPResult(float(v[0]), "exact_support", total, int(q.n))


def _solve_grid(q: DPQuery) -> DPResult:
    measures = _measure_arrays(q.family)
    dx, W = q.grid_dx, q.grid_half_width
    K = int(round(W / dx))
    x = np.arange(-K, K + 1) * dx
    reach = q.n * max(float(np.max(np.abs(v))) for v, _ in measures)
    if reach > x[-1] + 1e-12:
        warnings.warn(
            f"reachable sums up to {reach:g} exit the grid half width {x[-1]:g}; "
            "values beyond the edge are clamped",
            RuntimeWarning, stacklevel=3,
        )
    c = scale_factor(q.scaling, q.n)
    v = np.asarray(q.phi(x * c), dtype=float)
    for _ in range(q.n):
        best = None
        for vals, probs in measures:
            acc = np.zeros_like(x)
            for a, p in zip(vals, probs):
                acc += p * np.interp(x + a, x, v)
            best = acc if best is None else np.maximum(best, acc)
        v = best
    return DPResult(float(v[K]), "grid", int(x.size * (q.n + 1)), int(q.n))


def solve(q: DPQuery) -> DPResult:
    if q.backend == "exact_support":
        return _solve_exact(q)
    return _solve_grid(q)


def nested_expect(q: DPQuery) -> float:
    return solve(q).value


def lln_second_moment(family: ScenarioFamily, n: int, mu: float = 0.0) -> float:
    """``E[|S_n/n - mu|^2]`` for i.i.d. copies of the family's coordinate.

    Only the quadratic test function enters, so weak independence suffices.
    """
    cert = certify_band(family.translated(-mu))
    if not cert.zero_mean():
        raise ValidationError(
            f"family is not zero-mean after removing mu={mu}: "
            f"means in [{cert.mean_lower:.6g}, {cert.mean_upper:.6g}]")
    phi = catalog("square").shifted(mu)
    return nested_expect(DPQuery(family, phi, n, scaling="inv_n"))


# -- brute-force oracle ----------------------------------------------------------


def _positive_atoms(family: ScenarioFamily):
    out = []
    for m in family.measures:
        out.append([(v, p) for v, p in m.atoms if p > 0])
    return out


def count_strategies(family: ScenarioFamily, n: int) -> int:
    """Number of deterministic adapted strategies on the history tree."""
    u = len({v for atoms in _positive_atoms(family) for v, _ in atoms})
    decision_nodes = sum(u ** d for d in range(n))
    return len(family) ** decision_nodes


def strategy_sup_oracle(family: ScenarioFamily, phi: Callable, n: int, scaling: str = "none", *,
                        n_max: int = 4, max_strategies: int = 4096) -> float:
    """Best classical expectation of ``phi(scale(S_n))`` over adapted strategies.

    A strategy assigns a measure to every partial history of observed values.
    All of them are listed explicitly and each is evaluated by summing over
    complete paths, so no recursion over value functions is involved.
    """
    if n < 1 or n > n_max:
        raise BudgetExceeded(f"n={n} outside the oracle range 1..{n_max}")
    count = count_strategies(family, n)
    if count > max_strategies:
        raise BudgetExceeded(f"{count} strategies exceed the enumeration budget {max_strategies}")
    c = scale_factor(scaling, n)
    atoms = _positive_atoms(family)
    support = sorted({v for a in atoms for v, _ in a})
    histories = [h for d in range(n) for h in itertools.product(support, repeat=d)]
    index = {h: i for i, h in enumerate(histories)}
    paths = list(itertools.product(support, repeat=n))
    terminal = {path: float(phi(math.fsum(path) * c)) for path in paths}
    prob_of = [dict(a) for a in atoms]

    best = -math.inf
    for choice in itertools.product(range(len(family)), repeat=len(histories)):
        total = []
        for path in paths:
            weight = 1.0
            for d in range(n):
                weight *= prob_of[choice[index[path[:d]]]].get(path[d], 0.0)
                if weight == 0.0:
                    break
            if weight:
                total.append(weight * terminal[path])
        best = max(best, math.fsum(total))
    return best


def history_tree_sup(family: ScenarioFamily, phi: Callable, n: int, scaling: str = "none", *,
                     max_paths: int = 2_000_000) -> float:
    """Supremum over adapted strategies evaluated on the full history tree.

    Choices at distinct histories are unconstrained, so the supremum is taken
    node by node.  Unlike :func:`nested_expect` no histories are merged by
    their running sum and the terminal sum is formed along each path.
    """
    atoms = _positive_atoms(family)
    support = sorted({v for a in atoms for v, _ in a})
    support_size = len(support)
    if support_size ** n > max_paths:
        raise BudgetExceeded(f"{support_size ** n} paths exceed the budget {max_paths}")
    c = scale_factor(scaling, n)

    def value(path: tuple) -> float:
        if len(path) == n:
            return float(phi(math.fsum(path) * c))
        child = {v: value(path + (v,)) for v in support}
        return max(math.fsum(p * child[v] for v, p in measure) for measure in atoms)

    return value(())
