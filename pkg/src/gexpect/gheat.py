"""Explicit monotone finite differences for the G-heat equation.

Solves ``u_t - G(u_xx) = 0`` with ``u(0, .) = phi`` on a truncated interval
and reads the G-normal expectation of ``phi`` off ``u(1, 0)``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CFLViolation, ValidationError

CFL_SLACK = 1e-12


@dataclass(frozen=True)
class VolatilityBand:
    sigma_lower: float
    sigma_upper: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lower), float(self.sigma_upper)
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or lo > hi:
            raise ValidationError(f"need 0 <= sigma_lower <= sigma_upper < inf, got ({lo}, {hi})")
        object.__setattr__(self, "sigma_lower", lo)
        object.__setattr__(self, "sigma_upper", hi)

    @property
    def strict(self) -> bool:
        return self.sigma_lower > 0

    def require_strict(self) -> "VolatilityBand":
        if not self.strict:
            raise ValidationError("volatility band must have sigma_lower > 0")
        return self

    @classmethod
    def from_certificate(cls, cert) -> "VolatilityBand":
        return cls(cert.sigma_lower, cert.sigma_upper)


@dataclass(frozen=True)
class GridSpec:
    """Space-time discretization.

    The spatial grid is ``center + k*dx`` for ``|k| <= round(half_width/dx)``,
    so the evaluation point is always a node.
    """

    half_width: float
    dx: float
    horizon: float = 1.0
    safety_factor: float = 0.5
    center: float = 0.0

    def __post_init__(self):
        if not (self.half_width > 0 and self.dx > 0 and self.horizon > 0):
            raise ValidationError("half_width, dx and horizon must be positive")
        if not (0 < self.safety_factor <= 1):
            raise ValidationError("safety_factor must lie in (0, 1]")
        if self.half_width / self.dx < 16:
            raise ValidationError("need at least 16 cells per half width (half_width/dx >= 16)")

    @classmethod
    def default(cls, band: VolatilityBand, dx: float = 0.01, horizon: float = 1.0,
                half_width: float | None = None, **kw) -> "GridSpec":
        if half_width is None:
            half_width = max(8.0 * band.sigma_upper * math.sqrt(horizon), 16 * dx)
        return cls(half_width=half_width, dx=dx, horizon=horizon, **kw)

    @property
    def n_half(self) -> int:
        return int(round(self.half_width / self.dx))

    def nodes(self) -> np.ndarray:
        k = np.arange(-self.n_half, self.n_half + 1)
        return self.center + k * self.dx

    def max_dt(self, band: VolatilityBand) -> float:
        if band.sigma_upper == 0:
            return math.inf
        return self.dx ** 2 / band.sigma_upper ** 2

    def dt(self, band: VolatilityBand) -> float:
        return self.safety_factor * self.max_dt(band)


@dataclass(frozen=True)
class SolutionSurface:
    grid: GridSpec
    band: VolatilityBand
    times: np.ndarray   # checkpoint times, increasing, first is 0
    x: np.ndarray       # spatial nodes
    values: np.ndarray  # shape (len(times), len(x))
    dt: float

    def to_csv(self, stream=None) -> str:
        """Write ``t,x,u`` rows, checkpoint-major, 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "u"])
        for k, t in enumerate(self.times):
            for xj, uj in zip(self.x, self.values[k]):
                w.writerow([f"{t:.17g}", f"{xj:.17g}", f"{uj:.17g}"])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def g_function(alpha, band: VolatilityBand):
    """``G(a) = (sigma_upper^2 a^+ - sigma_lower^2 a^-) / 2``; vectorized."""
    a = np.asarray(alpha, dtype=float)
    out = 0.5 * (band.sigma_upper ** 2 * np.maximum(a, 0.0)
                 - band.sigma_lower ** 2 * np.maximum(-a, 0.0))
    return float(out) if out.ndim == 0 else out


def _check_cfl(band: VolatilityBand, dx: float, dt: float) -> None:
    limit = math.inf if band.sigma_upper == 0 else dx ** 2 / band.sigma_upper ** 2
    if dt > limit * (1 + CFL_SLACK):
        raise CFLViolation(f"dt={dt:g} exceeds the monotonicity bound dx^2/sigma_upper^2={limit:g}")


def _step(u: np.ndarray, out: np.ndarray, hi2: float, lo2: float, r: float) -> None:
    # r = dt/dx^2; boundary entries of `out` are left untouched
    d2 = u[2:] - 2.0 * u[1:-1] + u[:-2]
    out[1:-1] = u[1:-1] + r * 0.5 * (hi2 * np.maximum(d2, 0.0) + lo2 * np.minimum(d2, 0.0))


def step_explicit(u, band: VolatilityBand, dx: float, dt: float) -> np.ndarray:
    """One explicit step; the two end nodes are held fixed."""
    _check_cfl(band, dx, dt)
    u = np.asarray(u, dtype=float)
    out = u.copy()
    _step(u, out, band.sigma_upper ** 2, band.sigma_lower ** 2, dt / dx ** 2)
    return out


def solve_gheat(phi: Callable, band: VolatilityBand, spec: GridSpec, *,
                n_checkpoints: int = 10, dt: float | None = None,
                offset: float = 0.0) -> SolutionSurface:
    """March the scheme from ``t = 0`` to ``spec.horizon``.

    ``n_checkpoints`` uniformly spaced layers (plus ``t = 0``) are kept.  The
    time step defaults to ``safety_factor * dx^2 / sigma_upper^2`` shrunk so
    that every checkpoint lands on a step.  ``offset`` is the distance of the
    intended evaluation point from the grid center, used only for the
    domain-width warning.
    """
    if n_checkpoints < 1:
        raise ValidationError("n_checkpoints must be >= 1")
    T = spec.horizon
    if dt is None:
        dt_target = spec.dt(band)
    else:
        _check_cfl(band, spec.dx, dt)
        dt_target = dt
    interval = T / n_checkpoints
    per_interval = 1 if math.isinf(dt_target) else max(1, math.ceil(interval / dt_target - 1e-9))
    dt_used = interval / per_interval
    _check_cfl(band, spec.dx, dt_used)

    need = 6.0 * band.sigma_upper * math.sqrt(T) + abs(offset)
    if spec.half_width < need:
        warnings.warn(
            f"half_width={spec.half_width:g} is below 6*sigma_upper*sqrt(T)+|offset|={need:g}; "
            "boundary effects may be visible",
            RuntimeWarning, stacklevel=2,
        )

    x = spec.nodes()
    u = np.asarray(phi(x), dtype=float).copy()
    if not np.all(np.isfinite(u)):
        raise ValidationError("initial data is not finite on the grid")
    hi2, lo2, r = band.sigma_upper ** 2, band.sigma_lower ** 2, dt_used / spec.dx ** 2
    layers = [u.copy()]
    nxt = u.copy()
    for _ in range(n_checkpoints):
        for _ in range(per_interval):
            _step(u, nxt, hi2, lo2, r)
            u, nxt = nxt, u
        layers.append(u.copy())
    times = np.linspace(0.0, T, n_checkpoints + 1)
    return SolutionSurface(spec, band, times, x, np.array(layers), dt_used)


def evaluate(surface: SolutionSurface, t: float, x: float) -> float:
    """Bilinear interpolation of the stored layers; exact at stored nodes."""
    times, xs = surface.times, surface.x
    eps_t = 1e-12 * max(1.0, times[-1])
    eps_x = 1e-12 * max(1.0, abs(xs[0]), abs(xs[-1]))
    if not (times[0] - eps_t <= t <= times[-1] + eps_t):
        raise ValidationError(f"t={t} outside stored range [{times[0]}, {times[-1]}]")
    if not (xs[0] - eps_x <= x <= xs[-1] + eps_x):
        raise ValidationError(f"x={x} outside stored range [{xs[0]}, {xs[-1]}]")
    k = int(np.searchsorted(times, t, side="left"))
    k = min(max(k, 0), len(times) - 1)
    if abs(times[k] - t) <= eps_t or k == 0:
        return float(np.interp(x, xs, surface.values[k]))
    t0, t1 = times[k - 1], times[k]
    w = (t - t0) / (t1 - t0)
    v0 = np.interp(x, xs, surface.values[k - 1])
    v1 = np.interp(x, xs, surface.values[k])
    return float((1 - w) * v0 + w * v1)


def gnormal_expect(phi: Callable, band: VolatilityBand, spec: GridSpec | None = None, *,
                   dx: float = 0.01, half_width: float | None = None) -> float:
    """G-normal expectation of ``phi``: the scheme's value at ``(1, 0)``."""
    if spec is None:
        spec = GridSpec.default(band, dx=dx, half_width=half_width)
    if spec.horizon != 1.0:
        raise ValidationError("gnormal_expect needs a grid with horizon 1")
    surface = solve_gheat(phi, band, spec, n_checkpoints=1)
    return evaluate(surface, 1.0, 0.0)


def terminal_value_function(phi: Callable, band: VolatilityBand, spec: GridSpec,
                            n_checkpoints: int = 10) -> Callable[[float, float], float]:
    """``V(t, x)`` solving ``V_t + G(V_xx) = 0`` with ``V(T, .) = phi``.

    Obtained by reversing time in the forward solution.
    """
    surface = solve_gheat(phi, band, spec, n_checkpoints=n_checkpoints)
    T = spec.horizon
    return lambda t, x: evaluate(surface, T - t, x)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def gaussian_expect(phi: Callable, sigma: float, *, panel_width: float = 0.25) -> float:
    """Classical ``E[phi(sigma N)]`` by composite Gauss-Legendre on ``[-10 sigma, 10 sigma]``.

    Panels are split at ``phi.breakpoints`` so kinks sit on panel edges.
    """
    if sigma < 0:
        raise ValidationError("sigma must be nonnegative")
    if sigma == 0:
        return float(phi(0.0))
    lo, hi = -10.0 * sigma, 10.0 * sigma
    edges = set(np.linspace(lo, hi, int(math.ceil(20.0 / panel_width)) + 1).tolist())
    for b in getattr(phi, "breakpoints", ()):
        if lo < b < hi:
            edges.add(float(b))
    edges = np.array(sorted(edges))
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    pts = (a + b) * 0.5 + half * _GL_NODES[None, :]
    w = half * _GL_WEIGHTS[None, :]
    dens = np.exp(-0.5 * (pts / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    vals = np.asarray(phi(pts.ravel()), dtype=float).reshape(pts.shape)
    return float(np.sum(w * dens * vals))

