"""End-to-end LLN and CLT experiments and their reports."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import ValidationError
from .gheat import GridSpec, VolatilityBand, gnormal_expect
from .nested_dp import DPQuery, lln_second_moment, nested_expect
from .sublinear import (
    CERT_TOL,
    ScenarioFamily,
    TestFunction,
    catalog,
    certify_band,
    derived,
    make_symmetric_two_point_family,
    require_clt_admissible,
    test_function_from_json,
)

RATE_MIN_N = 4
RATE_FLOOR = 1e-12


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs shared by the experiment runners.

    ``family`` (or ``sigmas``, which builds the symmetric two-point family)
    describes the centered summand; ``mean_shift`` translates every atom.
    """

    family: ScenarioFamily | None = None
    sigmas: tuple[float, ...] | None = None
    band: tuple[float, float] | None = None
    phi: TestFunction = field(default_factory=lambda: catalog("positive_part"))
    n_list: tuple[int, ...] = (4, 16, 64)
    mean_shift: float = 0.0
    dx: float = 0.01
    half_width: float | None = None
    dp_backend: str = "exact_support"
    dp_dx: float | None = None
    dp_half_width: float | None = None
    k_list: tuple[float, ...] = (4, 8, 16, 32)
    format: str = "csv"

    def __post_init__(self):
        if (self.family is None) == (self.sigmas is None):
            raise ValidationError("give exactly one of family or sigmas")
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list or any(n < 1 for n in n_list):
            raise ValidationError("n_list must be nonempty with positive entries")
        if any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ValidationError(f"n_list must be strictly increasing, got {list(n_list)}")
        object.__setattr__(self, "n_list", n_list)
        object.__setattr__(self, "k_list", tuple(float(k) for k in self.k_list))
        if self.sigmas is not None:
            object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if self.format not in ("csv", "json"):
            raise ValidationError(f"format must be csv or json, got {self.format!r}")
        if self.band is not None:
            lo, hi = (float(b) for b in self.band)
            object.__setattr__(self, "band", (lo, hi))
            cert = certify_band(self.resolved_family())
            if (abs(cert.sigma_lower - lo) > CERT_TOL or abs(cert.sigma_upper - hi) > CERT_TOL):
                raise ValidationError(
                    f"band override ({lo}, {hi}) does not match the family's certified band "
                    f"({cert.sigma_lower}, {cert.sigma_upper})")

    def resolved_family(self) -> ScenarioFamily:
        if self.family is not None:
            return self.family
        return make_symmetric_two_point_family(self.sigmas)

    def dp_query(self, family: ScenarioFamily, phi, n: int, scaling: str) -> DPQuery:
        return DPQuery(family, phi, n, scaling=scaling, backend=self.dp_backend,
                       grid_dx=self.dp_dx, grid_half_width=self.dp_half_width)

    def to_json(self) -> dict:
        out: dict[str, Any] = {}
        if self.family is not None:
            out["family"] = self.family.to_json()
        else:
            out["sigmas"] = list(self.sigmas)
        if self.band is not None:
            out["band"] = list(self.band)
        try:
            out["phi"] = self.phi.to_json()
        except ValidationError:
            out["phi"] = self.phi.name
        out.update(
            n_list=list(self.n_list), mean_shift=self.mean_shift, dx=self.dx,
            half_width=self.half_width, dp_backend=self.dp_backend, dp_dx=self.dp_dx,
            dp_half_width=self.dp_half_width, k_list=list(self.k_list), format=self.format,
        )
        return out

    @classmethod
    def from_json(cls, obj: dict, **overrides) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(obj)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if "family" in overrides and overrides["family"] is not None:
            kw.pop("sigmas", None)
        if "sigmas" in overrides and overrides["sigmas"] is not None:
            kw.pop("family", None)
        if "family" in kw and not isinstance(kw["family"], ScenarioFamily):
            kw["family"] = ScenarioFamily.from_json(kw["family"])
        if "phi" in kw:
            kw["phi"] = test_function_from_json(kw["phi"])
        for key in ("sigmas", "n_list", "k_list", "band"):
            if key in kw and kw[key] is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class ReportRow:
    n: int
    dp_value: float
    reference_value: float
    abs_error: float


@dataclass
class ExperimentReport:
    kind: str
    rows: list[ReportRow]
    fitted_rate: float | None
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "dp_value", "reference", "abs_error"])
        for r in self.rows:
            w.writerow([r.n, f"{r.dp_value:.17g}", f"{r.reference_value:.17g}", f"{r.abs_error:.17g}"])
        rate = "none" if self.fitted_rate is None else f"{self.fitted_rate:.17g}"
        buf.write(f"# fitted_rate={rate}\n")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "rows": [{"n": r.n, "dp_value": r.dp_value, "reference": r.reference_value,
                      "abs_error": r.abs_error} for r in self.rows],
            "fitted_rate": self.fitted_rate,
            "metadata": self.metadata,
        }


def fit_rate(rows: Sequence[ReportRow], column: str = "abs_error",
             min_n: int = RATE_MIN_N) -> float | None:
    """Least-squares decay exponent of ``column`` against ``n`` on log-log axes.

    Uses rows with ``n >= min_n``; ``None`` when fewer than three remain or
    any value is below 1e-12.
    """
    used = [r for r in rows if r.n >= min_n]
    if len(used) < 3:
        return None
    ys = np.array([getattr(r, column) for r in used], dtype=float)
    if np.any(np.abs(ys) < RATE_FLOOR):
        return None
    xs = np.log([r.n for r in used])
    slope = np.polyfit(xs, np.log(np.abs(ys)), 1)[0]
    return float(-slope)


def run_lln(config: ExperimentConfig) -> ExperimentReport:
    """``E[|S_n/n - mu|^2]`` against the bound ``sigma_upper^2 / n``."""
    t0 = time.perf_counter()
    centered = config.resolved_family()
    cert = certify_band(centered)
    if not cert.zero_mean():
        raise ValidationError("family is not zero-mean; LLN needs E[X] = E[-X] = 0 after centering")
    mu = float(config.mean_shift)
    family = centered.translated(mu) if mu else centered
    rows = []
    for n in config.n_list:
        value = lln_second_moment(family, n, mu)
        bound = cert.second_moment_upper / n
        rows.append(ReportRow(n, value, bound, abs(value - bound)))
    slack = [r.reference_value - r.dp_value for r in rows]
    meta = {
        "config": config.to_json(),
        "certificate": cert.as_dict(),
        "bound_holds": all(s >= -1e-9 for s in slack),
        "min_slack": min(slack),
        "rate_column": "dp_value",
        "elapsed_seconds": time.perf_counter() - t0,
    }
    return ExperimentReport("lln", rows, fit_rate(rows, column="dp_value"), meta)


def clt_band(config: ExperimentConfig) -> tuple[VolatilityBand, Any]:
    cert = require_clt_admissible(config.resolved_family(), strict=True)
    if config.band is not None:
        return VolatilityBand(*config.band), cert
    return VolatilityBand.from_certificate(cert), cert


def run_clt(config: ExperimentConfig) -> ExperimentReport:
    """DP values of ``E[phi(S_n/sqrt(n))]`` against the G-normal expectation."""
    if config.mean_shift:
        raise ValidationError("the CLT experiment uses the centered family; mean_shift must be 0")
    t0 = time.perf_counter()
    family = config.resolved_family()
    band, cert = clt_band(config)
    spec = GridSpec.default(band, dx=config.dx, half_width=config.half_width)
    reference = gnormal_expect(config.phi, band, spec)
    t_pde = time.perf_counter() - t0
    rows = []
    for n in config.n_list:
        dp = nested_expect(config.dp_query(family, config.phi, n, "inv_sqrt_n"))
        rows.append(ReportRow(n, dp, reference, abs(dp - reference)))
    meta = {
        "config": config.to_json(),
        "certificate": cert.as_dict(),
        "band": [band.sigma_lower, band.sigma_upper],
        "pde_grid": {"dx": spec.dx, "half_width": spec.half_width},
        "pde_seconds": t_pde,
        "elapsed_seconds": time.perf_counter() - t0,
    }
    return ExperimentReport("clt", rows, fit_rate(rows), meta)


# -- Lipschitz approximation of uniformly continuous data --------------------------


def lipschitz_envelope(phi: TestFunction, k: float, half_width: float,
                       h: float = 2e-5) -> tuple[TestFunction, float]:
    """Inf-convolution ``inf_y phi(y) + k|x - y|`` sampled on ``[-half_width, half_width]``.

    Returns the piecewise-linear approximation and its sup-norm gap to ``phi``
    on the sampling grid.  Outside the grid the approximation is flat.
    """
    if k <= 0:
        raise ValidationError("slope k must be positive")
    m = int(math.ceil(half_width / h))
    xs = np.arange(-m, m + 1) * h
    g = np.asarray(phi(xs), dtype=float)
    idx = np.arange(xs.size)
    step = k * h
    # g_k[i] = min_j g[j] + step*|i - j|, as two running minima
    left = step * idx + np.minimum.accumulate(g - step * idx)
    right = np.minimum.accumulate((g + step * idx)[::-1])[::-1] - step * idx
    env = np.minimum(np.minimum(left, right), g)
    # the offsets +-step*idx cancel only up to rounding; snap those ties back to g
    env = np.where(g - env <= 1e-12 * (1.0 + np.abs(g)), g, env)
    gap = float(np.max(np.abs(g - env)))
    fn = derived(
        f"{phi.name}_lip{k:g}",
        lambda x, xs=xs, env=env: np.interp(x, xs, env),
        lipschitz_constant=float(k),
        bounded=True,
    )
    return fn, gap


@dataclass
class ApproxReport:
    k_list: list[float]
    gaps: list[float]
    reports: list[ExperimentReport]
    gaps_decreasing: bool
    stable: bool
    max_excess: float
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "gap", "n", "dp_value", "reference", "abs_error"])
        for k, gap, rep in zip(self.k_list, self.gaps, self.reports):
            for r in rep.rows:
                w.writerow([f"{k:.17g}", f"{gap:.17g}", r.n, f"{r.dp_value:.17g}",
                            f"{r.reference_value:.17g}", f"{r.abs_error:.17g}"])
        buf.write(f"# gaps_decreasing={str(self.gaps_decreasing).lower()}\n")
        buf.write(f"# stable={str(self.stable).lower()}\n")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "kind": "approx",
            "k_list": self.k_list,
            "gaps": self.gaps,
            "gaps_decreasing": self.gaps_decreasing,
            "stable": self.stable,
            "max_excess": self.max_excess,
            "reports": [r.to_json() for r in self.reports],
            "metadata": self.metadata,
        }


def uniform_approx_check(phi_uc: TestFunction, k_list: Sequence[float],
                         config: ExperimentConfig, h: float = 2e-5) -> ApproxReport:
    """Run the CLT experiment on Lipschitz approximations of a bounded UC function.

    Successive DP values and successive references may differ by at most
    twice the larger of the two sup-norm gaps.
    """
    if not getattr(phi_uc, "bounded", False):
        raise ValidationError(f"{getattr(phi_uc, 'name', phi_uc)!r} is not bounded")
    k_list = [float(k) for k in k_list]
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ValidationError("k_list must be strictly increasing")
    t0 = time.perf_counter()
    band, _ = clt_band(config)
    family = config.resolved_family()
    spec = GridSpec.default(band, dx=config.dx, half_width=config.half_width)
    reach = max(abs(v) for m in family.measures for v, _ in m.atoms) * math.sqrt(max(config.n_list))
    half_width = max(spec.half_width, reach) + 1.0

    gaps, reports = [], []
    for k in k_list:
        phi_k, gap = lipschitz_envelope(phi_uc, k, half_width, h)
        gaps.append(gap)
        reports.append(run_clt(replace(config, phi=phi_k)))

    gaps_decreasing = all(b < a or (a == 0 and b == 0) for a, b in zip(gaps, gaps[1:]))
    excess = []
    for i in range(len(k_list) - 1):
        allowed = 2.0 * max(gaps[i], gaps[i + 1])
        for ra, rb in zip(reports[i].rows, reports[i + 1].rows):
            excess.append(abs(ra.dp_value - rb.dp_value) - allowed)
            excess.append(abs(ra.reference_value - rb.reference_value) - allowed)
    max_excess = max(excess) if excess else -math.inf
    meta = {"config": config.to_json(), "phi": phi_uc.name, "envelope_half_width": half_width,
            "envelope_step": h, "elapsed_seconds": time.perf_counter() - t0}
    return ApproxReport(k_list, gaps, reports, gaps_decreasing, max_excess <= 1e-12,
                        max_excess, meta)


def report_text(report, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    return report.to_csv()
