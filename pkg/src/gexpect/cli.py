"""Command-line front end.

Exit status: 0 on success, 2 on validation failures, 1 on numerical failures.
A report file is only written once the whole computation has succeeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .errors import NumericalError, ValidationError
from .experiments import ExperimentConfig, report_text, run_clt, run_lln, uniform_approx_check
from .gheat import GridSpec, VolatilityBand, evaluate, solve_gheat
from .nested_dp import DEFAULT_SUPPORT_CAP, DPQuery, solve
from .sublinear import ScenarioFamily, certify_band, test_function_from_json


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers: {text!r}") from exc


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def load_phi(spec: str):
    """Catalog name, or a path to a ``{"knots": ...}`` document."""
    if spec.endswith(".json") or os.path.exists(spec):
        return test_function_from_json(_load_json(spec))
    return test_function_from_json(spec)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gexpect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with ExperimentConfig field names")
    src = common.add_mutually_exclusive_group()
    src.add_argument("--sigmas", type=_floats, help="comma list; symmetric two-point family")
    src.add_argument("--family", help="path to a family JSON document")
    common.add_argument("--phi", help="catalog name or path to a knots JSON document")
    common.add_argument("--dx", type=float)
    common.add_argument("--half-width", type=float, dest="half_width")
    common.add_argument("--n", type=_ints, dest="n_list", help="comma list of sample sizes")
    common.add_argument("--mu", type=float, dest="mean_shift")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--out", help="output path (stdout when omitted)")

    g = sub.add_parser("gheat", parents=[common], help="solve the G-heat equation, write u(t,x)")
    g.add_argument("--horizon", type=float, default=1.0)
    g.add_argument("--checkpoints", type=int, default=10)
    g.add_argument("--safety-factor", type=float, default=0.5, dest="safety_factor")
    g.add_argument("--require-strict-band", action="store_true", dest="strict")

    e = sub.add_parser("expect", parents=[common], help="nested sublinear expectation of phi(S_n)")
    e.add_argument("--scaling", choices=("none", "inv_sqrt_n", "inv_n"), default="none")
    e.add_argument("--backend", choices=("exact_support", "grid"), default="exact_support")
    e.add_argument("--grid-dx", type=float, dest="grid_dx")
    e.add_argument("--grid-half-width", type=float, dest="grid_half_width")
    e.add_argument("--support-cap", type=int, default=DEFAULT_SUPPORT_CAP, dest="support_cap")

    sub.add_parser("lln", parents=[common], help="second-moment law of large numbers")
    sub.add_parser("clt", parents=[common], help="central limit theorem against the G-normal")
    a = sub.add_parser("approx", parents=[common], help="CLT for Lipschitz approximations")
    a.add_argument("--k", type=_floats, dest="k_list", help="comma list of Lipschitz slopes")
    return p


def build_config(args) -> ExperimentConfig:
    base = _load_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise ValidationError("config file must hold a JSON object")
    overrides = {
        "sigmas": args.sigmas,
        "family": ScenarioFamily.from_json(_load_json(args.family)) if args.family else None,
        "phi": load_phi(args.phi) if args.phi else None,
        "dx": args.dx,
        "half_width": args.half_width,
        "n_list": args.n_list,
        "mean_shift": args.mean_shift,
        "format": args.format,
    }
    if getattr(args, "k_list", None) is not None:
        overrides["k_list"] = args.k_list
    return ExperimentConfig.from_json(base, **overrides)


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _band_for_gheat(cfg: ExperimentConfig, strict: bool) -> VolatilityBand:
    if cfg.band is not None:
        band = VolatilityBand(*cfg.band)
    elif cfg.sigmas is not None:
        band = VolatilityBand(min(cfg.sigmas), max(cfg.sigmas))
    else:
        band = VolatilityBand.from_certificate(certify_band(cfg.family))
    return band.require_strict() if strict else band


def _gheat(args) -> str:
    base = _load_json(args.config) if args.config else {}
    # sigmas may be zero here, so they bypass family construction
    sigmas = args.sigmas if args.sigmas is not None else base.get("sigmas")
    if sigmas is not None:
        if not sigmas:
            raise ValidationError("--sigmas needs at least one value")
        band = VolatilityBand(min(sigmas), max(sigmas))
    else:
        band = _band_for_gheat(build_config(args), strict=False)
    if args.strict:
        band.require_strict()
    phi = load_phi(args.phi) if args.phi else test_function_from_json(base.get("phi", "positive_part"))
    dx = args.dx or base.get("dx") or 0.01
    half_width = args.half_width or base.get("half_width")
    spec = GridSpec.default(band, dx=dx, horizon=args.horizon, half_width=half_width,
                            safety_factor=args.safety_factor)
    surface = solve_gheat(phi, band, spec, n_checkpoints=args.checkpoints)
    value = evaluate(surface, spec.horizon, 0.0)
    print(f"u({spec.horizon:g}, 0) = {value:.17g}", file=sys.stderr)
    return surface.to_csv()


def _expect(args) -> str:
    cfg = build_config(args)
    n_list = cfg.n_list if args.n_list is not None or args.config else (1,)
    if len(n_list) != 1:
        raise ValidationError("expect takes a single --n")
    q = DPQuery(cfg.resolved_family(), cfg.phi, n_list[0], scaling=args.scaling,
                backend=args.backend, grid_dx=args.grid_dx, grid_half_width=args.grid_half_width,
                support_cap=args.support_cap)
    result = solve(q)
    if cfg.format == "json" or args.out:
        return json.dumps(result.to_json(), sort_keys=True) + "\n"
    return f"{result.value:.17g}\n"


def _experiment(args) -> str:
    cfg = build_config(args)
    if args.command == "lln":
        report = run_lln(cfg)
    elif args.command == "clt":
        report = run_clt(cfg)
    else:
        report = uniform_approx_check(cfg.phi, cfg.k_list, cfg)
    return report_text(report, cfg.format)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gheat":
            text = _gheat(args)
        elif args.command == "expect":
            text = _expect(args)
        else:
            text = _experiment(args)
        _write(text, args.out)
    except ValidationError as exc:
        print(f"gexpect: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"gexpect: numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


def run() -> None:
    sys.exit(main())
