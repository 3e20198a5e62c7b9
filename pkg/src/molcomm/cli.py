"""Parameter sweeps over the link model, written as CSV.

Usage::

    molcomm simulate --config run.json --sweep D --from 1 --to 25 --steps 25 \\
        --trials 10000 --seed 7 --output sweep.csv
    molcomm validate --config run.json
    molcomm defaults > run.json

Exit codes: 0 success, 2 configuration error, 3 capacity solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, analysis, physics
from .modulation import Scheme, SchemeConfig
from .montecarlo import RngSpec, empirical_ser
from .stats import ArrivalMode, ArrivalModel, GAUSSIAN_MIN_VARIANCE, GaussianApproximationWarning

OUTPUT_DIR_ENV = "MOLCOMM_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3

SWEEP_PARAMETERS = ("D", "r", "z", "n")

CSV_COLUMNS = (
    "scheme", "sweep_param", "sweep_value", "p_hit", "ser_analytic", "ser_mc",
    "ser_mc_ci_lo", "ser_mc_ci_hi", "mi_uniform_bits", "capacity_bits",
    "capacity_bits_per_s",
)

NORMALIZATION_NOTES = {
    "oomosk": "molecules_per_bit released on lane l for every 1 bit; nothing for 0 bits",
    "mosk": "k * molecules_per_bit molecules of the one selected type per symbol; "
            "no or multiple firing types decode as symbol 0",
    "csk": "levels round(i * 2 k molecules_per_bit / (M - 1)); cuts at midpoints of "
           "adjacent expected counts, recomputed per sweep point, forced >= 1 and ascending",
}


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "D"
    start: float = 1.0
    stop: float = 25.0
    steps: int = 25
    spacing: str = "linear"

    def values(self) -> list[float]:
        if self.spacing == "log":
            vals = np.geomspace(self.start, self.stop, self.steps)
        else:
            vals = np.linspace(self.start, self.stop, self.steps)
        if self.parameter in ("z", "n"):
            return [int(math.floor(v + 0.5)) for v in vals]
        return [float(v) for v in vals]


@dataclass(frozen=True)
class RunConfig:
    schemes: tuple[str, ...] = ("oomosk", "mosk", "csk")
    k: int = 2
    molecules_per_bit: int = 125
    r: float = 20e-6
    T_s: float = 20e-6
    tau: float = 2e-6
    D: float = 13.0
    z: int = 20
    sweep: SweepSpec = field(default_factory=SweepSpec)
    trials: int = 0
    seed: int = 0
    mode: str = "gaussian"
    background: float = 0.0
    mc_method: str = "binomial"
    workers: int = 1
    output: Optional[str] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schemes"] = list(self.schemes)
        sw = d.pop("sweep")
        d["sweep"] = {"parameter": sw["parameter"], "from": sw["start"], "to": sw["stop"],
                      "steps": sw["steps"], "spacing": sw["spacing"]}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sweep = data.pop("sweep", None)
        if sweep is not None:
            data["sweep"] = _sweep_from_dict(sweep)
        if "schemes" in data:
            schemes = data["schemes"]
            if isinstance(schemes, str):
                schemes = schemes.split(",")
            data["schemes"] = tuple(s.strip().lower() for s in schemes)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _sweep_from_dict(sw: dict) -> SweepSpec:
    rename = {"from": "start", "to": "stop"}
    kw = {rename.get(key, key): val for key, val in sw.items()}
    allowed = {f.name for f in dataclasses.fields(SweepSpec)}
    if set(kw) - allowed:
        raise ConfigError(f"unknown sweep keys: {', '.join(sorted(set(kw) - allowed))}")
    return SweepSpec(**kw)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.severity}: {self.message}"


def _released_per_lane(scheme: str, k: int, mpb: int) -> int:
    if scheme == "oomosk":
        return mpb
    if scheme == "mosk":
        return k * mpb
    return max(SchemeConfig.csk(k, mpb, 1.0).csk_levels)


def validate(config: RunConfig) -> list[Diagnostic]:
    """Configuration errors first, then Gaussian-validity warnings."""
    errs: list[str] = []

    def need(cond, msg):
        if not cond:
            errs.append(msg)

    for s in config.schemes:
        need(s in ("oomosk", "mosk", "csk"), f"unknown scheme {s!r}")
    need(len(config.schemes) > 0, "at least one scheme is required")
    need(isinstance(config.k, int) and 1 <= config.k <= 10, "k must be an integer in 1..10")
    need(isinstance(config.molecules_per_bit, int) and config.molecules_per_bit >= 1,
         "molecules_per_bit must be a positive integer")
    need(config.r > 0, "distance must be positive")
    need(config.T_s > 0, "slot_duration must be positive")
    need(config.tau >= 0, "transmit_offset must be nonnegative")
    need(config.D > 0, "diffusion coefficient must be positive")
    need(isinstance(config.z, int) and config.z >= 1, "threshold z must be an integer >= 1")
    need(config.background >= 0, "background must be nonnegative")
    need(isinstance(config.trials, int) and config.trials >= 0, "trials must be >= 0")
    need(isinstance(config.seed, int) and 0 <= config.seed < 2**64,
         "seed must be a 64-bit unsigned integer")
    need(config.mc_method in ("binomial", "particle"), "mc_method must be binomial or particle")
    need(isinstance(config.workers, int) and config.workers >= 1, "workers must be >= 1")
    try:
        ArrivalMode.parse(config.mode)
    except ValueError:
        errs.append(f"mode must be gaussian or exact-binomial, got {config.mode!r}")
    sw = config.sweep
    need(sw.parameter in SWEEP_PARAMETERS,
         f"sweep parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
    need(sw.start < sw.stop, "sweep 'from' must be less than 'to'")
    need(isinstance(sw.steps, int) and sw.steps >= 2, "sweep steps must be >= 2")
    need(sw.spacing in ("linear", "log"), "sweep spacing must be linear or log")
    need(sw.start > 0, "sweep values must be positive")
    if sw.parameter in ("z", "n") and sw.start < 0.5:
        errs.append(f"sweep over {sw.parameter} must start at >= 1")

    diags = [Diagnostic("error", m) for m in errs]
    if errs or ArrivalMode.parse(config.mode) is not ArrivalMode.GAUSSIAN:
        return diags

    worst = None
    for scheme in config.schemes:
        for value in sw.values():
            cfg_run = _apply(config, value)
            geom = physics.ChannelGeometry(cfg_run.r, cfg_run.T_s, cfg_run.tau)
            p = float(physics.slot_hit_probability(geom, cfg_run.D))
            n = _released_per_lane(scheme, cfg_run.k, cfg_run.molecules_per_bit)
            var = ArrivalModel(n, p, background=cfg_run.background).variance
            if var < GAUSSIAN_MIN_VARIANCE and (worst is None or var < worst[0]):
                worst = (var, scheme, value)
    if worst is not None:
        var, scheme, value = worst
        diags.append(Diagnostic(
            "warning",
            f"Gaussian approximation unreliable (np(1-p) < {GAUSSIAN_MIN_VARIANCE:g}); "
            f"minimum {var:.3g} for {scheme} at {sw.parameter}={value:g}",
        ))
    return diags


def _apply(config: RunConfig, value) -> RunConfig:
    key = {"D": "D", "r": "r", "z": "z", "n": "molecules_per_bit"}[config.sweep.parameter]
    return dataclasses.replace(config, **{key: value})


def build_scheme(config: RunConfig, scheme: str) -> tuple[SchemeConfig, physics.ChannelGeometry]:
    geom = physics.ChannelGeometry(config.r, config.T_s, config.tau)
    s = Scheme.parse(scheme)
    if s is Scheme.OOMOSK:
        cfg = SchemeConfig.oomosk(config.k, config.molecules_per_bit, config.D, config.z)
    elif s is Scheme.MOSK:
        cfg = SchemeConfig.mosk(config.k, config.molecules_per_bit, config.D, config.z)
    else:
        cfg = SchemeConfig.csk(config.k, config.molecules_per_bit, config.D)
        cfg = cfg.with_csk_thresholds(float(physics.slot_hit_probability(geom, config.D)))
    return cfg, geom


def evaluate_point(config: RunConfig, scheme: str, value, *, stream_id: int = 0) -> dict:
    """One CSV row for ``scheme`` with the swept parameter set to ``value``."""
    run = _apply(config, value)
    cfg, geom = build_scheme(run, scheme)
    mode = ArrivalMode.parse(run.mode)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GaussianApproximationWarning)
        point, tm, ser, mi = analysis.analyze(cfg, geom, mode, background=run.background)
    cap = analysis.capacity(tm)
    if not cap.converged:
        raise NonConvergence(
            f"capacity did not converge for {scheme} at {run.sweep.parameter}={value}: "
            f"gap {cap.gap:.3g} bits after {cap.iterations} iterations"
        )
    row = {
        "scheme": scheme,
        "sweep_param": run.sweep.parameter,
        "sweep_value": value,
        "p_hit": point.lanes[0].hit_probability,
        "ser_analytic": ser,
        "ser_mc": None,
        "ser_mc_ci_lo": None,
        "ser_mc_ci_hi": None,
        "mi_uniform_bits": mi,
        "capacity_bits": cap.capacity_bits,
        "capacity_bits_per_s": cap.capacity_bits / run.T_s,
    }
    if run.trials > 0:
        rep = empirical_ser(cfg, geom, RngSpec(run.seed, stream_id), run.trials,
                            method=run.mc_method, background=run.background)
        row["ser_mc"] = rep.ser_estimate
        row["ser_mc_ci_lo"], row["ser_mc_ci_hi"] = rep.ci_95
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def sweep_rows(config: RunConfig) -> list[dict]:
    """Rows in scheme-major, sweep-value order; points may be evaluated concurrently."""
    values = config.sweep.values()
    jobs = [(si, scheme, vi, v) for si, scheme in enumerate(config.schemes)
            for vi, v in enumerate(values)]

    def run(job):
        si, scheme, vi, v = job
        return evaluate_point(config, scheme, v, stream_id=si * 1_000_000 + vi)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(run, jobs))
    return [run(j) for j in jobs]


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def render_metadata(config: RunConfig, diagnostics: list[Diagnostic]) -> str:
    lines = [
        f"tool = molcomm {__version__}",
        f"numpy = {np.__version__}",
        f"seed = {config.seed}",
        f"mode = {ArrivalMode.parse(config.mode).value}",
        f"sweep = {config.sweep.parameter} {config.sweep.spacing} "
        f"{config.sweep.start:g}..{config.sweep.stop:g} ({config.sweep.steps} steps)",
        f"detection_window = (tau, tau + T_s) after release = "
        f"({config.tau:g}, {config.tau + config.T_s:g}) s",
        "capacity_units = bits per symbol; capacity_bits_per_s = capacity_bits / T_s",
    ]
    for scheme in config.schemes:
        lines.append(f"normalization.{scheme} = {NORMALIZATION_NOTES[scheme]}")
    for d in diagnostics:
        lines.append(f"diagnostic = {d}")
    lines.append(f"config = {json.dumps(config.to_dict(), sort_keys=True)}")
    return "\n".join(lines) + "\n"


def metadata_path(output: Path) -> Path:
    return output.with_name(output.name + ".meta.txt")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def default_output() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / "sweep.csv"


def run_sweep(config: RunConfig, output: Optional[os.PathLike] = None) -> tuple[Path, list[dict]]:
    """Validate, evaluate every sweep point, then write the CSV and its metadata sidecar.

    Nothing is written unless every point succeeds.
    """
    diags = validate(config)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ConfigError("; ".join(d.message for d in errors))
    out = Path(output or config.output or default_output())
    rows = sweep_rows(config)
    _atomic_write(out, render_csv(rows))
    try:
        _atomic_write(metadata_path(out), render_metadata(config, diags))
    except BaseException:
        out.unlink(missing_ok=True)
        raise
    return out, rows


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_dict(data)


def _overrides(args) -> dict:
    flat = {
        "k": args.k, "molecules_per_bit": args.molecules_per_bit, "r": args.r,
        "T_s": args.slot_duration, "tau": args.tau, "D": args.diffusion, "z": args.z,
        "trials": args.trials, "seed": args.seed, "mode": args.mode,
        "background": args.background, "mc_method": args.mc_method,
        "workers": args.workers, "output": args.output,
    }
    out = {k: v for k, v in flat.items() if v is not None}
    if args.scheme is not None:
        out["schemes"] = tuple(s.strip().lower() for s in args.scheme.split(",") if s.strip())
    return out


def _sweep_overrides(args, base: SweepSpec) -> SweepSpec:
    kw = {}
    for attr, key in (("sweep", "parameter"), ("sweep_from", "start"), ("sweep_to", "stop"),
                      ("steps", "steps"), ("spacing", "spacing")):
        val = getattr(args, attr)
        if val is not None:
            kw[key] = val
    return dataclasses.replace(base, **kw)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, **_overrides(args))
    return dataclasses.replace(cfg, sweep=_sweep_overrides(args, cfg.sweep))


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--sweep", choices=SWEEP_PARAMETERS, help="parameter to sweep")
    p.add_argument("--from", dest="sweep_from", type=float)
    p.add_argument("--to", dest="sweep_to", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--spacing", choices=("linear", "log"))
    p.add_argument("--trials", type=int, help="Monte Carlo symbols per point (0 disables)")
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", help="comma-separated subset of oomosk,mosk,csk")
    p.add_argument("--mode", choices=("gaussian", "exact", "exact-binomial"))
    p.add_argument("--k", type=int, help="bits per symbol")
    p.add_argument("--molecules-per-bit", type=int)
    p.add_argument("--r", type=float, help="distance in meters")
    p.add_argument("--slot-duration", type=float, help="T_s in seconds")
    p.add_argument("--tau", type=float, help="window offset in seconds")
    p.add_argument("--D", dest="diffusion", type=float, help="diffusion coefficient, m^2/s")
    p.add_argument("--z", type=int, help="detection threshold (OOMoSK/MoSK)")
    p.add_argument("--background", type=float, help="mean stray arrivals per lane (default 0)")
    p.add_argument("--mc-method", choices=("binomial", "particle"))
    p.add_argument("--workers", type=int)
    p.add_argument("--output", "-o", help=f"CSV path (default ${OUTPUT_DIR_ENV}/sweep.csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molcomm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("simulate", help="run a sweep and write CSV"))
    _add_run_flags(sub.add_parser("validate", help="check a config and list diagnostics"))
    sub.add_parser("defaults", help="print the default config as JSON")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(json.dumps(RunConfig().to_dict(), indent=2))
        return EXIT_OK
    try:
        config = resolve_config(args)
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        diags = validate(config)
        for d in diags:
            print(d)
        return EXIT_CONFIG if any(d.severity == "error" for d in diags) else EXIT_OK
    try:
        for d in validate(config):
            print(d, file=sys.stderr)
        out, rows = run_sweep(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
