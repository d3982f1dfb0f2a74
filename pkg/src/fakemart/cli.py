"""Command-line front end.

Subcommands ``inspect``, ``simulate``, ``verify`` and ``madan-yor`` write
CSV/JSON files into ``--out``. Settings come from defaults, then an
optional JSON ``--config`` file, then command-line flags (flags win). The
effective configuration is echoed as the first line of every CSV
(``# config: {...}``) and under ``config.run`` in report.json.

Exit codes: 0 success, 1 a verification check failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .laws import get_law
from .mixture import FakeSpec, SpecError, residual_density, local_vol_eta, validate_spec
from .simulate import PathGrid, RNGConfig, sample_fake
from .timechange import InvalidClockError, make_timechange
from .verify import VerificationConfig, VerificationReport, full_verification, madan_yor_checks

__all__ = ["RunConfig", "ConfigError", "build_parser", "load_config", "main"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

# Settings that cannot change any output and so stay out of the echo.
_NOT_ECHOED = ("out", "workers")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    law: str = "ebm"
    K: float = 0.5
    c: float = 0.25
    T: float = 1.0
    n_paths: int = 50_000
    n_steps: int = 1000
    seed: int = 42
    out: str = "out"
    workers: int = 1
    # simulate: recording stride; None means n_steps // 100.
    record_every: Optional[int] = None
    report_times: List[float] = None
    # inspect
    clock_points: int = 100
    surface_times: int = 16
    surface_states: int = 101
    # verify
    madan_yor: bool = False
    eta_scale: float = 1.0
    # madan-yor
    bm_step: float = 1e-4
    reverse_barycentre: bool = False

    def __post_init__(self):
        if self.report_times is None:
            self.report_times = [0.25, 0.5, 1.0]

    def echo(self) -> dict:
        d = asdict(self)
        for k in _NOT_ECHOED:
            d.pop(k)
        return d

    def header(self) -> str:
        return "# config: " + json.dumps(self.echo(), sort_keys=True) + "\n"


_FIELDS = {f.name for f in fields(RunConfig)}


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    """Defaults < JSON file < command-line overrides (``None`` means unset)."""
    values = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - _FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values.update(data)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: RunConfig) -> None:
    if cfg.law not in ("ebm", "bm"):
        raise ConfigError(f"law must be 'ebm' or 'bm', got {cfg.law!r}")
    for name in ("n_paths", "n_steps", "clock_points", "surface_times", "surface_states", "workers"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    for name in ("T", "bm_step", "eta_scale"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
            raise ConfigError(f"{name} must be a positive number, got {v!r}")
    if cfg.record_every is not None and (not isinstance(cfg.record_every, int) or cfg.record_every < 1):
        raise ConfigError("record_every must be a positive integer")
    rt = cfg.report_times
    if not rt or any(not (0 < t <= cfg.T) for t in rt) or list(rt) != sorted(set(rt)):
        raise ConfigError("report_times must be increasing and lie in (0, T]")


def make_spec(cfg: RunConfig) -> FakeSpec:
    law = get_law(cfg.law)
    try:
        return validate_spec(law, make_timechange(law, cfg.K), cfg.c)
    except (SpecError, InvalidClockError) as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, cfg: RunConfig, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(cfg.header())
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def cmd_inspect(cfg: RunConfig, spec: FakeSpec) -> int:
    law, tc = spec.law, spec.tc
    t_clock = np.linspace(0.0, cfg.T, cfg.clock_points + 1)
    a = tc.a(t_clock)
    ad = tc.a_dot(t_clock)
    write_csv(os.path.join(cfg.out, "clock.csv"), cfg, ("t", "a", "a_dot"), zip(t_clock, a, ad))

    t_surf = np.linspace(cfg.T / cfg.surface_times, cfg.T, cfg.surface_times)
    eta_rows, h_rows = [], []
    for t in t_surf:
        y = law.state_grid(t, cfg.surface_states)
        eta = local_vol_eta(spec, t, y)
        h = residual_density(spec, t, y)
        eta_rows.extend(zip([t] * len(y), y, eta))
        h_rows.extend(zip([t] * len(y), y, h))
    write_csv(os.path.join(cfg.out, "eta_surface.csv"), cfg, ("t", "y", "eta"), eta_rows)
    write_csv(os.path.join(cfg.out, "h_density.csv"), cfg, ("t", "y", "h"), h_rows)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, spec: FakeSpec) -> int:
    grid = PathGrid(cfg.T, cfg.n_steps)
    stride = cfg.record_every or max(1, cfg.n_steps // 100)
    ens = sample_fake(spec, grid, cfg.n_paths, RNGConfig(seed=cfg.seed, workers=cfg.workers),
                      record_every=stride)
    times = ens.times

    def path_rows():
        for pid in range(ens.n_paths):
            comp = ens.component[pid]
            for t, v in zip(times, ens.values[pid]):
                yield pid, comp, t, v

    write_csv(os.path.join(cfg.out, "paths.csv"), cfg, ("path_id", "component", "t", "value"), path_rows())
    write_csv(os.path.join(cfg.out, "qv.csv"), cfg, ("path_id", "component", "qv"),
              zip(range(ens.n_paths), ens.component, ens.qv))
    frac = float(np.mean(ens.component == "G"))
    print(f"simulated {ens.n_paths} paths; fraction G = {frac:.4f} (c = {spec.c})")
    return EXIT_OK


def _verification_config(cfg: RunConfig) -> VerificationConfig:
    return VerificationConfig(seed=cfg.seed, n_paths=cfg.n_paths, n_steps=cfg.n_steps, T=cfg.T,
                              report_times=tuple(cfg.report_times), madan_yor=cfg.madan_yor,
                              my_paths=cfg.n_paths, my_bm_step=cfg.bm_step,
                              my_reverse=cfg.reverse_barycentre, eta_scale=cfg.eta_scale,
                              workers=cfg.workers)


def _write_report(cfg: RunConfig, report: VerificationReport) -> None:
    report.config["run"] = cfg.echo()
    with open(os.path.join(cfg.out, "report.json"), "w") as fh:
        fh.write(report.to_json(sort_keys=True) + "\n")
    for c in report.checks:
        print(f"{c.status.upper():7s} {c.check}: {c.statistic:.6g} (threshold {c.threshold:.6g})")


def cmd_verify(cfg: RunConfig, spec: FakeSpec) -> int:
    if cfg.madan_yor and cfg.law != "ebm":
        raise ConfigError("--madan-yor applies to law=ebm only")
    for t in cfg.report_times:
        try:
            PathGrid(cfg.T, cfg.n_steps).index_of(t)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    report = full_verification(spec, _verification_config(cfg))
    _write_report(cfg, report)
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def cmd_madan_yor(cfg: RunConfig, spec: FakeSpec) -> int:
    if cfg.law != "ebm":
        raise ConfigError("madan-yor embeds the exponential Brownian marginals; use law=ebm")
    vcfg = _verification_config(cfg)
    report = VerificationReport(config={"seed": cfg.seed, "n_paths": cfg.n_paths,
                                        "bm_step": cfg.bm_step,
                                        "report_times": list(cfg.report_times),
                                        "ks_alpha": vcfg.ks_alpha, "mean_z": vcfg.mean_z,
                                        "ks_allowance": vcfg.my_ks_allowance})
    emb = madan_yor_checks(vcfg, report)

    def rows():
        for pid in range(emb.n_paths):
            for t, v in zip(emb.report_times, emb.values[pid]):
                yield pid, t, v

    write_csv(os.path.join(cfg.out, "embedded.csv"), cfg, ("path_id", "t_report", "value"), rows())
    _write_report(cfg, report)
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


_COMMANDS = {"inspect": cmd_inspect, "simulate": cmd_simulate, "verify": cmd_verify,
             "madan-yor": cmd_madan_yor}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--law", choices=("ebm", "bm"), help="reference law (default ebm)")
    common.add_argument("--K", type=float, help="clock ratio bound in (0, 1) (default 0.5)")
    common.add_argument("--c", type=float, help="mixing weight in (0, K) (default 0.25)")
    common.add_argument("--T", type=float, help="horizon (default 1)")
    common.add_argument("--paths", dest="n_paths", type=int, help="number of paths (default 50000)")
    common.add_argument("--steps", dest="n_steps", type=int, help="time steps (default 1000)")
    common.add_argument("--seed", type=int, help="master seed (default 42)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--workers", type=int, help="worker threads; never changes the output")

    parser = argparse.ArgumentParser(prog="fakemart", description="Fake exponential Brownian motion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("inspect", parents=[common], help="dump clock, local volatility and residual density")
    p = sub.add_parser("simulate", parents=[common], help="simulate the fake process")
    p.add_argument("--record-every", type=int, help="recording stride (default steps // 100)")
    p = sub.add_parser("verify", parents=[common], help="run the verification battery")
    p.add_argument("--madan-yor", action="store_const", const=True, default=None,
                   help="also run the embedding checks")
    p.add_argument("--eta-scale", type=float, help="scale eta in the simulator (negative control)")
    p = sub.add_parser("madan-yor", parents=[common], help="simulate the Azema-Yor embedding")
    p.add_argument("--bm-step", type=float, help="Brownian step variance (default 1e-4)")
    p.add_argument("--reverse-barycentre", action="store_const", const=True, default=None,
                   help="negative control: barycentre curves in reversed time order")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides)
        spec = make_spec(cfg)
        os.makedirs(cfg.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
