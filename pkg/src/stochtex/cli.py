"""Command-line front end.

Four subcommands: `std` (discrepancy maps), `sweep` (scale-grid PSNR
evaluation), `reconstruct` (gradient reconstruction from the top-fraction
pixels), `texgrad` (reconstruction from discrepancies alone).

Every run prints its full effective configuration as `key=value` lines;
feeding those values back reproduces the outputs byte for byte.  Exit codes:
0 success, 2 usage/parameter error, 3 data error, 4 convergence error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from typing import Optional

from .discrepancy import std_map_avg
from .errors import ConvergenceError, DataError, ParameterError
from .field import load, save_map
from .neighborhood import build_model_set
from .reconstruct import poisson_reconstruct, psnr, select_top, texgrad_reconstruct
from .sweep import best_scales, run_sweep, write_best

__all__ = ["main", "parse_config", "RunConfig"]


@dataclass
class RunConfig:
    """Effective settings of one run; round-trips through the printed echo."""

    subcommand: str
    input: str
    format: Optional[str] = None
    domain: Optional[tuple] = None
    lam: float = 1.0
    kappa: float = 0.25
    n: int = 500
    runs: int = 1
    seed: int = 0
    fraction: float = 0.20
    kernel: str = "gray"
    threads: int = 1
    out_prefix: str = "stochtex_out"
    lambdas: Optional[tuple] = None
    kappas: Optional[tuple] = None
    cache_dir: Optional[str] = None

    def echo_lines(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                yield f"{f.name}=none"
            elif isinstance(v, tuple):
                yield f"{f.name}=" + ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                yield f"{f.name}={v!r}"
            else:
                yield f"{f.name}={v}"

    @classmethod
    def from_echo(cls, text: str) -> "RunConfig":
        kinds = {f.name: f for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if "=" not in line:
                continue
            key, _, val = line.partition("=")
            if key not in kinds:
                continue
            if val == "none":
                kw[key] = None
            elif key in ("domain", "lambdas", "kappas"):
                kw[key] = tuple(float(x) for x in val.split(","))
            elif key in ("lam", "kappa", "fraction"):
                kw[key] = float(val)
            elif key in ("n", "runs", "seed", "threads"):
                kw[key] = int(val)
            else:
                kw[key] = val
        return cls(**kw)


def _float_list(text: str):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}")


def _pair(text: str):
    vals = _float_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi: {text!r}")
    return vals


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stochtex",
        description="Texture discrepancy maps from constrained random walks",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, with_scales=True):
        p.add_argument("--input", required=True, help="raster file to analyze")
        p.add_argument("--format", choices=["pgm", "png", "csv"], default=None)
        p.add_argument("--domain", type=_pair, default=None, metavar="LO,HI",
                       help="physical value range of the data")
        if with_scales:
            p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                           help="spatial scale in pixels")
            p.add_argument("--kappa", type=float, default=0.25,
                           help="data scale, normalized units")
            p.add_argument("--lambda-physical", type=float, default=None,
                           help="spatial scale in physical units (needs --units-per-px)")
            p.add_argument("--kappa-physical", type=float, default=None,
                           help="data scale in physical units (needs --domain)")
            p.add_argument("--units-per-px", type=float, default=None,
                           help="physical length of one pixel")
        p.add_argument("--n", type=int, default=500, help="paths per side")
        p.add_argument("--runs", type=int, default=1,
                       help="independent repetitions to average")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--kernel", choices=["gray", "lab", "de2000"],
                       default="gray")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-prefix", default="stochtex_out")
        p.add_argument("--cache-dir", default=None,
                       help="directory for neighborhood model caches")

    p_std = sub.add_parser("std", help="per-pixel discrepancy map")
    common(p_std)

    p_sweep = sub.add_parser("sweep", help="scale-grid PSNR evaluation")
    common(p_sweep, with_scales=False)
    p_sweep.add_argument("--lambdas", type=_float_list, default=None,
                         metavar="L1,L2,...", help="spatial scale grid")
    p_sweep.add_argument("--kappas", type=_float_list, default=None,
                         metavar="K1,K2,...", help="data scale grid")
    p_sweep.add_argument("--fraction", type=float, default=0.20)
    p_sweep.set_defaults(n=100, runs=5)

    for name, help_ in (("reconstruct", "rebuild from top-fraction gradients"),
                        ("texgrad", "rebuild from discrepancies alone")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--fraction", type=float, default=0.20)

    return ap


def parse_config(argv) -> RunConfig:
    ns = _build_parser().parse_args(argv)
    d = vars(ns)
    lam = d.get("lam", 1.0)
    kappa = d.get("kappa", 0.25)
    # resolve physical-unit scales into pixel/normalized ones
    if d.get("lambda_physical") is not None:
        if d.get("units_per_px") is None:
            raise ParameterError("--lambda-physical needs --units-per-px")
        lam = d["lambda_physical"] / d["units_per_px"]
    if d.get("kappa_physical") is not None:
        if d.get("domain") is None:
            raise ParameterError("--kappa-physical needs --domain")
        lo, hi = d["domain"]
        kappa = d["kappa_physical"] / (hi - lo)
    return RunConfig(
        subcommand=d["subcommand"], input=d["input"], format=d["format"],
        domain=d["domain"], lam=float(lam), kappa=float(kappa), n=d["n"],
        runs=d["runs"], seed=d["seed"], fraction=d.get("fraction", 0.20),
        kernel=d["kernel"], threads=d["threads"], out_prefix=d["out_prefix"],
        lambdas=d.get("lambdas"), kappas=d.get("kappas"),
        cache_dir=d["cache_dir"],
    )


def _load_field(cfg: RunConfig, scalar: bool):
    f = load(cfg.input, cfg.format, cfg.domain)
    if scalar and f.channels != 1:
        f = f.to_gray()
    return f


def _emit(out, cfg: RunConfig, extra=()):
    print("# effective config", file=out)
    for line in cfg.echo_lines():
        print(line, file=out)
    for line in extra:
        print(line, file=out)


def cmd_std(cfg: RunConfig, out) -> int:
    f = _load_field(cfg, scalar=False)
    m = std_map_avg(f, cfg.lam, cfg.kappa, n=cfg.n, runs=cfg.runs,
                    seed=cfg.seed, kernel_kind=cfg.kernel,
                    threads=cfg.threads, cache_dir=cfg.cache_dir)
    pgm = cfg.out_prefix + ".std.pgm"
    csvp = cfg.out_prefix + ".std.csv"
    diag = cfg.out_prefix + ".diag.txt"
    save_map(m.std, pgm, "pgm")
    save_map(m.std, csvp, "csv")
    with open(diag, "w") as fh:
        fh.write(m.diagnostics_text())
    _emit(out, cfg, [f"map_pgm={pgm}", f"map_csv={csvp}", f"diagnostics={diag}"])
    return 0


def cmd_sweep(cfg: RunConfig, out) -> int:
    f = _load_field(cfg, scalar=True)
    csvp = cfg.out_prefix + ".sweep.csv"
    bestp = cfg.out_prefix + ".best.txt"
    grid = run_sweep(f, cfg.lambdas, cfg.kappas, n=cfg.n, runs=cfg.runs,
                     fraction=cfg.fraction, seed=cfg.seed,
                     threads=cfg.threads, checkpoint=csvp,
                     cache_dir=cfg.cache_dir)
    write_best(grid, bestp)
    lam, kap, p = best_scales(grid)
    _emit(out, cfg, [f"sweep_csv={csvp}", f"best_file={bestp}",
                     f"best_lambda={lam!r}", f"best_kappa={kap!r}",
                     f"best_psnr={p!r}"])
    return 0


def _reconstruction(cfg: RunConfig, texture_gradients: bool, out) -> int:
    f = _load_field(cfg, scalar=True)
    models = build_model_set(cfg.lam, cache_dir=cfg.cache_dir)
    m = std_map_avg(f, cfg.lam, cfg.kappa, n=cfg.n, runs=cfg.runs,
                    seed=cfg.seed, threads=cfg.threads,
                    cache_dir=cfg.cache_dir, models=models)
    if texture_gradients:
        rec = texgrad_reconstruct(f, m, models)
        stem = ".texgrad"
    else:
        rec = poisson_reconstruct(f, select_top(m.std, cfg.fraction))
        stem = ".recon"
    csvp = cfg.out_prefix + stem + ".csv"
    rec.save(csvp, "csv")
    written = [f"recon_csv={csvp}"]
    if rec.mask.all():
        pgmp = cfg.out_prefix + stem + ".pgm"
        rec.save(pgmp, "pgm")
        written.append(f"recon_pgm={pgmp}")
    _emit(out, cfg, written + [f"psnr={psnr(f, rec)!r}"])
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    out = sys.stdout
    try:
        cfg = parse_config(argv)
        if cfg.subcommand == "std":
            return cmd_std(cfg, out)
        if cfg.subcommand == "sweep":
            return cmd_sweep(cfg, out)
        if cfg.subcommand == "reconstruct":
            return _reconstruction(cfg, texture_gradients=False, out=out)
        return _reconstruction(cfg, texture_gradients=True, out=out)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
