"""Batch command-line front end."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .arma import (
    IDENTIFY_MARGIN,
    ARMAFactorModel,
    IdentifySettings,
    dumps,
    fit_percent,
    identify_arma,
    one_step_predict,
    random_ar_polynomial,
    simulate_arma,
)
from .dual import AdmmSettings
from .errors import ArmaFactorError
from .estimate import MAFactorModel, TimeSeries, random_factor_model, truncated_periodogram
from .recovery import NULL_TOL
from .specalg import SOLVER_GRID, FrequencyGrid
from .tolerance import DEFAULT_TRIALS, estimate_delta_alpha

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
ADMM_FIELDS = tuple(f.name for f in fields(AdmmSettings))


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Flat run configuration; JSON config keys use these names."""

    admm: AdmmSettings = field(default_factory=AdmmSettings)
    grid_size: int = SOLVER_GRID
    alpha: float = 0.5
    trials: int = DEFAULT_TRIALS
    tau: float = NULL_TOL
    margin: float = IDENTIFY_MARGIN
    seed: int = 0
    n: int = 2
    p: int = 0
    ar_method: str = "iv"
    strict: bool = False

    def validate(self):
        if not 0 < self.alpha < 1:
            raise UsageError("alpha must lie in (0, 1)")
        if self.n < 0 or self.p < 0:
            raise UsageError("orders must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned value")
        try:
            self.settings()
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def settings(self, workers: int = 1) -> IdentifySettings:
        return IdentifySettings(self.admm, self.grid_size, self.trials, self.tau, self.seed,
                                self.margin, workers, self.ar_method, True, self.strict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("admm"))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        own = {f.name for f in fields(cls)} - {"admm"}
        unknown = set(d) - own - set(ADMM_FIELDS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            admm = AdmmSettings.from_dict({k: v for k, v in d.items() if k in ADMM_FIELDS})
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        return cls(admm=admm, **{k: v for k, v in d.items() if k in own})


def thread_cap() -> int:
    raw = os.environ.get("DFA_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise UsageError("DFA_THREADS must be an integer") from None
    return os.cpu_count() or 1


# -- CSV ------------------------------------------------------------------------------------

def fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_series(path: Path, y: TimeSeries):
    names = y.names or tuple(f"y{i + 1}" for i in range(y.m))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in y.values:
            w.writerow([fmt(v) for v in row])


def read_series(path: Path) -> TimeSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise UsageError(f"{path}: need a header and at least one row")
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if values.ndim != 2 or values.shape[1] != len(rows[0]):
        raise UsageError(f"{path}: ragged rows")
    try:
        return TimeSeries(values, tuple(rows[0]))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def write_table(path: Path, header: list, rows: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in r])


def write_json(path: Path, doc: dict):
    Path(path).write_text(dumps(doc) + "\n")


def read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


# -- commands -------------------------------------------------------------------------------

def _config(args) -> RunConfig:
    base = read_json(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig.from_dict(base).to_dict()
    for key in list(cfg):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    out = RunConfig.from_dict(cfg)
    out.validate()
    return out


def cmd_simulate(args) -> int:
    if args.r > args.m or args.n < 1 or args.N < 1 or args.p < 0:
        raise UsageError("need r <= m, n >= 1, N >= 1, p >= 0")
    if not 0 <= args.seed < 2**64:
        raise UsageError("seed must be a 64-bit unsigned value")
    rng = np.random.default_rng(args.seed)
    model = random_factor_model(args.m, args.r, args.n, rng)
    a = random_ar_polynomial(args.p, rng)
    y = simulate_arma(model, a, args.N, rng)
    out = Path(args.out)
    write_series(out, y)
    write_json(sidecar(out), {"kind": "simulation", "version": __version__, "seed": args.seed,
                              "m": args.m, "r": args.r, "n": args.n, "p": args.p, "N": args.N,
                              "a": a, "W_L": model.wl, "W_D": model.wd})
    return EXIT_OK


def sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".model.json")


def load_simulation(path: Path) -> tuple[MAFactorModel, np.ndarray]:
    d = read_json(path)
    return MAFactorModel(np.array(d["W_L"], dtype=float).reshape(d["n"] + 1, d["m"], d["r"]),
                         np.array(d["W_D"], dtype=float)), np.array(d["a"], dtype=float)


def _result(kind: str, cfg: RunConfig, y: TimeSeries, res) -> dict:
    doc = res.model.to_dict()
    doc.update({
        "kind": kind,
        "version": __version__,
        "N": y.N,
        "channels": list(y.names) if y.names else None,
        "config": cfg.to_dict(),
        "factors": res.factors.to_dict(),
        "delta": res.delta.to_dict(),
    })
    return doc


def cmd_estimate(args, arma: bool = False) -> int:
    cfg = _config(args)
    if not arma:
        cfg.p = 0
    if getattr(args, "monte_carlo", None):
        return monte_carlo(args, cfg)
    if not args.data:
        raise UsageError("--data is required")
    y = read_series(Path(args.data))
    workers = min(args.workers or 1, thread_cap())
    res = identify_arma(y, cfg.n, cfg.p, cfg.alpha, cfg.settings(workers))
    write_json(Path(args.out), _result("estimate-arma" if arma else "estimate", cfg, y, res))
    return EXIT_OK


def _mc_run(cfg: RunConfig, args, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    model = random_factor_model(args.m, args.r, cfg.n, rng)
    a = random_ar_polynomial(cfg.p, rng)
    y = simulate_arma(model, a, args.N, rng)
    st = replace(cfg.settings(), seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = identify_arma(y, cfg.n, cfg.p, cfg.alpha, st)
    return {"seed": seed, "r_hat": res.factors.r_hat, "s": list(res.factors.s), "a_true": a,
            "a_hat": res.model.a, "delta_alpha": res.delta.delta_alpha, "delta_max": res.delta.delta_max,
            "method": res.primal.diagnostics["method"], "consistent": res.primal.diagnostics["consistent"]}


def monte_carlo(args, cfg: RunConfig) -> int:
    if args.m is None or args.r is None or args.N is None:
        raise UsageError("--monte-carlo needs --m, --r and --N")
    seeds = [cfg.seed + k for k in range(args.monte_carlo)]
    workers = min(args.workers or thread_cap(), thread_cap(), len(seeds))
    with ThreadPoolExecutor(workers) as pool:
        runs = list(pool.map(lambda s: _mc_run(cfg, args, s), seeds))
    hits = sum(r["r_hat"] == args.r for r in runs)
    write_json(Path(args.out), {"kind": "monte-carlo", "version": __version__, "config": cfg.to_dict(),
                                "m": args.m, "r": args.r, "N": args.N, "runs": runs,
                                "hit_rate": hits / len(runs)})
    return EXIT_OK


def cmd_delta(args) -> int:
    cfg = _config(args)
    y = read_series(Path(args.data))
    grid = FrequencyGrid(cfg.grid_size)
    phi, eps = truncated_periodogram(y, cfg.n, grid, cfg.margin)
    workers = min(args.workers or 1, thread_cap())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = estimate_delta_alpha(phi, y.N, cfg.alpha, cfg.trials, cfg.seed, grid, workers, cfg.margin)
    doc = rep.to_dict()
    doc.update({"kind": "delta", "version": __version__, "n": cfg.n, "N": y.N, "epsilon": eps,
                "config": cfg.to_dict()})
    write_json(Path(args.out), doc)
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = read_json(Path(args.model))
    try:
        model = ARMAFactorModel.from_dict(doc)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.model}: not a model file ({exc})") from None
    y = read_series(Path(args.data))
    if y.m != model.m:
        raise UsageError(f"data has {y.m} channels, model {model.m}")
    rep = fit_percent(y, one_step_predict(model, y))
    names = y.names or tuple(f"y{i + 1}" for i in range(y.m))
    write_table(Path(args.out), ["channel", "J_FIT", "mean"],
                [[nm, float(f), float(mu)] for nm, f, mu in zip(names, rep.fit, rep.means)])
    if args.predictions:
        write_series(Path(args.predictions), TimeSeries(rep.predicted, names))
    return EXIT_OK


def cmd_profile(args) -> int:
    doc = read_json(Path(args.result))
    try:
        s = doc["factors"]["s"]
    except (KeyError, TypeError):
        raise UsageError(f"{args.result}: no factor profile") from None
    write_table(Path(args.out), ["j", "s_j"], [[j + 1, float(v)] for j, v in enumerate(s)])
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _solver_flags(p):
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--n", type=int, help="MA order")
    p.add_argument("--alpha", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--strict", action="store_const", const=True)
    p.add_argument("--workers", type=int)
    for name in ("rho", "eps_abs", "eps_rel", "a", "b", "l", "h", "refine_rtol"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="armafactor", description="Identify MA/ARMA dynamic factor models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a random factor model")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--p", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="MA factor identification")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _solver_flags(p)

    p = sub.add_parser("estimate-arma", help="two-step ARMA factor identification")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=int)
    p.add_argument("--ar-method", dest="ar_method", choices=["iv", "ls"])
    p.add_argument("--monte-carlo", dest="monte_carlo", type=int, help="K seeded synthetic runs")
    p.add_argument("--m", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--N", type=int)
    _solver_flags(p)

    p = sub.add_parser("delta", help="confidence radius report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _solver_flags(p)

    p = sub.add_parser("validate", help="one-step prediction fit on validation data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictions")

    p = sub.add_parser("profile", help="re-emit the singular value profile")
    p.add_argument("--result", required=True)
    p.add_argument("--out", required=True)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "estimate-arma": lambda a: cmd_estimate(a, arma=True),
    "delta": cmd_delta,
    "validate": cmd_validate,
    "profile": cmd_profile,
}


def run_command(argv: list[str]) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if getattr(args, "monte_carlo", None) is not None and args.monte_carlo < 1:
            raise UsageError("--monte-carlo must be positive")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArmaFactorError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
