"""Command-line entry point: ``hcpf {split,fit,evaluate,simulate,predict,density-grid}``.

Settings resolve as built-in defaults < ``HCPF_THREADS`` < ``--config`` JSON
file < command-line flags. Every setting is validated before any output path
is touched, and outputs are written to a temporary sibling and renamed into
place. Errors print one line to stderr::

    hcpf: error code=<name> message=<text>
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import compound, edm
from .data import SplitSet, load_triplets, save_triplets, split
from .edm import ElementSpec, PseudoFamily
from .errors import (
    ConfigurationError,
    DataFormatError,
    FitError,
    HcpfError,
    InvalidParameterError,
    TruncationError,
)
from .evaluation import HeldOut, evaluate
from .model import (
    FittedModel,
    Hyperparams,
    default_hyperparams,
    expected_rates,
    load_model,
    save_model,
    simulate,
)
from .svi import FitConfig, fit

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_FIT = 6
EXIT_INTERNAL = 70

THREADS_ENV = "HCPF_THREADS"

FAMILY_CHOICES = [f.value for f in edm.EdmFamily] + [PseudoFamily.DEGENERATE.value]

DEFAULTS = {
    "family": "gamma",
    "mode": "hcpf",
    "source": "full",
    "k": 160,
    "seed": 0,
    "tau": 10_000.0,
    "xi": 0.7,
    "max_iters": 1_000_000,
    "eval_every": 10_000,
    "patience": 10,
    "tolerance": 1e-4,
    "threads": 1,
    "prior_shape": 0.01,
    "prior_mean": 0.1,
    "jitter": 0.1,
    "truncation": None,
    "batch_size": 1,
    "update_element_every": None,
    "test_frac": 0.2,
    "valid_frac": 0.01,
    "format": "tsv",
    "header": False,
    "part": "test",
    "users": 200,
    "items": 200,
    "theta": None,
    "kappa": None,
    "eta": None,
    "zeta": None,
    "rho": None,
    "varrho": None,
    "omega": None,
    "varpi": None,
    "rates": "1,0.1,0.01,0.001",
    "y_min": None,
    "y_max": None,
    "points": 100,
}


_INT_KEYS = {
    "k", "seed", "max_iters", "eval_every", "patience", "threads", "truncation",
    "batch_size", "update_element_every", "users", "items", "points",
}
_STR_KEYS = {"family", "mode", "source", "format", "part", "rates"}


def _coerce(key: str, value):
    """Type-check one config-file value against the flag it stands for."""
    if value is None:
        return None
    if key == "header":
        if not isinstance(value, bool):
            raise ConfigurationError(f"config key {key!r} must be true or false, got {value!r}")
        return value
    if key in _STR_KEYS:
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigurationError(f"config key {key!r} must be a string, got {value!r}")
        return str(value)
    numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
    if key in _INT_KEYS:
        if not numeric or int(value) != value:
            raise ConfigurationError(f"config key {key!r} must be an integer, got {value!r}")
        return int(value)
    if not numeric:
        raise ConfigurationError(f"config key {key!r} must be a number, got {value!r}")
    return float(value)


class UsageError(HcpfError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of settings (keys as in the long flags, with underscores)")
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=FAMILY_CHOICES)
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--xi", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hcpf", description="Hierarchical compound Poisson factorization")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", help="hold out validation/test entries and matching missing coordinates")
    p.add_argument("input")
    _add_common(p)
    p.add_argument("--format", choices=["tsv", "csv"])
    p.add_argument("--header", action="store_const", const=True)
    p.add_argument("--test-frac", type=float)
    p.add_argument("--valid-frac", type=float)

    p = sub.add_parser("fit", help="fit a model on a split directory")
    p.add_argument("data", help="split directory")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--mode", choices=["hcpf", "hpf"])
    p.add_argument("--source", choices=["full", "nonmissing"])
    p.add_argument("--max-iters", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--prior-shape", type=float)
    p.add_argument("--prior-mean", type=float)
    p.add_argument("--jitter", type=float)
    p.add_argument("--truncation", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--update-element-every", type=int)

    p = sub.add_parser("evaluate", help="score a fitted model on held-out entries")
    p.add_argument("data", help="split directory")
    p.add_argument("model", help="model file")
    _add_common(p)
    p.add_argument("--part", choices=["test", "validation"])

    p = sub.add_parser("simulate", help="draw a synthetic data set from the generative model")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--kappa", type=float)
    for name in ("eta", "zeta", "rho", "varrho", "omega", "varpi"):
        p.add_argument(f"--{name}", type=float)

    p = sub.add_parser("predict", help="rate, nonmissing probability and conditional mean per coordinate")
    p.add_argument("data", help="split directory (for the ID dictionaries)")
    p.add_argument("model", help="model file")
    p.add_argument("coords", help="file of user<TAB>item rows")
    _add_common(p)

    p = sub.add_parser("density-grid", help="zero-truncated compound log density over a rate x response grid")
    _add_common(p)
    p.add_argument("--family", choices=FAMILY_CHOICES)
    p.add_argument("--theta", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--rates", help="comma-separated rates")
    p.add_argument("--y-min", type=float)
    p.add_argument("--y-max", type=float)
    p.add_argument("--points", type=int)
    return parser


@dataclass
class RunConfig:
    command: str
    settings: dict

    def __getattr__(self, name):
        try:
            return self.settings[name]
        except KeyError:
            raise AttributeError(name) from None


def resolve(args: argparse.Namespace, environ=None) -> RunConfig:
    """Merge defaults, environment, config file and flags (later wins)."""
    environ = os.environ if environ is None else environ
    settings = dict(DEFAULTS)
    explicit = set()
    if environ.get(THREADS_ENV):
        try:
            settings["threads"] = int(environ[THREADS_ENV])
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {environ[THREADS_ENV]!r}") from None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(from_file, dict):
            raise ConfigurationError(f"{args.config}: expected a JSON object")
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"{args.config}: unknown keys {sorted(unknown)}")
        for key, value in from_file.items():
            settings[key] = _coerce(key, value)
            explicit.add(key)
    for key, value in vars(args).items():
        if value is not None and key != "config":
            settings[key] = value
            explicit.add(key)
    settings["_explicit"] = explicit
    return RunConfig(args.command, settings)


# ---------------------------------------------------------------------------
# validation helpers

def _positive_int(cfg: RunConfig, name: str) -> int:
    value = cfg.settings[name]
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def _element_from_flags(cfg: RunConfig) -> ElementSpec:
    family = edm.parse_family(cfg.family)
    if family is PseudoFamily.DEGENERATE:
        return ElementSpec.degenerate(1.0 if cfg.kappa is None else cfg.kappa)
    if cfg.theta is None or cfg.kappa is None:
        raise ConfigurationError("--theta and --kappa are required for this family")
    return ElementSpec(family, cfg.theta, cfg.kappa)


def _fit_config(cfg: RunConfig) -> FitConfig:
    return FitConfig(
        mode=cfg.mode,
        source=cfg.source,
        max_iterations=_positive_int(cfg, "max_iters"),
        eval_every=_positive_int(cfg, "eval_every"),
        patience=_positive_int(cfg, "patience"),
        tolerance=cfg.tolerance,
        seed=cfg.seed,
        jitter=cfg.jitter,
        truncation=cfg.truncation,
        batch_size=_positive_int(cfg, "batch_size"),
        update_element_every=cfg.update_element_every,
    )


# ---------------------------------------------------------------------------
# atomic outputs

@contextmanager
def _atomic_file(path: Path, mode: str = "w"):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        if mode == "path":
            yield Path(tmp)
        else:
            with open(tmp, mode, encoding="utf-8", newline="") as fh:
                yield fh
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@contextmanager
def _atomic_dir(path: Path):
    """Yield a scratch directory whose files are renamed into ``path`` on success.

    Other files already in ``path`` are left alone.
    """
    if path.exists() and not path.is_dir():
        raise ConfigurationError(f"{path} exists and is not a directory")
    path.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".hcpf-", dir=path))
    try:
        yield tmp
        for item in sorted(tmp.iterdir()):
            os.replace(item, path / item.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_split(cfg: RunConfig) -> None:
    if not 0 < cfg.test_frac < 1 or not 0 < cfg.valid_frac < 1 or cfg.test_frac + cfg.valid_frac >= 1:
        raise ConfigurationError("test_frac and valid_frac must be in (0, 1) with sum below 1")
    data = load_triplets(cfg.input, cfg.format, bool(cfg.header))
    parts = split(data, cfg.test_frac, cfg.valid_frac, cfg.seed)
    with _atomic_dir(Path(cfg.out)) as tmp:
        parts.save(tmp)


def _prepare_fit(cfg: RunConfig):
    k = _positive_int(cfg, "k")
    config = _fit_config(cfg)
    family = edm.parse_family(cfg.family)
    if cfg.mode == "hpf" and family is not PseudoFamily.DEGENERATE:
        if "family" in cfg.settings.get("_explicit", ()):
            raise ConfigurationError("--mode hpf requires --family degenerate")
        family = PseudoFamily.DEGENERATE
    if not (cfg.prior_shape > 0 and cfg.prior_mean > 0):
        raise ConfigurationError("prior_shape and prior_mean must be positive")
    if not 0 <= cfg.jitter < 1:
        raise ConfigurationError("jitter must lie in [0, 1)")
    # probe the hyperparameter invariants before touching any data
    Hyperparams(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, k, ElementSpec.degenerate(), cfg.tau, cfg.xi)
    parts = SplitSet.load(cfg.data)
    if family is PseudoFamily.DEGENERATE:
        element = ElementSpec.degenerate()
    else:
        element = edm.to_edm(edm.mle_fit(family, parts.train.values))
    sparsity = parts.total_missing / (parts.n_users * parts.n_items)
    hyper = default_hyperparams(
        sparsity, element, K=k, mode=cfg.source, tau=cfg.tau, xi=cfg.xi,
        prior_shape=cfg.prior_shape, prior_mean=cfg.prior_mean,
    )
    return parts, hyper, config


def _cmd_fit(cfg: RunConfig) -> None:
    parts, hyper, config = _prepare_fit(cfg)
    result = fit(
        parts.train,
        hyper,
        config,
        HeldOut.from_split(parts, "validation"),
        exclude=parts.heldout_keys(),
        max_response=parts.max_response(),
    )
    out = Path(cfg.out)
    with _atomic_dir(out) as tmp:
        save_model(tmp / "model.bin", FittedModel(result.state, result.hyper, result.truncation))
        with open(tmp / "trace.tsv", "w", encoding="utf-8") as fh:
            fh.write("iteration\tL\tL_M\tL_NM\tseconds\n")
            for row in result.trace:
                fh.write("\t".join(repr(v) for v in row) + "\n")


def _cmd_evaluate(cfg: RunConfig) -> None:
    threads = _positive_int(cfg, "threads")
    model = load_model(cfg.model)
    parts = SplitSet.load(cfg.data)
    if (parts.n_users, parts.n_items) != (model.state.n_users, model.state.n_items):
        raise DataFormatError("model and split have different matrix shapes")
    report = evaluate(model.state, model.hyper.element, HeldOut.from_split(parts, cfg.part), model.truncation, threads)
    with _atomic_dir(Path(cfg.out)) as tmp:
        (tmp / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (tmp / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")


def _cmd_simulate(cfg: RunConfig) -> None:
    k = _positive_int(cfg, "k")
    users, items = _positive_int(cfg, "users"), _positive_int(cfg, "items")
    element = _element_from_flags(cfg)
    priors = {name: cfg.settings[name] for name in ("eta", "zeta", "rho", "varrho", "omega", "varpi")}
    missing = [name for name, v in priors.items() if v is None]
    if missing:
        raise ConfigurationError(f"simulate needs prior settings: {', '.join(missing)}")
    hyper = Hyperparams(K=k, element=element, tau=cfg.tau, xi=cfg.xi, **priors)
    latent, data = simulate(hyper, users, items, np.random.default_rng(cfg.seed))
    if data.nnz == 0:
        raise FitError("simulation produced no nonmissing entries")
    with _atomic_dir(Path(cfg.out)) as tmp:
        save_triplets(data, tmp / "data.tsv")
        np.savez(
            tmp / "latents.npz",
            user_activity=latent.user_activity,
            user_factors=latent.user_factors,
            item_popularity=latent.item_popularity,
            item_factors=latent.item_factors,
        )


def _cmd_predict(cfg: RunConfig) -> None:
    model = load_model(cfg.model)
    parts = SplitSet.load(cfg.data)
    uidx, iidx = parts.train.user_index(), parts.train.item_index()
    users, items, names = [], [], []
    with open(cfg.coords, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 2:
                raise DataFormatError(f"{cfg.coords}:{lineno}: expected user<TAB>item")
            try:
                users.append(uidx[fields[0]])
                items.append(iidx[fields[1]])
            except KeyError as exc:
                raise DataFormatError(f"{cfg.coords}:{lineno}: unknown ID {exc}") from None
            names.append((fields[0], fields[1]))
    rates = expected_rates(model.state, users, items)
    prob = -np.expm1(-rates)
    tmean = compound.truncated_mean_at(model.hyper.element, rates)
    with _atomic_file(Path(cfg.out)) as fh:
        fh.write("user\titem\trate\tprob_nonmissing\ttruncated_mean\n")
        for (u, i), r, p, m in zip(names, rates.tolist(), prob.tolist(), np.atleast_1d(tmean).tolist()):
            fh.write(f"{u}\t{i}\t{r!r}\t{p!r}\t{m!r}\n")


def _cmd_density_grid(cfg: RunConfig) -> None:
    element = _element_from_flags(cfg)
    try:
        rates = [float(r) for r in str(cfg.rates).split(",") if r.strip()]
    except ValueError:
        raise ConfigurationError(f"rates must be comma-separated numbers, got {cfg.rates!r}") from None
    if not rates or any(not (r > 0 and math.isfinite(r)) for r in rates):
        raise ConfigurationError("rates must be positive and finite")
    points = _positive_int(cfg, "points")
    mean = edm.mean(element)
    sd = math.sqrt(edm.variance(element))
    if edm.is_discrete(element.family) or element.is_degenerate:
        lo = 1.0 if cfg.y_min is None else cfg.y_min
        hi = max(lo, math.ceil(mean + 4 * sd)) if cfg.y_max is None else cfg.y_max
        ys = np.arange(math.ceil(lo), math.floor(hi) + 1, dtype=float)
    else:
        lo = (mean - 4 * sd if element.family is edm.EdmFamily.NORMAL else 1e-3 * mean) if cfg.y_min is None else cfg.y_min
        hi = mean + 4 * sd if cfg.y_max is None else cfg.y_max
        ys = np.linspace(lo, hi, points)
    if ys.size == 0:
        raise ConfigurationError("empty response grid")
    rows = compound.density_grid(element, rates, ys)
    with _atomic_file(Path(cfg.out)) as fh:
        fh.write("rate\ty\tlog_density\n")
        for r, y, v in rows:
            fh.write(f"{r!r}\t{y!r}\t{v!r}\n")


_COMMANDS = {
    "split": _cmd_split,
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
    "simulate": _cmd_simulate,
    "predict": _cmd_predict,
    "density-grid": _cmd_density_grid,
}

_EXIT_CODES = (
    (UsageError, EXIT_USAGE, "usage"),
    (ConfigurationError, EXIT_CONFIG, "config"),
    (InvalidParameterError, EXIT_CONFIG, "config"),
    (DataFormatError, EXIT_DATA, "data"),
    (TruncationError, EXIT_FIT, "fit"),
    (FitError, EXIT_FIT, "fit"),
    (OSError, EXIT_IO, "io"),
)


def _fail(code: int, name: str, exc: BaseException) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"hcpf: error code={name} message={message}", file=sys.stderr)
    return code


def run(argv=None, environ=None) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args, environ)
        logging.basicConfig(level=logging.DEBUG if cfg.verbose else logging.WARNING, format="%(message)s")
        _positive_int(cfg, "threads")
        _COMMANDS[cfg.command](cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        for kind, code, name in _EXIT_CODES:
            if isinstance(exc, kind):
                return _fail(code, name, exc)
        return _fail(EXIT_INTERNAL, "internal", exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
