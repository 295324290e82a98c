"""Command-line front end.

Usage::

    adversarial-riesz fit-riesz --config run.json [--B 2 --seed 1 ...]
    adversarial-riesz debias    --config run.json
    adversarial-riesz simulate  --config run.json
    adversarial-riesz diagnose  --config run.json

A run is described by one JSON config; flags override its scalar fields and
use the same names.  The result document is printed (or written to
``output``) as JSON with keys command, config_echo, results, diagnostics,
timing and seed.  Feeding ``config_echo`` back as the config reproduces the run.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import (
    Dataset,
    EvaluableFunction,
    MomentFunctional,
    ate,
    cross_effect,
    estimate_continuity_constant,
    rng_stream,
    shift_transport,
    zero_functional,
)
from .errors import ConfigurationError, DataError, RieszError

COMMANDS = ("fit-riesz", "debias", "simulate", "diagnose")
BACKENDS = ("sparse", "rkhs", "oracle")

DEFAULTS: dict[str, Any] = {
    "command": None,
    "input": None,
    "output": None,
    "series_output": None,
    "bindings": {"outcome": "y", "treatment": None, "instrument": None, "covariates": None,
                 "extras": []},
    "functional": {"name": "ate"},
    "estimand": "average",
    "backend": "rkhs",
    "B": 1.0,
    "lam": None,
    "mu": 1e-3,
    "T": None,
    "eta": "auto",
    "eps": 1e-3,
    "max_iter": 200000,
    "kernel": {"family": "gaussian", "bandwidth": None, "degree": 2, "coef0": 1.0},
    "regression": "krr",
    "ridge": 1e-3,
    "folds": 5,
    "no_split": False,
    "seed": 0,
    "level": 0.95,
    "simulation": {"dgp": "ate", "dgp_params": {}, "n": 500, "replications": 20,
                   "nuisances": "rkhs"},
    "threads": None,
    "timing": False,
}

# flag -> (config path, type)
SCALAR_FLAGS: dict[str, tuple[tuple[str, ...], Any]] = {
    "input": (("input",), str),
    "output": (("output",), str),
    "series_output": (("series_output",), str),
    "functional": (("functional", "name"), str),
    "estimand": (("estimand",), str),
    "backend": (("backend",), str),
    "B": (("B",), float),
    "lam": (("lam",), float),
    "mu": (("mu",), float),
    "T": (("T",), int),
    "eta": (("eta",), str),
    "eps": (("eps",), float),
    "max_iter": (("max_iter",), int),
    "regression": (("regression",), str),
    "ridge": (("ridge",), float),
    "bandwidth": (("kernel", "bandwidth"), float),
    "folds": (("folds",), int),
    "seed": (("seed",), int),
    "level": (("level",), float),
    "n": (("simulation", "n"), int),
    "replications": (("simulation", "replications"), int),
    "dgp": (("simulation", "dgp"), str),
    "nuisances": (("simulation", "nuisances"), str),
    "threads": (("threads",), int),
}


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "dgp_params":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(raw: dict[str, Any], command: str | None = None,
                   overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if command is not None:
        cfg["command"] = command
    for flag, value in (overrides or {}).items():
        path, _ = SCALAR_FLAGS[flag]
        node = cfg
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict[str, Any]) -> None:
    if cfg["command"] not in COMMANDS:
        raise ConfigurationError(f"command must be one of {COMMANDS}, got {cfg['command']!r}")
    if cfg["backend"] not in BACKENDS:
        raise ConfigurationError(f"backend must be one of {BACKENDS}, got {cfg['backend']!r}")
    if not cfg["B"] > 0:
        raise ConfigurationError("B must be positive")
    for key in ("lam", "mu", "ridge"):
        if cfg[key] is not None and cfg[key] < 0:
            raise ConfigurationError(f"{key} must be non-negative")
    if cfg["T"] is not None and cfg["T"] < 1:
        raise ConfigurationError("T must be at least 1")
    if cfg["eta"] != "auto":
        try:
            if not float(cfg["eta"]) > 0:
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigurationError("eta must be 'auto' or a positive number") from None
    if not 0 < cfg["level"] < 1:
        raise ConfigurationError("level must be in (0, 1)")
    if cfg["folds"] < 2 and not cfg["no_split"]:
        raise ConfigurationError("folds must be at least 2 (or set no_split)")
    if cfg["estimand"] not in ("average", "late"):
        raise ConfigurationError("estimand must be 'average' or 'late'")
    if cfg["regression"] not in ("krr", "linear"):
        raise ConfigurationError("regression must be 'krr' or 'linear'")
    if cfg["threads"] is not None and cfg["threads"] < 1:
        raise ConfigurationError("threads must be at least 1")
    sim = cfg["simulation"]
    if sim["replications"] < 1 or sim["n"] < 2:
        raise ConfigurationError("simulation needs replications >= 1 and n >= 2")
    if cfg["command"] != "simulate" and not cfg["input"]:
        raise ConfigurationError(f"command {cfg['command']} needs an input CSV")


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Bindings:
    outcome: str = "y"
    treatment: str | None = None
    instrument: str | None = None
    covariates: tuple[str, ...] | None = None
    extras: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_config(cls, raw: dict[str, Any]) -> "Bindings":
        cov = raw.get("covariates")
        return cls(raw.get("outcome", "y"), raw.get("treatment"), raw.get("instrument"),
                   None if cov is None else tuple(cov), tuple(raw.get("extras") or ()))


def ingest_csv(path: str | os.PathLike, bindings: Bindings | None = None) -> Dataset:
    """Read a header CSV into a Dataset.

    x is laid out as [instrument, treatment, covariates...] for the bound
    columns that are present; covariates default to every unbound column.
    Row numbers in error messages are file line numbers.
    """
    b = bindings or Bindings()
    if not os.path.isfile(path):
        raise DataError(f"input file {os.fspath(path)!r} not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("input file is empty") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DataError("input table has a header but no data rows")
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    bound = [c for c in (b.outcome, b.instrument, b.treatment) if c is not None]
    covariates = b.covariates
    if covariates is None:
        covariates = tuple(c for c in header if c not in bound and c not in b.extras)
    x_names = [c for c in (b.instrument, b.treatment) if c is not None] + list(covariates)
    needed = [b.outcome, *x_names, *b.extras]
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"missing columns {missing}; header has {header}")
    pos = {c: header.index(c) for c in needed}
    data = np.empty((len(rows), len(needed)))
    bad: list[int] = []
    for i, row in enumerate(rows):
        try:
            if len(row) != len(header):
                raise ValueError
            data[i] = [float(row[pos[c]]) for c in needed]
            if not np.all(np.isfinite(data[i])):
                raise ValueError
        except ValueError:
            bad.append(i + 2)
    if bad:
        raise DataError(f"non-numeric, missing or non-finite cells on lines {bad}")
    col = {c: data[:, j] for j, c in enumerate(needed)}
    if b.treatment is not None:
        d = col[b.treatment]
        off = [int(i) + 2 for i in np.flatnonzero((d != 0) & (d != 1))]
        if off:
            raise DataError(f"treatment column {b.treatment!r} must be 0/1; offending lines {off}")
    x = np.column_stack([col[c] for c in x_names]) if x_names else np.zeros((len(rows), 0))
    if x.shape[1] == 0:
        raise DataError("no covariate columns bound")
    return Dataset(
        y=col[b.outcome], x=x,
        treatment=x_names.index(b.treatment) if b.treatment is not None else None,
        instrument=0 if b.instrument is not None else None,
        columns=tuple(x_names), outcome_name=b.outcome,
        extras={c: col[c] for c in b.extras},
    )


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def build_functional(spec: dict[str, Any], dataset: Dataset | None) -> MomentFunctional:
    name = spec.get("name", "ate")
    if name in ("ate", "cross"):
        column = spec.get("column")
        if column is None and dataset is not None:
            column = dataset.instrument if dataset.instrument is not None else dataset.treatment
        if column is None:
            raise ConfigurationError(f"functional {name!r} needs a treatment or instrument column")
        return ate(int(column)) if name == "ate" else cross_effect(int(column))
    if name == "transport":
        offset = spec.get("offset")
        if offset is None:
            raise ConfigurationError("transport functional needs an 'offset' list")
        if dataset is not None and len(offset) != dataset.dim:
            raise ConfigurationError(f"offset has {len(offset)} entries for {dataset.dim} columns")
        return shift_transport(offset)
    if name == "zero":
        return zero_functional()
    raise ConfigurationError(f"unknown functional {name!r}; choose ate, cross, transport or zero")


def build_kernel(cfg: dict[str, Any]):
    from .rkhs import KernelSpec

    k = cfg["kernel"]
    return KernelSpec(k.get("family", "gaussian"), k.get("bandwidth"), int(k.get("degree", 2)),
                      float(k.get("coef0", 1.0)))


def _eta(cfg: dict[str, Any]) -> float | str:
    return "auto" if cfg["eta"] == "auto" else float(cfg["eta"])


def riesz_learner(cfg: dict[str, Any], functional: Any):
    backend = cfg["backend"]
    if backend == "rkhs":
        from .rkhs import rkhs_riesz_learner

        lam = 1e-3 if cfg["lam"] is None else cfg["lam"]
        return rkhs_riesz_learner(functional, build_kernel(cfg), lam=lam, mu=cfg["mu"])
    if backend == "sparse":
        from .sparse import sparse_riesz_learner

        return sparse_riesz_learner(functional, cfg["B"], lam=cfg["lam"], T=cfg["T"], eta=_eta(cfg),
                                    eps=cfg["eps"], max_iter=cfg["max_iter"], certify=False)
    raise ConfigurationError("debiasing supports the sparse and rkhs backends")


def linear_ridge_learner(ridge: float):
    from sklearn.linear_model import Ridge

    def learn(data: Dataset) -> EvaluableFunction:
        model = Ridge(alpha=ridge * data.n).fit(data.x, data.y)
        coef, icpt = model.coef_.copy(), float(model.intercept_)
        return EvaluableFunction(lambda x: x @ coef + icpt, dim=data.dim, label="ridge")

    return learn


def regression_learner(cfg: dict[str, Any]):
    if cfg["regression"] == "linear":
        return linear_ridge_learner(cfg["ridge"])
    from .rkhs import krr_learner

    return krr_learner(build_kernel(cfg), cfg["ridge"])


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _load(cfg: dict[str, Any]) -> Dataset:
    return ingest_csv(cfg["input"], Bindings.from_config(cfg["bindings"]))


def _riesz_summary(values: np.ndarray) -> dict[str, float]:
    return {"mean": float(np.mean(values)), "sd": float(np.std(values)),
            "min": float(np.min(values)), "max": float(np.max(values))}


def cmd_fit_riesz(cfg: dict[str, Any]) -> tuple[dict, dict, list[dict]]:
    data = _load(cfg)
    functional = build_functional(cfg["functional"], data)
    backend = cfg["backend"]
    if backend == "sparse":
        from .sparse import fit_sparse_riesz

        est = fit_sparse_riesz(data, functional, cfg["B"], lam=cfg["lam"], T=cfg["T"], eta=_eta(cfg),
                               eps=cfg["eps"], max_iter=cfg["max_iter"])
        d = est.diagnostics
        results = {"theta_hat": est.coefficients.tolist(), "duality_gap": d["duality_gap"],
                   "gap_bound": d["gap_bound"], "l1_norm": d["l1_norm"],
                   "support_size": d["support_size"], "criterion": d["criterion"]}
        diagnostics = {k: d[k] for k in ("T", "eta", "lam", "B", "solver")}
        series = [dict(row) for row in d["trace"]]
        values = est.values(data.x)
    elif backend == "rkhs":
        from .rkhs import as_riesz_estimate, fit_rkhs_riesz

        lam = 1e-3 if cfg["lam"] is None else cfg["lam"]
        fit = fit_rkhs_riesz(data, build_kernel(cfg), functional, lam, cfg["mu"], diagnose=True,
                             B=cfg["B"])
        d = fit.diagnostics
        values = as_riesz_estimate(fit).values(data.x)
        results = {"foc_residual": d["foc_residual"], "rkhs_norm": d["rkhs_norm"],
                   "criterion": d["criterion"], "critical_radius": d["critical_radius"],
                   "critical_radius_moment": d["critical_radius_moment"]}
        diagnostics = {"bandwidth": d["bandwidth"], "jitter": fit.jitter, "lam": lam, "mu": cfg["mu"],
                       "method": d["method"]}
        series = []
    else:
        from .oracle import equilibrium_gap, ftl_train, linear_game_oracles

        T = cfg["T"] or 1000
        oracles = linear_game_oracles(cfg["B"], ridge=cfg["ridge"] if cfg["ridge"] else 0.0)
        a_bar, trace = ftl_train(data, functional, oracles, T)
        values = a_bar.values(data.x)
        results = {"equilibrium_gap": equilibrium_gap(data, functional, oracles, trace),
                   "final_criterion": float(trace.values[-1]), "T": T}
        diagnostics = {"B": cfg["B"], "max_abs_representer": trace.diagnostics["max_abs_representer"]}
        series = [{"t": t + 1, "criterion": float(v)} for t, v in enumerate(trace.values)]
    results["riesz_values"] = _riesz_summary(values)
    diagnostics.update(n=data.n, dim=data.dim, fingerprint=data.fingerprint(), backend=backend)
    if backend != "oracle":
        series = series + [{"row": i, "riesz_value": float(v)} for i, v in enumerate(values)]
    return results, diagnostics, series


def cmd_debias(cfg: dict[str, Any]) -> tuple[dict, dict, list[dict]]:
    from .debias import FoldPlan, cross_fit_estimate, late_estimate, no_split_estimate

    data = _load(cfg)
    functional = build_functional(cfg["functional"], data)
    rl, gl = riesz_learner(cfg, functional), regression_learner(cfg)
    if cfg["estimand"] == "late":
        if cfg["no_split"]:
            raise ConfigurationError("the local effect is only implemented with cross-fitting")
        if data.instrument is None or not data.extras:
            raise ConfigurationError("the local effect needs an instrument and the realised "
                                     "treatment bound as the first extra column")
        plan = FoldPlan.make(data.n, cfg["folds"], cfg["seed"])
        res = late_estimate(data, plan, rl, gl, functional, treatment_key=cfg["bindings"]["extras"][0],
                            level=cfg["level"], threads=cfg["threads"])
        return res.to_dict(), {"n": data.n, "folds": plan.K, "fingerprint": data.fingerprint()}, []
    if cfg["no_split"]:
        res = no_split_estimate(data, rl, gl, functional, cfg["level"])
    else:
        plan = FoldPlan.make(data.n, cfg["folds"], cfg["seed"])
        res = cross_fit_estimate(data, plan, rl, gl, functional, cfg["level"], cfg["threads"])
    results = res.to_dict()
    diagnostics = {"n": data.n, "folds": 1 if cfg["no_split"] else cfg["folds"],
                   "fingerprint": data.fingerprint(), "backend": cfg["backend"],
                   "regression": cfg["regression"]}
    return results, diagnostics, [dict(f) for f in res.per_fold]


def _make_dgp(sim: dict[str, Any]):
    from .synthetic import make_ate_dgp, make_iv_dgp, make_sparse_linear_dgp

    factories = {"ate": make_ate_dgp, "sparse-linear": make_sparse_linear_dgp, "iv": make_iv_dgp}
    try:
        factory = factories[sim["dgp"]]
    except KeyError:
        raise ConfigurationError(f"unknown dgp {sim['dgp']!r}; choose from {sorted(factories)}") from None
    try:
        return factory(**sim["dgp_params"])
    except TypeError as exc:
        raise ConfigurationError(f"bad dgp_params: {exc}") from None


def cmd_simulate(cfg: dict[str, Any]) -> tuple[dict, dict, list[dict]]:
    from .debias import FoldPlan, cross_fit_estimate, late_estimate
    from .synthetic import monte_carlo

    sim = cfg["simulation"]
    dgp = _make_dgp(sim)
    kind = sim["nuisances"]
    if kind == "oracle":
        rl, gl = (lambda _d: dgp.a0), (lambda _d: dgp.g0)
    elif kind in ("rkhs", "sparse"):
        local = dict(cfg, backend=kind)
        rl, gl = riesz_learner(local, dgp.functional), regression_learner(cfg)
    else:
        raise ConfigurationError("nuisances must be oracle, rkhs or sparse")

    def estimator(data: Dataset, key: tuple[int, ...]):
        plan = FoldPlan.make(data.n, cfg["folds"], key)
        if dgp.name == "iv":
            return late_estimate(data, plan, rl, gl, dgp.functional, level=cfg["level"], threads=1)
        return cross_fit_estimate(data, plan, rl, gl, dgp.functional, cfg["level"], threads=1)

    summary = monte_carlo(dgp, estimator, sim["replications"], sim["n"], cfg["seed"], cfg["threads"])
    results = summary.to_dict()
    diagnostics = {"dgp": dgp.name, "overlap": dgp.overlap, "nuisances": kind}
    return results, diagnostics, [dict(r) for r in summary.records]


def cmd_diagnose(cfg: dict[str, Any]) -> tuple[dict, dict, list[dict]]:
    from .rkhs import build_kernel_blocks, rkhs_critical_radius

    data = _load(cfg)
    functional = build_functional(cfg["functional"], data)
    kernel = build_kernel(cfg).resolved(data.x)
    blocks = build_kernel_blocks(data, kernel, functional)
    rng = rng_stream(cfg["seed"], 3)
    probes = [EvaluableFunction(lambda x, j=j: x[:, j], dim=data.dim) for j in range(data.dim)]
    centres = data.x[rng.choice(data.n, size=min(10, data.n), replace=False)]
    probes += [EvaluableFunction(lambda x, c=c: kernel(x, c[None, :])[:, 0], dim=data.dim)
               for c in centres]
    probes = [p for p in probes if np.any(p.values(data.x) != 0)]
    eig = np.sort(np.linalg.eigvalsh(blocks.K1 / data.n))[::-1]
    results = {
        "continuity_constant": estimate_continuity_constant(functional, data, probes),
        "critical_radius": rkhs_critical_radius(blocks.K1, cfg["B"]),
        "critical_radius_moment": rkhs_critical_radius(blocks.K4, cfg["B"]),
        "ranges": {k: list(v) for k, v in data.ranges().items()},
    }
    if data.treatment is not None:
        results["treated_share"] = float(np.mean(data.x[:, data.treatment]))
    diagnostics = {"n": data.n, "dim": data.dim, "fingerprint": data.fingerprint(),
                   "bandwidth": kernel.bandwidth, "probes": len(probes)}
    series = [{"index": i, "eigenvalue": float(max(v, 0.0))} for i, v in enumerate(eig)]
    return results, diagnostics, series


HANDLERS = {"fit-riesz": cmd_fit_riesz, "debias": cmd_debias, "simulate": cmd_simulate,
            "diagnose": cmd_diagnose}


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(doc: dict[str, Any]) -> str:
    # Python's float repr is the shortest string that round-trips exactly
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_series(rows: Sequence[dict[str, Any]], path: str | os.PathLike) -> None:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in r.items()})


def run(cfg: dict[str, Any]) -> tuple[int, dict[str, Any]]:
    """Execute a resolved config; returns (exit code, result document)."""
    start = time.perf_counter()
    try:
        results, diagnostics, series = HANDLERS[cfg["command"]](cfg)
        if cfg["series_output"]:
            write_series(series, cfg["series_output"])
    except RieszError as exc:
        return 1, {"command": cfg["command"], "config_echo": cfg, "seed": cfg["seed"],
                   "error": {"type": type(exc).__name__, "message": str(exc)}}
    timing = {"recorded": bool(cfg["timing"])}
    if cfg["timing"]:
        timing["wall_seconds"] = time.perf_counter() - start
    doc = {"command": cfg["command"], "config_echo": cfg, "results": results,
           "diagnostics": diagnostics, "timing": timing, "seed": cfg["seed"]}
    return 0, doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adversarial-riesz",
                                     description="Adversarial Riesz representer estimation and debiasing.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON run configuration")
    for flag, (_, typ) in SCALAR_FLAGS.items():
        parser.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ, default=None)
    parser.add_argument("--no-split", dest="no_split", action="store_true", default=None,
                        help="fit nuisances on all rows")
    parser.add_argument("--timing", dest="timing", action="store_true", default=None,
                        help="record wall-clock time (output is then not reproducible)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        raw: dict[str, Any] = {}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    raw = json.load(fh)
            except OSError as exc:
                raise ConfigurationError(f"cannot read config: {exc}") from None
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config is not valid JSON: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigurationError("config must be a JSON object")
        overrides = {k: getattr(args, k) for k in SCALAR_FLAGS if getattr(args, k) is not None}
        for flag in ("no_split", "timing"):
            if getattr(args, flag):
                raw = dict(raw, **{flag: True})
        cfg = resolve_config(raw, command, overrides)
    except RieszError as exc:
        sys.stdout.write(dumps({"command": command, "seed": None,
                                "error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 2
    code, doc = run(cfg)
    text = dumps(doc)
    if cfg["output"] and code == 0:
        with open(cfg["output"], "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
