"""Command-line runner: ``indiv-rdp <subcommand> --config run.json``.

Every config is a JSON object carrying ``"schema_version": 1``. The whole
config (and any dataset it names) is validated before anything runs, and
artifacts are only written once the run has finished, so a bad config leaves
the output directory untouched.

Exit status: 0 success, 1 a validation or accounting check failed, 2 bad
config or input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from collections import Counter
from pathlib import Path

import jsonschema
import numpy as np

from . import oracle
from .core import (
    DEFAULT_ORDERS,
    RdpCurve,
    RdpPoint,
    best_dp_over_curve,
    rdp_to_dp,
    zcdp_budget_for_dp,
)
from .dpgd import (
    TRACE_HEADER,
    GdConfig,
    LossSpec,
    Mode,
    RunAborted,
    privacy_report,
    run_private_gd,
    synthetic_blobs,
)
from .errors import AccountingError, ConfigError
from .filters import DpFilterState, FilterDecision, FilterState, dp_filter_check, rdp_filter_check
from .io import dumps_json, format_csv, read_dataset_csv, read_matrix_csv
from .ledger import IndividualOdometers, individual_odometer_update
from .query_engine import QuerySession, answer_query
from .snapshot import load as load_snapshot
from .snapshot import snapshot

SCHEMA_VERSION = 1
OUTPUT_ENV = "INDIV_RDP_OUTPUT_DIR"
DEFAULT_OUTPUT = "indiv_rdp_out"

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


# --- config schemas ----------------------------------------------------------------

POSITIVE = {"type": "number", "exclusiveMinimum": 0}
NONNEG = {"type": "number", "minimum": 0}
ORDER = {"type": "number", "minimum": 1}
DELTA = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
COUNT = {"type": "integer", "minimum": 1}
SEED = {"type": "integer", "minimum": 0}
TABLE = {"type": "array", "minItems": 1, "items": {"type": "array", "items": {"type": "number"}}}


def _schema(properties: dict, required=(), **extra) -> dict:
    props = {"schema_version": {"const": SCHEMA_VERSION}, "output_dir": {"type": "string"}}
    props.update(properties)
    return {
        "type": "object",
        "properties": props,
        "required": ["schema_version", *required],
        "additionalProperties": False,
        **extra,
    }


def _conversion(kind: str, **fields) -> dict:
    return {
        "type": "object",
        "properties": {"kind": {"const": kind}, **fields},
        "required": ["kind", *fields],
        "additionalProperties": False,
    }


ORDERS = {"type": "array", "minItems": 1, "items": ORDER}


def _streamed(table: str, fresh: list) -> dict:
    """A table inline or from CSV; either a snapshot to resume or the fresh-start fields."""
    return {
        "allOf": [
            {"oneOf": [{"required": [table]}, {"required": [f"{table}_csv"]}]},
            {"anyOf": [{"required": ["resume_from"]}, {"required": fresh}]},
        ]
    }


SCHEMAS = {
    "convert": _schema(
        {
            "orders": ORDERS,
            "conversions": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "oneOf": [
                        _conversion(
                            "rdp_point",
                            order={"type": "number", "exclusiveMinimum": 1},
                            rho=NONNEG,
                            delta=DELTA,
                        ),
                        _conversion("gaussian", sigma=POSITIVE, steps=COUNT, delta=DELTA),
                        _conversion("linear_curve", slope=NONNEG, delta=DELTA),
                        _conversion("zcdp_budget", eps=NONNEG, delta=DELTA),
                    ]
                },
            },
        },
        ["conversions"],
    ),
    "filter": _schema(
        {
            "kind": {"enum": ["rdp", "dp"]},
            "stream": {"type": "array", "items": NONNEG},
            "order": ORDER,
            "budget": NONNEG,
            "eps_budget": NONNEG,
            "delta_budget": DELTA,
        },
        ["kind", "stream"],
        **{
            "if": {"properties": {"kind": {"const": "rdp"}}},
            "then": {"required": ["order", "budget"]},
            "else": {"required": ["eps_budget", "delta_budget"]},
        },
    ),
    "odometer": _schema(
        {
            "losses": TABLE,
            "losses_csv": {"type": "string"},
            "order": ORDER,
            "delta": POSITIVE,
            "resume_from": {"type": "string"},
            "write_snapshot": {"type": "boolean"},
        },
        **_streamed("losses", ["order", "delta"]),
    ),
    "queries": _schema(
        {
            "queries": {
                "type": "array",
                "minItems": 1,
                "items": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
            },
            "queries_csv": {"type": "string"},
            "sigma": POSITIVE,
            "order": ORDER,
            "budget": NONNEG,
            "seed": SEED,
            "resume_from": {"type": "string"},
            "write_snapshot": {"type": "boolean"},
        },
        **_streamed("queries", ["sigma", "order", "budget", "seed"]),
    ),
    "gd": _schema(
        {
            "dataset": {
                "oneOf": [
                    {
                        "type": "object",
                        "properties": {"csv": {"type": "string"}},
                        "required": ["csv"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "required": ["synthetic"],
                        "additionalProperties": False,
                        "properties": {
                            "synthetic": {
                                "type": "object",
                                "required": ["n", "d"],
                                "additionalProperties": False,
                                "properties": {
                                    "n": COUNT,
                                    "d": COUNT,
                                    "separation": NONNEG,
                                    "seed": SEED,
                                },
                            }
                        },
                    },
                ]
            },
            "loss": {"enum": ["logistic", "squared"]},
            "regularization": NONNEG,
            "mode": {"enum": ["plain", "filtered", "both"]},
            "sigma": POSITIVE,
            "clip_c": POSITIVE,
            "steps": COUNT,
            "k_max": COUNT,
            "norm_budget": POSITIVE,
            "learning_rate": {
                "oneOf": [
                    POSITIVE,
                    {
                        "type": "object",
                        "required": ["base"],
                        "additionalProperties": False,
                        "properties": {"base": POSITIVE, "decay": {"enum": ["none", "sqrt"]}},
                    },
                ]
            },
            "seed": SEED,
            "delta": DELTA,
            "orders": ORDERS,
        },
        ["dataset", "sigma", "clip_c", "steps"],
    ),
    "validate": _schema(
        {
            "seed": SEED,
            "plans": COUNT,
            "individual_plans": {"type": "integer", "minimum": 0},
            "workers": {"type": "integer", "minimum": 0},
        }
    ),
}


def check_config(cfg, subcommand: str) -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMAS[subcommand])
    error = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "config"
        raise ConfigError(f"{where}: {error.message}")
    return cfg


def _table(cfg: dict, key: str, base: Path) -> np.ndarray:
    """Inline rounds x points table under ``key`` or a CSV path under ``key + '_csv'``."""
    if f"{key}_csv" in cfg:
        m = read_matrix_csv(base / cfg[f"{key}_csv"])
    else:
        try:
            m = np.array(cfg[key], dtype=float)
        except ValueError:
            raise ConfigError(f"{key} rows differ in length") from None
    if m.ndim != 2 or m.size == 0:
        raise ConfigError(f"{key} must be a nonempty rectangular rounds x points table")
    return m


def _plan_convert(cfg: dict, base: Path):
    orders = tuple(cfg.get("orders", DEFAULT_ORDERS))
    jobs = cfg["conversions"]

    def run():
        results = []
        for job in jobs:
            kind, delta = job["kind"], job["delta"]
            if kind == "rdp_point":
                dp = rdp_to_dp(RdpPoint(job["order"], job["rho"]), delta)
                results.append(dict(job, eps=dp.eps))
            elif kind == "zcdp_budget":
                results.append(dict(job, zcdp_budget=zcdp_budget_for_dp(job["eps"], delta)))
            else:
                slope = (
                    job["slope"]
                    if kind == "linear_curve"
                    else job["steps"] / (2 * job["sigma"] ** 2)
                )
                dp, alpha = best_dp_over_curve(RdpCurve.linear(slope, orders), delta)
                results.append(dict(job, slope=slope, eps=dp.eps, best_order=alpha))
        return {"convert.json": dumps_json({"results": results})}, EXIT_OK

    return run


def _plan_filter(cfg: dict, base: Path):
    kind, stream = cfg["kind"], [float(v) for v in cfg["stream"]]
    if kind == "rdp":
        state, check = FilterState(cfg["order"], cfg["budget"]), rdp_filter_check
    else:
        state, check = DpFilterState(cfg["eps_budget"], cfg["delta_budget"]), dp_filter_check

    def run():
        nonlocal state
        rows, halted_at = [], None
        for step, value in enumerate(stream, start=1):
            decision, state = check(state, value)
            consumed = state.consumed if kind == "rdp" else state.consumed_half_sq
            rows.append((step, value, decision.value, consumed))
            if decision is FilterDecision.HALT:
                halted_at = step
                break
        summary = {
            "kind": kind,
            "accepted": state.history_len,
            "halted_at": halted_at,
            "consumed": rows[-1][3] if rows else 0.0,
            "final_state": snapshot(state),
        }
        if kind == "dp":
            summary["zcdp_budget"] = state.zcdp_budget
        return {
            "filter_decisions.csv": format_csv(("step", "value", "decision", "consumed"), rows),
            "filter_summary.json": dumps_json(summary),
        }, EXIT_OK

    return run


def _plan_odometer(cfg: dict, base: Path):
    losses = _table(cfg, "losses", base)
    if "resume_from" in cfg:
        odo = load_snapshot(base / cfg["resume_from"])
        if not isinstance(odo, IndividualOdometers):
            raise ConfigError("resume_from must hold an odometers snapshot")
    else:
        odo = IndividualOdometers.fresh(losses.shape[1], cfg["order"], cfg["delta"])
    if losses.shape[1] != len(odo):
        raise ConfigError(f"losses have {losses.shape[1]} columns for {len(odo)} points")
    write_state = cfg.get("write_snapshot", False)

    def run():
        nonlocal odo
        rows = []
        start = odo.states[0].round if len(odo) else 0
        for t, row in enumerate(losses, start=start + 1):
            odo = individual_odometer_update(odo, row)
            rows.extend((t, i, b) for i, b in enumerate(odo.bounds))
        hist = sorted(Counter(odo.bounds.tolist()).items())
        out = {
            "odometer_bounds.csv": format_csv(("round", "point_id", "bound"), rows),
            "odometer_histogram.csv": format_csv(("bound", "count"), hist),
        }
        if write_state:
            out["odometer_state.json"] = dumps_json(snapshot(odo))
        return out, EXIT_OK

    return run


def _plan_queries(cfg: dict, base: Path):
    queries = _table(cfg, "queries", base)
    if "resume_from" in cfg:
        session = load_snapshot(base / cfg["resume_from"])
        if not isinstance(session, QuerySession):
            raise ConfigError("resume_from must hold a query-session snapshot")
    else:
        session = QuerySession.start(
            queries.shape[1], cfg["sigma"], cfg["order"], cfg["budget"], seed=cfg["seed"]
        )
    if queries.shape[1] != session.ledger.n:
        raise ConfigError(f"queries have {queries.shape[1]} columns for {session.ledger.n} points")
    if np.any((queries < 0) | (queries > 1)):
        raise ConfigError("query values must lie in [0, 1]")
    write_state = cfg.get("write_snapshot", False)

    def run():
        first = len(session.answers)
        for q in queries:
            answer_query(session, q)
        out = {
            "answers.csv": format_csv(("round", "answer", "active_count"), session.answers[first:]),
            "queries_summary.json": dumps_json(
                {
                    "rounds": session.ledger.round,
                    "active_count": int(np.count_nonzero(session.ledger.active)),
                    "norm_budget": session.norm_budget,
                    "cumulative": session.ledger.cumulative,
                }
            ),
        }
        if write_state:
            out["query_state.json"] = dumps_json(snapshot(session))
        return out, EXIT_OK

    return run


def _learning_rate(cfg: dict):
    lr = cfg.get("learning_rate", 0.1)
    if not isinstance(lr, dict):
        return lr
    base_lr = lr["base"]
    if lr.get("decay", "none") == "sqrt":
        return lambda t: base_lr / math.sqrt(t)
    return base_lr


def _dataset(spec: dict, base: Path):
    if "csv" in spec:
        return read_dataset_csv(base / spec["csv"])
    syn = spec["synthetic"]
    return synthetic_blobs(syn["n"], syn["d"], syn.get("separation", 2.0), syn.get("seed", 0))


def _plan_gd(cfg: dict, base: Path):
    X, y = _dataset(cfg["dataset"], base)
    loss = LossSpec(cfg.get("loss", "logistic"), cfg.get("regularization", 0.0))
    mode = cfg.get("mode", "both")
    sigma, clip_c, steps = cfg["sigma"], cfg["clip_c"], cfg["steps"]
    k_max = cfg.get("k_max", steps)
    norm_budget = cfg.get("norm_budget", steps * clip_c**2)
    seed, delta = cfg.get("seed", 0), cfg.get("delta", 1e-5)
    lr = _learning_rate(cfg)
    orders = tuple(cfg.get("orders", DEFAULT_ORDERS))
    modes = [Mode.PLAIN, Mode.FILTERED] if mode == "both" else [Mode(mode)]
    configs = {
        Mode.PLAIN: GdConfig(sigma, clip_c, steps, lr, None, seed),
        Mode.FILTERED: GdConfig(sigma, clip_c, k_max, lr, norm_budget, seed),
    }

    def run():
        out, summary, status = {}, {"delta": delta, "runs": {}}, EXIT_OK
        for m in modes:
            config = configs[m]
            try:
                theta, trace = run_private_gd(config, X, y, loss, m)
                aborted = None
            except RunAborted as exc:
                theta, trace, aborted = None, exc.trace, str(exc)
                status = EXIT_FAILED
            dp, alpha = best_dp_over_curve(privacy_report(config, m, orders), delta)
            out[f"trace_{m.value}.csv"] = format_csv(TRACE_HEADER, trace.rows())
            summary["runs"][m.value] = {
                "steps": config.steps,
                "aborted": aborted,
                "final_loss": trace.loss[-1] if trace.rounds else None,
                "final_accuracy": trace.accuracy[-1] if trace.rounds else None,
                "final_active_count": trace.active_count[-1] if trace.rounds else None,
                "theta": theta,
                "eps": dp.eps,
                "best_order": alpha,
            }
        out["gd_summary.json"] = dumps_json(summary)
        return out, status

    return run


def _plan_validate(cfg: dict, base: Path):
    seed = cfg.get("seed", 0)
    n_plans = cfg.get("plans", 200)
    n_individual = cfg.get("individual_plans", 20)
    workers = cfg.get("workers", 0)

    def run():
        filt = oracle.fuzz_filter_suite(n_plans, seed=seed, workers=workers)
        indiv = oracle.individual_filter_suite(n_individual, seed=seed + 1)
        counter = []
        for case in oracle.counterexample_grid():
            w = oracle.odometer_counterexample(
                case["order"], case["first_round_zero"], case["first_round_one"]
            )
            ok = w.violation != case["degenerate"]
            counter.append(dict(case, violation=w.violation, margin=w.margin, ok=ok))
        quad = []
        for gap, sigma, alpha in _quadrature_grid():
            closed = alpha * gap**2 / (2 * sigma**2)
            numeric = oracle.numeric_gaussian_divergence(0.0, gap, sigma, alpha)
            quad.append(
                {
                    "gap": gap,
                    "sigma": sigma,
                    "order": alpha,
                    "closed_form": closed,
                    "quadrature": numeric,
                    "ok": abs(closed - numeric) <= 1e-6,
                }
            )
        violations = (
            len(filt.violations)
            + len(indiv.violations)
            + sum(not c["ok"] for c in counter)
            + sum(not q["ok"] for q in quad)
        )
        report = {
            "seed": seed,
            "violations": violations,
            "filter_suite": filt.to_dict(),
            "individual_filter_suite": indiv.to_dict(),
            "odometer_counterexample": counter,
            "gaussian_quadrature": quad,
        }
        return {"validate.json": dumps_json(report)}, EXIT_OK if violations == 0 else EXIT_FAILED

    return run


def _quadrature_grid() -> list[tuple[float, float, float]]:
    """36 (gap, sigma, order) points."""
    return [
        (gap, sigma, alpha)
        for gap in (0.5, 1.0, 2.0)
        for sigma in (0.5, 1.0, 2.0)
        for alpha in (1.0, 2.0, 3.0, 8.0)
    ]


PLANNERS = {
    "convert": _plan_convert,
    "filter": _plan_filter,
    "odometer": _plan_odometer,
    "queries": _plan_queries,
    "gd": _plan_gd,
    "validate": _plan_validate,
}


def load_config(path, subcommand: str) -> dict:
    if path is None:
        if subcommand == "validate":
            return {"schema_version": SCHEMA_VERSION}
        raise ConfigError(f"{subcommand} needs --config")
    try:
        cfg = json.loads(Path(path).read_text(), parse_constant=_reject_constant)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}"
        )
    return check_config(cfg, subcommand)


def _reject_constant(name: str):
    raise ConfigError(f"non-finite number {name} in config")


def output_dir(flag, cfg: dict) -> Path:
    return Path(flag or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def run(subcommand: str, config_path=None, out=None) -> int:
    """Run one subcommand; returns the exit status."""
    if subcommand not in PLANNERS:
        print(f"error: unknown subcommand {subcommand!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path, subcommand)
        base = Path(config_path).parent if config_path else Path(".")
        job = PLANNERS[subcommand](cfg, base)
        target = output_dir(out, cfg)
    except (ConfigError, AccountingError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        artifacts, status = job()
    except AccountingError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    target.mkdir(parents=True, exist_ok=True)
    for name, text in artifacts.items():
        (target / name).write_text(text)
    print(f"wrote {', '.join(sorted(artifacts))} to {target}")
    if status != EXIT_OK:
        print("validation failed; see the report", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="indiv-rdp", description=__doc__.split("\n")[0])
    parser.add_argument("subcommand", choices=sorted(PLANNERS))
    parser.add_argument("--config", "-c", help="JSON run config (optional for validate)")
    parser.add_argument("--output-dir", "-o", help=f"artifact directory (default ${OUTPUT_ENV})")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
