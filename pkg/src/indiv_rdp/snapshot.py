"""Versioned JSON snapshots of accounting state.

Exact rational sums are stored as ``"num/den"`` strings and floats go through
``repr``-precision JSON, so a restored object continues bit for bit.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParameterError
from .filters import DpFilterState, FilterState
from .io import dumps_json
from .ledger import AccountingMode, IndividualLedger, IndividualOdometers, OdometerState
from .query_engine import QuerySession

SNAPSHOT_VERSION = 1


def _frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def _filter_doc(s: FilterState) -> dict:
    return {
        "order": s.order,
        "budget_b": s.budget_b,
        "consumed": _frac(s.consumed_exact),
        "history_len": s.history_len,
    }


def _filter_from(d: dict) -> FilterState:
    return FilterState(d["order"], d["budget_b"], Fraction(d["consumed"]), d["history_len"])


def _ledger_doc(s: IndividualLedger) -> dict:
    return {
        "order": s.order,
        "budget_b": s.budget_b,
        "cumulative": s.cumulative.tolist(),
        "active": s.active.tolist(),
        "round": s.round,
        "mode": s.mode.value,
    }


def _ledger_from(d: dict) -> IndividualLedger:
    return IndividualLedger(
        d["order"],
        d["budget_b"],
        np.array(d["cumulative"], dtype=float),
        np.array(d["active"], dtype=bool),
        d["round"],
        AccountingMode(d["mode"]),
    )


def _odometer_doc(s: OdometerState) -> dict:
    return {
        "order": s.order,
        "delta": s.delta,
        "segments": s.segments,
        "segment": _filter_doc(s.segment),
        "restart_round": s.restart_round,
        "round": s.round,
    }


def _odometer_from(d: dict) -> OdometerState:
    return OdometerState(
        d["order"],
        d["delta"],
        d["segments"],
        _filter_from(d["segment"]),
        d["restart_round"],
        d["round"],
    )


def snapshot(obj) -> dict:
    """Serialize a filter, ledger, odometer or query session to a plain document."""
    if isinstance(obj, FilterState):
        kind, body = "filter", _filter_doc(obj)
    elif isinstance(obj, DpFilterState):
        kind, body = (
            "dp_filter",
            {
                "eps_budget": obj.eps_budget,
                "delta_budget": obj.delta_budget,
                "consumed_half_sq": _frac(obj.consumed_half_sq_exact),
                "history_len": obj.history_len,
            },
        )
    elif isinstance(obj, IndividualLedger):
        kind, body = "ledger", _ledger_doc(obj)
    elif isinstance(obj, OdometerState):
        kind, body = "odometer", _odometer_doc(obj)
    elif isinstance(obj, IndividualOdometers):
        kind, body = (
            "odometers",
            {
                "mode": obj.mode.value,
                "states": [_odometer_doc(s) for s in obj.states],
            },
        )
    elif isinstance(obj, QuerySession):
        if obj.noise is not None:
            raise ParameterError("sessions with an injected noise source cannot be snapshotted")
        kind, body = (
            "query_session",
            {
                "ledger": _ledger_doc(obj.ledger),
                "sigma": obj.sigma,
                "seed": obj.seed,
                "rng": obj.rng.bit_generator.state,
                "answers": [list(a) for a in obj.answers],
            },
        )
    else:
        raise ParameterError(f"cannot snapshot {type(obj).__name__}")
    return {"schema_version": SNAPSHOT_VERSION, "kind": kind, "state": body}


def restore(doc: dict):
    if doc.get("schema_version") != SNAPSHOT_VERSION:
        raise ConfigError(f"unsupported snapshot version {doc.get('schema_version')!r}")
    kind, d = doc.get("kind"), doc.get("state")
    try:
        if kind == "filter":
            return _filter_from(d)
        if kind == "dp_filter":
            return DpFilterState(
                d["eps_budget"],
                d["delta_budget"],
                Fraction(d["consumed_half_sq"]),
                d["history_len"],
            )
        if kind == "ledger":
            return _ledger_from(d)
        if kind == "odometer":
            return _odometer_from(d)
        if kind == "odometers":
            return IndividualOdometers(
                tuple(_odometer_from(s) for s in d["states"]), AccountingMode(d["mode"])
            )
        if kind == "query_session":
            rng = np.random.default_rng()
            rng.bit_generator.state = d["rng"]
            return QuerySession(
                _ledger_from(d["ledger"]),
                d["sigma"],
                seed=d["seed"],
                rng=rng,
                answers=[tuple(a) for a in d["answers"]],
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed {kind} snapshot: {exc}") from exc
    raise ConfigError(f"unknown snapshot kind {kind!r}")


def save(path, obj) -> None:
    Path(path).write_text(dumps_json(snapshot(obj)))


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read snapshot {path}: {exc}") from exc
    return restore(doc)
