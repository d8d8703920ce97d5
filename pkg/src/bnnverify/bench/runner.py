"""Instance runner: engines over an instance CSV with per-instance budgets.

Every falsified answer is re-checked against the network before it is
recorded; a witness that fails its own check is downgraded to an error
row and counted as a penalty, so the harness can never claim "sat"
without a valid counterexample in hand.
"""

import csv
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

from ..errors import BnnVerifyError, EnumerationBudgetError
from ..falsify import AttackConfig, falsify
from ..onnx_io import parse_model
from ..vnnlib import check_witness, format_witness, parse_property
from ..verify import bab_verify, brute_force_verify, verify_ibp
from .generate import read_instances

log = logging.getLogger("bnnverify.bench")

ENGINES = ("ibp", "bab", "falsify", "brute")
RESULT_VOCAB = ("unsat", "sat", "unknown", "timeout", "error")


@dataclass(frozen=True)
class VerdictRecord:
    instance: str  # property path as named in the CSV
    verdict: str  # unsat | sat | unknown | timeout | error
    seconds: float
    witness_path: str = ""
    penalty: bool = False  # sat claim whose witness failed re-checking
    detail: str = ""

    def __post_init__(self):
        if self.verdict not in RESULT_VOCAB:
            raise ValueError(f"verdict {self.verdict!r} not in {RESULT_VOCAB}")


def _run_engine(net, prop, engine, timeout, seed, attack=None):
    if engine == "ibp":
        return verify_ibp(net, prop)
    if engine == "bab":
        return bab_verify(net, prop, timeout=timeout)
    if engine == "falsify":
        cfg = attack if attack is not None else AttackConfig(seed=seed)
        return falsify(net, prop, cfg, timeout=timeout)
    if engine == "brute":
        return brute_force_verify(net, prop)
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def run_one(inst, engine, seed=0, attack=None) -> VerdictRecord:
    """Run a single instance; never raises on bad inputs, records instead.

    `attack` overrides the falsify engine's sample/pass budget, for runs
    where the default desk-scale budget is wrong for the model size.
    """
    name = inst.property_path
    start = time.monotonic()
    try:
        with open(inst.model_path, "rb") as fh:
            net = parse_model(fh.read())
        with open(inst.property_path) as fh:
            prop = parse_property(fh.read())
        verdict = _run_engine(net, prop, engine, inst.timeout_seconds, seed,
                              attack)
    except EnumerationBudgetError as exc:
        # the exhaustive engine refuses oversized grids; that is a
        # declined answer, not a crash
        return VerdictRecord(name, "unknown", time.monotonic() - start,
                             detail=str(exc))
    except (OSError, BnnVerifyError, ValueError) as exc:
        return VerdictRecord(name, "error", time.monotonic() - start,
                             detail=str(exc))
    elapsed = time.monotonic() - start
    if elapsed > inst.timeout_seconds:
        # budget discipline: a late answer scores as a timeout even when
        # the engine lacks its own deadline support
        return VerdictRecord(name, "timeout", elapsed)
    if verdict.is_falsified:
        if not check_witness(net, prop, verdict.witness):
            log.error("witness for %s failed re-checking", name)
            return VerdictRecord(name, "error", elapsed, penalty=True,
                                 detail="witness failed re-check")
        return VerdictRecord(name, "sat", elapsed,
                             detail=format_witness(verdict.witness))
    return VerdictRecord(name, verdict.result_string(), elapsed)


def run_instances(csv_path, engine="falsify", parallelism=1, seed=0,
                  out_dir: Optional[str] = None, attack=None) -> list:
    """Run every instance in the CSV; results ordered by instance index.

    With out_dir set, each valid witness is written there as
    <instance-stem>.witness.txt and referenced from its record.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    instances = read_instances(csv_path)
    if parallelism == 1:
        records = [run_one(inst, engine, seed, attack) for inst in instances]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(run_one, inst, engine, seed, attack)
                       for inst in instances]
            records = [f.result() for f in futures]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        records = [_write_witness(r, out_dir) for r in records]
    return records


def _write_witness(record, out_dir):
    if record.verdict != "sat":
        return record
    stem = os.path.splitext(os.path.basename(record.instance))[0]
    path = os.path.join(out_dir, f"{stem}.witness.txt")
    with open(path, "w", newline="\n") as fh:
        fh.write(record.detail)
    return replace(record, witness_path=path, detail="")


def render_results_csv(records) -> str:
    """Header + one row per instance: instance, verdict, seconds, witness."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["instance", "verdict", "seconds", "witness_path"])
    for r in records:
        writer.writerow([os.path.basename(r.instance), r.verdict,
                         f"{r.seconds:.3f}", r.witness_path])
    return out.getvalue()


def summarize_records(records) -> dict:
    """Counts in the scoring vocabulary: verified/falsified/penalty etc."""
    counts = {
        "verified": 0, "falsified": 0, "unknown": 0,
        "timeout": 0, "error": 0, "penalty": 0,
    }
    for r in records:
        if r.verdict == "unsat":
            counts["verified"] += 1
        elif r.verdict == "sat":
            counts["falsified"] += 1
        else:
            counts[r.verdict] += 1
        if r.penalty:
            counts["penalty"] += 1
    return counts
