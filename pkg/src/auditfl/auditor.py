"""Independent audit of a published training record.

The auditor sees only the ledger bytes: the genesis payload (task, key
roster, signed initial model) and the training record. It re-derives the
benign set of every round from the masked detection identity, replays the
masked aggregation, recovers the initial model by telescoping the masked
updates, and checks the recovered model against the server's signature.
No secret (seed, mask, key, gradient) is ever consulted; this module must
not import the protocol, randomness, or training machinery.

All checks are exact integer equalities; there are no tolerances anywhere.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from . import crypto
from .fixedpoint import FpVector, dot, floor_div, scale_by_dyadic, sign_indicator
from .ledger import Ledger
from .records import (
    GenesisPayload,
    RecordFormatError,
    RoundRecord,
    TrainingRecord,
)


class AuditFailure(Exception):
    """A check failed; message carries the stage and location."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


@dataclass
class RoundAudit:
    """Outcome of the per-round checks."""

    r: int
    present_ids: tuple[int, ...]
    detection_positive: tuple[int, ...]  # re-derived from masked inner products
    published_benign: tuple[int, ...]
    signatures_ok: bool
    benign_set_ok: bool
    ranking: tuple[int, ...]  # ids by deflated inner product, descending


@dataclass
class AuditReport:
    """Aggregated verdict; accepts iff every sub-check accepted."""

    ok: bool
    failure_stage: str | None = None
    failure: str | None = None
    chain_ok: bool = False
    n_records: int = 0
    rounds: list[RoundAudit] = field(default_factory=list)
    model_recovery_ok: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "verdict": "accept" if self.ok else "reject",
                "failure_stage": self.failure_stage,
                "failure": self.failure,
                "chain_ok": self.chain_ok,
                "n_training_records": self.n_records,
                "model_recovery_ok": self.model_recovery_ok,
                "rounds": [
                    {
                        "round": ra.r,
                        "participants": list(ra.present_ids),
                        "derived_benign": list(ra.detection_positive),
                        "published_benign": list(ra.published_benign),
                        "signatures_ok": ra.signatures_ok,
                        "benign_set_ok": ra.benign_set_ok,
                        "deflated_ranking": list(ra.ranking),
                    }
                    for ra in self.rounds
                ],
            },
            indent=2,
        )


def audit_detection(
    rec: RoundRecord, genesis: GenesisPayload
) -> tuple[set[int], set[int]]:
    """Verify the round's signatures and re-derive the benign set.

    Returns (sign-test-positive ids, derived benign set); the derived set
    intersects the positives with the ids whose aggregation mask was
    published. Any bad signature or structural gap is an AuditFailure.
    """
    present = sorted(rec.local_detect)
    roster = genesis.participant_pks
    for pid in present:
        if pid not in roster:
            raise AuditFailure(
                "structure", f"round {rec.r}: unknown participant id {pid}"
            )
    if sorted(rec.server_detect) != present:
        raise AuditFailure(
            "structure",
            f"round {rec.r}: server detection masks cover "
            f"{sorted(rec.server_detect)} but participants are {present}",
        )
    for pid in present:
        vec, sig = rec.local_detect[pid]
        if not crypto.verify(roster[pid], vec.encode(), sig):
            raise AuditFailure(
                "signature",
                f"round {rec.r}: detection-mask signature of participant "
                f"{pid} does not verify",
            )
    for pid in sorted(rec.local_agg):
        if pid not in roster:
            raise AuditFailure(
                "structure", f"round {rec.r}: unknown benign id {pid}"
            )
        vec, sig = rec.local_agg[pid]
        if not crypto.verify(roster[pid], vec.encode(), sig):
            raise AuditFailure(
                "signature",
                f"round {rec.r}: aggregation-mask signature of participant "
                f"{pid} does not verify",
            )
    positive = {
        pid
        for pid in present
        if sign_indicator(dot(rec.local_detect[pid][0], rec.server_detect[pid]))
        == 1
    }
    derived = positive & set(rec.local_agg)
    return positive, derived


def audit_aggregate(rec: RoundRecord, benign: set[int]) -> FpVector:
    """Replay the masked aggregation over the derived benign set."""
    total = rec.server_agg
    for pid in sorted(benign):
        if pid not in rec.local_agg:
            raise AuditFailure(
                "structure",
                f"round {rec.r}: benign participant {pid} has no published "
                f"aggregation mask",
            )
        total = total + rec.local_agg[pid][0]
    return floor_div(total, len(benign) + 1)


def deflated_products(
    rec: RoundRecord, deflation: dict[int, tuple[int, int]]
) -> dict[int, Fraction]:
    """Masked inner products scaled back to a common basis by rt_i."""
    out: dict[int, Fraction] = {}
    for pid in sorted(rec.local_detect):
        if pid not in deflation:
            raise AuditFailure(
                "structure", f"round {rec.r}: no deflation value for id {pid}"
            )
        num, den = deflation[pid]
        inner = dot(rec.local_detect[pid][0], rec.server_detect[pid])
        out[pid] = Fraction(num, den) * inner
    return out


def ranking_of(products: dict[int, Fraction]) -> tuple[int, ...]:
    """Ids by descending deflated product; ties break by ascending id."""
    return tuple(pid for pid, _ in sorted(products.items(), key=lambda kv: (-kv[1], kv[0])))


def audit_clipping(
    record: TrainingRecord,
) -> list[tuple[int, tuple[int, ...]]]:
    """Per-round ranking of participants by deflated inner product."""
    _check_deflation(record)
    return [
        (rec.r, ranking_of(deflated_products(rec, record.deflation)))
        for rec in record.rounds
    ]


def _check_deflation(record: TrainingRecord) -> None:
    for pid, (num, den) in sorted(record.deflation.items()):
        if den == 0:
            raise AuditFailure(
                "structure", f"deflation value of id {pid} has zero denominator"
            )
        if num * den <= 0:
            raise AuditFailure(
                "structure",
                f"deflation value of id {pid} is not positive; the masked "
                f"products cannot be compared on a common scale",
            )


def audit_trace(
    record: TrainingRecord,
    genesis: GenesisPayload,
    round_aggregates: list[FpVector],
) -> FpVector:
    """Recover the initial model and check it against the genesis signature.

    The recovery telescopes exactly: masked model plus the floored
    learning-rate steps of every replayed masked aggregate equals the
    initial model the server signed, bit for bit, iff the record is honest.
    """
    w = record.masked_model
    for masked_agg in round_aggregates:
        w = w + scale_by_dyadic(masked_agg, record.eta_num, record.eta_exp)
    if not crypto.verify(genesis.server_pk, w.encode(), genesis.w0_signature):
        raise AuditFailure(
            "model-recovery",
            "recovered initial model does not match the signed initial model",
        )
    return w


def audit_record(record: TrainingRecord, genesis: GenesisPayload) -> AuditReport:
    """All protocol checks for one training record against its genesis."""
    report = AuditReport(ok=False, chain_ok=True)
    try:
        if record.dim != genesis.dim or record.scale != genesis.scale:
            raise AuditFailure(
                "metadata",
                f"record geometry (dim {record.dim}, scale {record.scale}) "
                f"differs from genesis (dim {genesis.dim}, scale {genesis.scale})",
            )
        if (record.eta_num, record.eta_exp) != (genesis.eta_num, genesis.eta_exp):
            raise AuditFailure(
                "metadata", "record learning rate differs from genesis"
            )
        if len(record.rounds) != genesis.rounds:
            raise AuditFailure(
                "metadata",
                f"record holds {len(record.rounds)} rounds, task declared "
                f"{genesis.rounds}",
            )
        if record.n_participants != len(genesis.participant_pks):
            raise AuditFailure(
                "metadata",
                f"record declares {record.n_participants} participants, "
                f"genesis roster has {len(genesis.participant_pks)}",
            )
        _check_deflation(record)
        replayed: list[FpVector] = []
        for rec in record.rounds:
            positive, derived = audit_detection(rec, genesis)
            published = set(rec.local_agg)
            if genesis.clipping:
                set_ok = published <= positive
            else:
                set_ok = published == positive
            if not set_ok:
                raise AuditFailure(
                    "benign-set",
                    f"round {rec.r}: published benign set "
                    f"{sorted(published)} inconsistent with derived "
                    f"{sorted(positive)}",
                )
            replayed.append(audit_aggregate(rec, derived))
            ranking = ranking_of(deflated_products(rec, record.deflation))
            report.rounds.append(
                RoundAudit(
                    r=rec.r,
                    present_ids=tuple(sorted(rec.local_detect)),
                    detection_positive=tuple(sorted(positive)),
                    published_benign=tuple(sorted(published)),
                    signatures_ok=True,
                    benign_set_ok=True,
                    ranking=ranking,
                )
            )
        audit_trace(record, genesis, replayed)
        report.model_recovery_ok = True
        report.ok = True
    except AuditFailure as e:
        report.failure_stage = e.stage
        report.failure = str(e)
    return report


def full_audit(ledger_or_path) -> AuditReport:
    """Verify the chain, then every training record on it; pure in the bytes."""
    try:
        if isinstance(ledger_or_path, Ledger):
            chain = ledger_or_path
        else:
            chain = Ledger.open(ledger_or_path)
    except Exception as e:
        return AuditReport(
            ok=False, failure_stage="ledger", failure=str(e), chain_ok=False
        )
    ok, bad = chain.verify_chain()
    if not ok:
        return AuditReport(
            ok=False,
            failure_stage="ledger",
            failure=f"hash chain broken at height {bad}",
            chain_ok=False,
        )
    try:
        genesis = GenesisPayload.decode(chain.get_record(height=0))
    except Exception as e:
        return AuditReport(
            ok=False,
            failure_stage="genesis",
            failure=f"genesis payload does not parse: {e}",
            chain_ok=True,
        )
    report = AuditReport(ok=True, chain_ok=True)
    for height in range(1, len(chain)):
        try:
            record = TrainingRecord.decode(chain.get_record(height=height))
        except RecordFormatError as e:
            return AuditReport(
                ok=False,
                failure_stage="record-format",
                failure=f"block {height}: {e}",
                chain_ok=True,
                n_records=report.n_records,
            )
        sub = audit_record(record, genesis)
        sub.chain_ok = True
        sub.n_records = report.n_records + 1
        if not sub.ok:
            return sub
        report.n_records += 1
        report.rounds.extend(sub.rounds)
        report.model_recovery_ok = sub.model_recovery_ok
    return report
