"""Shared helpers for the test suite: tiny datasets, runs, tamper tools."""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from auditfl import RunConfig, run_training
from auditfl.ledger import Ledger
from auditfl.randomness import derive_seed, prg
from auditfl.records import GenesisPayload, TrainingRecord
from auditfl.training import AdversarySpec, Dataset


def make_dataset(seed: int, n: int, features: int, classes: int) -> Dataset:
    """Small separable-with-noise classification set, fully deterministic."""
    words = prg(derive_seed(seed, "test-feat"), n * features)
    noise = (words % np.uint64(1000)).astype(np.float32).reshape(n, features) / 999.0
    y = (prg(derive_seed(seed, "test-lab"), n) % np.uint64(classes)).astype(np.int64)
    # per-class feature templates with small noise: honest batch gradients
    # then correlate strongly across shards, which the sign-based detection
    # tests rely on
    tmpl_words = prg(derive_seed(seed, "test-templates"), classes * features)
    templates = (tmpl_words % np.uint64(1000)).astype(np.float32) / 999.0
    templates = templates.reshape(classes, features)
    X = np.clip(0.85 * templates[y] + 0.15 * noise, 0.0, 1.0)
    return Dataset(features=X, labels=y, n_classes=classes)


def small_config(**overrides) -> RunConfig:
    base = dict(
        participants=3,
        rounds=2,
        eta="0.125",
        batch_size=64,
        master_seed=11,
        pretrain_steps=0,
        metrics_every=0,
    )
    base.update(overrides)
    return RunConfig(**base)


def run_published(tmp_path: Path, cfg: RunConfig, seed: int = 5,
                  n: int = 600, features: int = 16, classes: int = 4,
                  **run_kwargs):
    """Run the protocol on a fresh tiny dataset and publish to a tmp ledger."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    train = make_dataset(seed, n, features, classes)
    test = make_dataset(seed + 1, max(60, n // 4), features, classes)
    ledger_path = tmp_path / f"ledger_{seed}_{cfg.master_seed}.bin"
    if ledger_path.exists():
        ledger_path.unlink()
    result = run_training(
        cfg, train, test, ledger_path=ledger_path, keep_internals=True, **run_kwargs
    )
    return result, ledger_path


# ---------------------------------------------------------------------------
# Tamper tools: a malicious server rewrites record contents and republishes a
# fresh, internally consistent chain; the audit must still reject.
# ---------------------------------------------------------------------------


def rebuild_ledger(path: Path, genesis_payload: bytes, payloads: list[bytes]) -> None:
    path.unlink()
    led = Ledger.create(path, genesis_payload)
    for p in payloads:
        led.append(p)


def load_chain(path: Path) -> tuple[bytes, TrainingRecord, GenesisPayload]:
    led = Ledger.open(path)
    genesis_bytes = led.get_record(height=0)
    record = TrainingRecord.decode(led.get_record(height=1))
    return genesis_bytes, record, GenesisPayload.decode(genesis_bytes)


def republish(path: Path, record: TrainingRecord) -> None:
    led = Ledger.open(path)
    genesis_bytes = led.get_record(height=0)
    rebuild_ledger(path, genesis_bytes, [record.encode()])


def _negate_entry(vec, k: int):
    from auditfl.fixedpoint import FpVector

    raw = vec.raw.copy()
    raw[k] = -raw[k] if raw[k] != 0 else 1
    return FpVector(raw, vec.scale)


def _bump_entry(vec, k: int, delta: int = 1):
    from auditfl.fixedpoint import FpVector

    raw = vec.raw.copy()
    raw[k] = raw[k] + delta
    return FpVector(raw, vec.scale)


def tamper_flip_mg1(record: TrainingRecord, r_idx: int = 0) -> TrainingRecord:
    """Negate one entry of one participant's detection-mask vector."""
    rec = record.rounds[r_idx]
    pid = sorted(rec.local_detect)[0]
    vec, sig = rec.local_detect[pid]
    new_detect = dict(rec.local_detect)
    new_detect[pid] = (_negate_entry(vec, 0), sig)
    new_rec = dataclasses.replace(rec, local_detect=new_detect)
    rounds = list(record.rounds)
    rounds[r_idx] = new_rec
    return dataclasses.replace(record, rounds=tuple(rounds))


def tamper_drop_mg2(record: TrainingRecord) -> TrainingRecord:
    """Remove one benign participant's aggregation mask from some round."""
    for r_idx, rec in enumerate(record.rounds):
        if rec.local_agg:
            pid = sorted(rec.local_agg)[0]
            new_agg = {k: v for k, v in rec.local_agg.items() if k != pid}
            rounds = list(record.rounds)
            rounds[r_idx] = dataclasses.replace(rec, local_agg=new_agg)
            return dataclasses.replace(record, rounds=tuple(rounds))
    raise AssertionError("no round with a nonempty benign set to tamper")


def tamper_masked_model(record: TrainingRecord) -> TrainingRecord:
    """Perturb one raw of the masked final model by +1."""
    return dataclasses.replace(
        record, masked_model=_bump_entry(record.masked_model, 0)
    )


def tamper_swap_signatures(record: TrainingRecord) -> TrainingRecord:
    """Swap the detection-mask signatures of two participants in one round."""
    for r_idx, rec in enumerate(record.rounds):
        ids = sorted(rec.local_detect)
        if len(ids) >= 2:
            a, b = ids[0], ids[1]
            new_detect = dict(rec.local_detect)
            va, sa = new_detect[a]
            vb, sb = new_detect[b]
            new_detect[a] = (va, sb)
            new_detect[b] = (vb, sa)
            rounds = list(record.rounds)
            rounds[r_idx] = dataclasses.replace(rec, local_detect=new_detect)
            return dataclasses.replace(record, rounds=tuple(rounds))
    raise AssertionError("need two participants to swap signatures")


def tamper_ledger_byte(path: Path) -> None:
    """Flip one payload byte in place; the hash chain must catch this."""
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))


def first_round_with_benign(result) -> tuple[int, int]:
    """(round, participant id) of the first benign participant of a run."""
    for info in result.internals:
        if info.benign:
            return info.r, info.benign[0]
    raise AssertionError("run produced no benign participants to skip")


def sign_flip_spec() -> AdversarySpec:
    return AdversarySpec("sign_flip")
