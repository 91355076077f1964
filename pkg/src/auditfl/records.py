"""Public record structures and their canonical byte layouts.

These are the only structures an external auditor needs to parse, so the
encodings are fixed and self-describing: little-endian fixed-width framing,
length-prefixed canonical FpVector payloads, and rationals as pairs of
big-endian signed big integers. The full layout is documented in README.md.

This module holds no secrets; the auditor imports it, the protocol fills it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .crypto import PUBLIC_KEY_SIZE, SIGNATURE_SIZE, sha256
from .fixedpoint import FpVector

GENESIS_MAGIC = b"GEN1"
ROUND_MAGIC = b"RND1"
TRCD_MAGIC = b"TRCD"
WIRE_VERSION = 1


class RecordFormatError(Exception):
    """Structured parse failure: records are rejected, never crash the parser."""


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.off = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise RecordFormatError(
                f"{self.what}: truncated at offset {self.off}, "
                f"needed {n} more bytes of {len(self.data)}"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def expect_end(self):
        if self.off != len(self.data):
            raise RecordFormatError(
                f"{self.what}: {len(self.data) - self.off} trailing bytes "
                f"after offset {self.off}"
            )


def _blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def _read_blob(r: _Reader) -> bytes:
    (n,) = r.unpack("<I")
    return r.take(n)


def encode_bigint(x: int) -> bytes:
    """Signed big integer: length-prefixed minimal two's-complement, big-endian."""
    n = (x.bit_length() + 8) // 8 if x != 0 else 0
    return _blob(x.to_bytes(n, "big", signed=True))


def _read_bigint(r: _Reader) -> int:
    return int.from_bytes(_read_blob(r), "big", signed=True)


def _read_fpvector(r: _Reader, what: str) -> FpVector:
    try:
        return FpVector.decode(_read_blob(r))
    except ValueError as e:
        raise RecordFormatError(f"{what}: {e}") from None


# ---------------------------------------------------------------------------
# Genesis payload: the ledger's trust anchor.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenesisPayload:
    """Task definition, signed initial model, and the public-key roster."""

    rounds: int
    eta_num: int
    eta_exp: int
    dim: int
    scale: int
    clipping: bool
    clip_factor: int
    security_param: int
    server_pk: bytes
    w0_signature: bytes
    participant_pks: dict[int, bytes]  # id -> verification key

    def task_bytes(self) -> bytes:
        return struct.pack(
            "<IqBQBBII",
            self.rounds,
            self.eta_num,
            self.eta_exp,
            self.dim,
            self.scale,
            1 if self.clipping else 0,
            self.clip_factor,
            self.security_param,
        )

    def task_hash(self) -> bytes:
        return sha256(self.task_bytes())

    def encode(self) -> bytes:
        out = [GENESIS_MAGIC, struct.pack("<H", WIRE_VERSION)]
        task = self.task_bytes()
        out.append(self.task_hash())
        out.append(task)
        out.append(self.server_pk)
        out.append(self.w0_signature)
        out.append(struct.pack("<I", len(self.participant_pks)))
        for pid in sorted(self.participant_pks):
            out.append(struct.pack("<I", pid))
            out.append(self.participant_pks[pid])
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "GenesisPayload":
        r = _Reader(data, "genesis payload")
        if r.take(4) != GENESIS_MAGIC:
            raise RecordFormatError("genesis payload: bad magic")
        (version,) = r.unpack("<H")
        if version != WIRE_VERSION:
            raise RecordFormatError(f"genesis payload: unknown version {version}")
        stored_hash = r.take(32)
        rounds, eta_num, eta_exp, dim, scale, clipping, clip_factor, k = r.unpack(
            "<IqBQBBII"
        )
        server_pk = r.take(PUBLIC_KEY_SIZE)
        w0_sig = r.take(SIGNATURE_SIZE)
        (n,) = r.unpack("<I")
        pks: dict[int, bytes] = {}
        for _ in range(n):
            (pid,) = r.unpack("<I")
            if pid in pks:
                raise RecordFormatError(f"genesis payload: duplicate id {pid}")
            pks[pid] = r.take(PUBLIC_KEY_SIZE)
        r.expect_end()
        obj = cls(
            rounds=rounds,
            eta_num=eta_num,
            eta_exp=eta_exp,
            dim=dim,
            scale=scale,
            clipping=bool(clipping),
            clip_factor=clip_factor,
            security_param=k,
            server_pk=server_pk,
            w0_signature=w0_sig,
            participant_pks=pks,
        )
        if obj.task_hash() != stored_hash:
            raise RecordFormatError("genesis payload: task hash mismatch")
        return obj


# ---------------------------------------------------------------------------
# Per-round record: masked gradients and signatures.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundRecord:
    """Everything the protocol publishes about one training round.

    Multiplicatively masked local gradients (with signatures) appear for
    every participant; additively masked ones only for the round's benign
    set. Detection masks of the server appear for every participant, plus
    the single additively masked server aggregate.
    """

    r: int
    local_detect: dict[int, tuple[FpVector, bytes]]  # id -> (mg1, sig)
    local_agg: dict[int, tuple[FpVector, bytes]]  # id -> (mg2, sig), benign only
    server_detect: dict[int, FpVector]  # id -> mg_S1 (one per participant)
    server_agg: FpVector  # mg_S2

    @property
    def benign_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.local_agg))

    def encode(self) -> bytes:
        out = [ROUND_MAGIC, struct.pack("<I", self.r)]
        out.append(struct.pack("<I", len(self.local_detect)))
        for pid in sorted(self.local_detect):
            vec, sig = self.local_detect[pid]
            out.append(struct.pack("<I", pid))
            out.append(_blob(vec.encode()))
            out.append(sig)
        out.append(struct.pack("<I", len(self.local_agg)))
        for pid in sorted(self.local_agg):
            vec, sig = self.local_agg[pid]
            out.append(struct.pack("<I", pid))
            out.append(_blob(vec.encode()))
            out.append(sig)
        out.append(struct.pack("<I", len(self.server_detect)))
        for pid in sorted(self.server_detect):
            out.append(struct.pack("<I", pid))
            out.append(_blob(self.server_detect[pid].encode()))
        out.append(_blob(self.server_agg.encode()))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "RoundRecord":
        r = _Reader(data, "round record")
        if r.take(4) != ROUND_MAGIC:
            raise RecordFormatError("round record: bad magic")
        (rnd,) = r.unpack("<I")

        def read_signed_section(name: str) -> dict[int, tuple[FpVector, bytes]]:
            (count,) = r.unpack("<I")
            section: dict[int, tuple[FpVector, bytes]] = {}
            for _ in range(count):
                (pid,) = r.unpack("<I")
                if pid in section:
                    raise RecordFormatError(
                        f"round record: duplicate id {pid} in {name}"
                    )
                vec = _read_fpvector(r, f"round {rnd} {name} id {pid}")
                sig = r.take(SIGNATURE_SIZE)
                section[pid] = (vec, sig)
            return section

        local_detect = read_signed_section("detect masks")
        local_agg = read_signed_section("aggregation masks")
        (count,) = r.unpack("<I")
        server_detect: dict[int, FpVector] = {}
        for _ in range(count):
            (pid,) = r.unpack("<I")
            if pid in server_detect:
                raise RecordFormatError(
                    f"round record: duplicate id {pid} in server masks"
                )
            server_detect[pid] = _read_fpvector(r, f"round {rnd} server mask {pid}")
        server_agg = _read_fpvector(r, f"round {rnd} server aggregate")
        r.expect_end()
        return cls(
            r=rnd,
            local_detect=local_detect,
            local_agg=local_agg,
            server_detect=server_detect,
            server_agg=server_agg,
        )


# ---------------------------------------------------------------------------
# The training record published to the ledger.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingRecord:
    """All round records, the masked final model, and the deflation values."""

    rounds: tuple[RoundRecord, ...]
    masked_model: FpVector
    deflation: dict[int, tuple[int, int]]  # id -> exact rational (num, den)
    dim: int
    scale: int
    eta_num: int
    eta_exp: int
    n_participants: int

    def encode(self) -> bytes:
        out = [
            TRCD_MAGIC,
            struct.pack(
                "<HIQBqBI",
                WIRE_VERSION,
                len(self.rounds),
                self.dim,
                self.scale,
                self.eta_num,
                self.eta_exp,
                self.n_participants,
            ),
        ]
        for rec in self.rounds:
            out.append(_blob(rec.encode()))
        out.append(_blob(self.masked_model.encode()))
        out.append(struct.pack("<I", len(self.deflation)))
        for pid in sorted(self.deflation):
            num, den = self.deflation[pid]
            out.append(struct.pack("<I", pid))
            out.append(encode_bigint(num))
            out.append(encode_bigint(den))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "TrainingRecord":
        r = _Reader(data, "training record")
        if r.take(4) != TRCD_MAGIC:
            raise RecordFormatError("training record: bad magic")
        version, n_rounds, dim, scale, eta_num, eta_exp, n_parts = r.unpack(
            "<HIQBqBI"
        )
        if version != WIRE_VERSION:
            raise RecordFormatError(f"training record: unknown version {version}")
        rounds = []
        for k in range(n_rounds):
            rounds.append(RoundRecord.decode(_read_blob(r)))
            if rounds[-1].r != k + 1:
                raise RecordFormatError(
                    f"training record: round {k} stores index {rounds[-1].r}, "
                    f"expected {k + 1}"
                )
        masked_model = _read_fpvector(r, "masked final model")
        (count,) = r.unpack("<I")
        deflation: dict[int, tuple[int, int]] = {}
        for _ in range(count):
            (pid,) = r.unpack("<I")
            if pid in deflation:
                raise RecordFormatError(
                    f"training record: duplicate deflation id {pid}"
                )
            num = _read_bigint(r)
            den = _read_bigint(r)
            deflation[pid] = (num, den)
        r.expect_end()
        return cls(
            rounds=tuple(rounds),
            masked_model=masked_model,
            deflation=deflation,
            dim=dim,
            scale=scale,
            eta_num=eta_num,
            eta_exp=eta_exp,
            n_participants=n_parts,
        )
