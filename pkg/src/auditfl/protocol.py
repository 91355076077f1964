"""The masked-gradient training protocol: preprocessing, rounds, publication.

One process plays the central server and every participant; messages are
plain function arguments with a per-round barrier (the loop). Participants
send plaintext gradients plus signatures over the two masked forms; the
server recomputes the masks it issued and verifies the signatures, so masks
protect against third parties and other participants, not against the
server, which is trusted by participants.

All protocol vectors are fixed point, so the published record satisfies the
audit identities exactly:

  sign(<mg1_i, mgS1_i>) == sign(<g_i, g_S>)                    (detection)
  floor((mgS2 + sum_benign mg2_j) / (|P_r|+1)) == m_r + ag_r   (aggregation)
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import crypto
from .config import RunConfig
from .fixedpoint import (
    FpVector,
    dot,
    floor_div,
    hadamard,
    scale_by_dyadic,
    sign_indicator,
)
from .ledger import Ledger
from .randomness import (
    ModelMaskShares,
    bounded_int_vector,
    derive_seed,
    gen_correlated_pair,
    gen_model_mask_shares,
    prg,
    prvg,
)
from .records import GenesisPayload, RoundRecord, TrainingRecord
from .training import (
    AdversarySpec,
    Architecture,
    Dataset,
    corrupt_gradient,
    corrupt_shard,
    evaluate,
    local_gradient,
)


def _seed_bytes(seed: int, n: int = 32) -> bytes:
    words = prg(seed, (n + 7) // 8)
    return words.tobytes()[:n]


@dataclass(frozen=True)
class ParticipantSecrets:
    """What the server hands participant i at preprocessing."""

    id: int
    mask_seed: int
    zero_seed: int
    rn: int
    keypair: crypto.KeyPair


@dataclass(frozen=True)
class ServerSecrets:
    """The server's preprocessing material for every participant."""

    per_participant: dict[int, ParticipantSecrets]
    rn_server: dict[int, int]  # id -> rn_S_i
    l_values: dict[int, int]  # id -> l_i = rn_i * rn_S_i > 0
    model_mask: ModelMaskShares
    keypair: crypto.KeyPair


def round_mask_vector(mask_seed: int, r: int, rn: int, dim: int) -> np.ndarray:
    """The round-r multiplicative mask stream for one (seed, rn) pair."""
    return prvg(derive_seed(mask_seed, "prvg", r), rn, dim)


def round_zero_share(zero_seed: int, r: int, dim: int, scale: int) -> FpVector:
    """The round-r additive zero-share stream for one participant."""
    return FpVector(
        bounded_int_vector(derive_seed(zero_seed, "zero", r), dim), scale
    )


def preprocess(
    config: RunConfig, dim: int, w0: FpVector
) -> tuple[ServerSecrets, list[ParticipantSecrets], GenesisPayload]:
    """Generate all secrets from the master seed and the genesis payload."""
    eta_num, eta_exp = config.eta_parts()
    master = config.master_seed
    server_kp = crypto.keygen(_seed_bytes(derive_seed(master, "key", "server")))
    per: dict[int, ParticipantSecrets] = {}
    rn_server: dict[int, int] = {}
    l_values: dict[int, int] = {}
    for i in range(1, config.participants + 1):
        pair = gen_correlated_pair(
            derive_seed(master, "rn", i), lo=config.rn_lo, hi=config.rn_hi
        )
        per[i] = ParticipantSecrets(
            id=i,
            mask_seed=derive_seed(master, "mask", i),
            zero_seed=derive_seed(master, "zero", i),
            rn=pair.rn_i,
            keypair=crypto.keygen(_seed_bytes(derive_seed(master, "key", i))),
        )
        rn_server[i] = pair.rn_s
        l_values[i] = pair.l
    model_mask = gen_model_mask_shares(
        derive_seed(master, "model-mask"),
        config.rounds,
        dim,
        config.scale,
        eta_num,
        eta_exp,
    )
    secrets = ServerSecrets(
        per_participant=per,
        rn_server=rn_server,
        l_values=l_values,
        model_mask=model_mask,
        keypair=server_kp,
    )
    genesis = GenesisPayload(
        rounds=config.rounds,
        eta_num=eta_num,
        eta_exp=eta_exp,
        dim=dim,
        scale=config.scale,
        clipping=config.clipping,
        clip_factor=config.clip_factor,
        security_param=config.security_param,
        server_pk=server_kp.pk,
        w0_signature=crypto.sign(server_kp.sk, w0.encode()),
        participant_pks={i: per[i].keypair.pk for i in sorted(per)},
    )
    return secrets, [per[i] for i in sorted(per)], genesis


# ---------------------------------------------------------------------------
# Participant side.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Submission:
    """What a participant sends the server in one round."""

    id: int
    gradient: FpVector  # plaintext g_i
    sig_detect: bytes  # over the canonical bytes of mg1 = rv_r (.) g_i
    sig_agg: bytes  # over the canonical bytes of mg2 = zv_r + g_i
    loss: float


class Participant:
    """One data holder: a shard, its secrets, and (maybe) an adversary."""

    def __init__(
        self,
        secrets: ParticipantSecrets,
        arch: Architecture,
        shard: Dataset,
        batch_size: int,
        adversary: AdversarySpec | None = None,
    ):
        self.secrets = secrets
        self.arch = arch
        self.adversary = adversary or AdversarySpec()
        # label flipping poisons the shard once, before any training
        self.shard = corrupt_shard(
            shard, self.adversary, derive_seed(secrets.zero_seed, "attack")
        )
        self.batch_size = batch_size

    def compute_submission(self, w_prev: FpVector, r: int) -> Submission:
        g, loss = local_gradient(
            self.arch,
            w_prev,
            self.shard,
            self.batch_size,
            derive_seed(self.secrets.mask_seed, "batch", r),
        )
        g = corrupt_gradient(g, self.adversary)
        return self.sign_gradient(g, r, loss)

    def sign_gradient(self, g: FpVector, r: int, loss: float = 0.0) -> Submission:
        """Mask + sign an already-computed gradient for round r."""
        rv = round_mask_vector(self.secrets.mask_seed, r, self.secrets.rn, g.dim)
        mg1 = hadamard(g, rv)
        zv = round_zero_share(self.secrets.zero_seed, r, g.dim, g.scale)
        mg2 = zv + g
        sk = self.secrets.keypair.sk
        return Submission(
            id=self.secrets.id,
            gradient=g,
            sig_detect=crypto.sign(sk, mg1.encode()),
            sig_agg=crypto.sign(sk, mg2.encode()),
            loss=loss,
        )


# ---------------------------------------------------------------------------
# Server side: detection, robust aggregation, round finalization.
# ---------------------------------------------------------------------------


def detect(g_s: FpVector, g_i: FpVector) -> int:
    """1 iff the local gradient points with the server gradient.

    Sign of the raw inner product equals the sign of the cosine similarity,
    since norms are positive; zero similarity counts as bad.
    """
    return sign_indicator(dot(g_s, g_i))


def robust_aggregate(
    g_s: FpVector,
    gradients: dict[int, FpVector],
    clipping: bool = False,
    clip_factor: int = 3,
) -> tuple[FpVector, list[int], dict[int, int]]:
    """Filter by inner-product sign (optionally clip), then floor-average.

    Returns (aggregated gradient, sorted benign ids, per-id inner products).
    The aggregate starts from the server gradient, so an empty benign set
    yields the server gradient itself.
    """
    dots = {i: dot(g_s, gradients[i]) for i in sorted(gradients)}
    benign = [i for i in sorted(gradients) if sign_indicator(dots[i]) == 1]
    if clipping and benign:
        vals = sorted(dots[i] for i in benign)
        median = vals[(len(vals) - 1) // 2]  # lower median: exact in integers
        threshold = clip_factor * median
        benign = [i for i in benign if dots[i] <= threshold]
    total = g_s
    for i in benign:
        total = total + gradients[i]
    ag = floor_div(total, len(benign) + 1)
    return ag, benign, dots


@dataclass
class RoundInternals:
    """Secret-side view of one round, for white-box tests and diagnostics."""

    r: int
    benign: list[int]
    rejected_sigs: list[int]
    dots: dict[int, int]
    ag: FpVector
    g_s: FpVector
    losses: dict[int, float]


@dataclass
class RunResult:
    """Everything a training run produced."""

    w0: FpVector
    w_final: FpVector
    genesis: GenesisPayload | None
    record: TrainingRecord | None
    ledger_path: str | None
    metrics: list[dict]
    timing: dict[str, float]
    internals: list[RoundInternals] = field(default_factory=list)


class Server:
    """The central server's per-run state."""

    def __init__(
        self,
        config: RunConfig,
        secrets: ServerSecrets,
        arch: Architecture,
        root_shard: Dataset,
        w0: FpVector,
    ):
        self.config = config
        self.secrets = secrets
        self.arch = arch
        self.root_shard = root_shard
        self.w = w0
        self.eta_num, self.eta_exp = config.eta_parts()

    def server_gradient(self, r: int) -> tuple[FpVector, float]:
        return local_gradient(
            self.arch,
            self.w,
            self.root_shard,
            min(self.config.batch_size, len(self.root_shard)),
            derive_seed(self.config.master_seed, "server-batch", r),
        )

    def verify_submission(self, sub: Submission, r: int) -> bool:
        """Recompute both masked gradients and check both signatures."""
        ps = self.secrets.per_participant[sub.id]
        rv = round_mask_vector(ps.mask_seed, r, ps.rn, sub.gradient.dim)
        mg1 = hadamard(sub.gradient, rv)
        if not crypto.verify(ps.keypair.pk, mg1.encode(), sub.sig_detect):
            return False
        zv = round_zero_share(ps.zero_seed, r, sub.gradient.dim, sub.gradient.scale)
        mg2 = zv + sub.gradient
        return crypto.verify(ps.keypair.pk, mg2.encode(), sub.sig_agg)

    def run_round(
        self,
        r: int,
        submissions: list[Submission],
        detection: bool = True,
        skip_benign_id: int | None = None,
    ) -> tuple[RoundRecord, RoundInternals]:
        """Verify, detect, aggregate, update the model, and build the record.

        skip_benign_id models a misbehaving server for the audit test
        harness: that participant's gradient is silently dropped from the
        actual aggregation while the published record still claims it.
        """
        g_s, server_loss = self.server_gradient(r)
        valid: list[Submission] = []
        rejected: list[int] = []
        for sub in sorted(submissions, key=lambda s: s.id):
            if self.verify_submission(sub, r):
                valid.append(sub)
            else:
                # invalid signature: malicious for this round, excluded from
                # the record (stored signatures must all verify)
                rejected.append(sub.id)
        gradients = {sub.id: sub.gradient for sub in valid}
        if detection:
            ag, benign, dots = robust_aggregate(
                g_s, gradients, self.config.clipping, self.config.clip_factor
            )
        else:
            # baseline mode: no detection, every valid gradient is averaged
            benign = sorted(gradients)
            dots = {i: dot(g_s, gradients[i]) for i in benign}
            total = g_s
            for i in benign:
                total = total + gradients[i]
            ag = floor_div(total, len(benign) + 1)

        published_benign = list(benign)
        if skip_benign_id is not None and skip_benign_id in benign:
            actual = [i for i in benign if i != skip_benign_id]
            total = g_s
            for i in actual:
                total = total + gradients[i]
            ag = floor_div(total, len(actual) + 1)

        self.w = self.w - scale_by_dyadic(ag, self.eta_num, self.eta_exp)

        dim, scale = g_s.dim, g_s.scale
        m_r = self.secrets.model_mask.per_round[r - 1]
        zv_server = np.zeros(dim, dtype=np.int64)
        local_agg = {}
        for sub in valid:
            if sub.id in published_benign:
                ps = self.secrets.per_participant[sub.id]
                zv = round_zero_share(ps.zero_seed, r, dim, scale)
                zv_server -= zv.raw
                mg2 = zv + sub.gradient
                local_agg[sub.id] = (mg2, sub.sig_agg)
        server_agg = (
            m_r.scalar_mul(len(published_benign) + 1)
            + FpVector(zv_server, scale)
            + g_s
        )
        local_detect = {}
        server_detect = {}
        for sub in valid:
            ps = self.secrets.per_participant[sub.id]
            rv = round_mask_vector(ps.mask_seed, r, ps.rn, dim)
            local_detect[sub.id] = (hadamard(sub.gradient, rv), sub.sig_detect)
            rv_s = round_mask_vector(
                ps.mask_seed, r, self.secrets.rn_server[sub.id], dim
            )
            server_detect[sub.id] = hadamard(g_s, rv_s)

        record = RoundRecord(
            r=r,
            local_detect=local_detect,
            local_agg=local_agg,
            server_detect=server_detect,
            server_agg=server_agg,
        )
        losses = {sub.id: sub.loss for sub in valid}
        losses[0] = server_loss
        internals = RoundInternals(
            r=r,
            benign=list(benign),
            rejected_sigs=rejected,
            dots=dots,
            ag=ag,
            g_s=g_s,
            losses=losses,
        )
        return record, internals

    def finalize(self, round_records: list[RoundRecord]) -> TrainingRecord:
        """Mask the final model and attach the deflation values."""
        masked_model = -self.secrets.model_mask.total + self.w
        deflation = {
            i: (1, self.secrets.l_values[i])
            for i in sorted(self.secrets.l_values)
        }
        dim = self.w.dim
        return TrainingRecord(
            rounds=tuple(round_records),
            masked_model=masked_model,
            deflation=deflation,
            dim=dim,
            scale=self.config.scale,
            eta_num=self.eta_num,
            eta_exp=self.eta_exp,
            n_participants=self.config.participants,
        )


def pretrain(
    config: RunConfig, arch: Architecture, root_shard: Dataset
) -> FpVector:
    """Server-only SGD warm start producing the signed initial model w_0."""
    from .training import init_params

    eta_num, eta_exp = config.eta_parts()
    w = init_params(arch, derive_seed(config.master_seed, "init"), config.scale)
    batch = min(config.batch_size, len(root_shard))
    for step in range(config.pretrain_steps):
        g, _ = local_gradient(
            arch,
            w,
            root_shard,
            batch,
            derive_seed(config.master_seed, "pretrain", step),
        )
        w = w - scale_by_dyadic(g, eta_num, eta_exp)
    return w


def run_training(
    config: RunConfig,
    train: Dataset,
    test: Dataset | None = None,
    ledger_path=None,
    detection: bool = True,
    publish: bool = True,
    keep_internals: bool = False,
    skip_benign: tuple[int, int] | None = None,
    submission_hook=None,
) -> RunResult:
    """Run the whole protocol: partition, preprocess, R rounds, publication.

    skip_benign = (round, participant id) engages the misbehaving-server
    harness; submission_hook(r, submissions) may rewrite participant
    messages in flight (both exist for audit soundness tests).
    """
    from .config import validate
    from .training import partition

    arch = Architecture(
        n_features=train.n_features,
        n_classes=train.n_classes,
        hidden=config.hidden,
    )
    dim = arch.param_count
    validate(config, dim)

    shards = partition(train, config.participants + 1, config.master_seed)
    root_shard = shards[0]
    w0 = pretrain(config, arch, root_shard)

    timing: dict[str, float] = {
        "sign_mask_s": 0.0,
        "server_verify_s": 0.0,
        "prvg_s": 0.0,
        "record_bytes": 0,
        "preprocess_bytes": 0,
    }

    publishing = publish and ledger_path is not None
    secrets, participant_secrets, genesis = preprocess(config, dim, w0)
    server_ledger = None
    if publishing:
        server_ledger = Ledger.create(
            ledger_path, genesis.encode(), timestamp=config.timestamp
        )
        timing["preprocess_bytes"] = len(genesis.encode())

    participants = [
        Participant(
            ps,
            arch,
            shards[ps.id],
            config.batch_size,
            config.malicious.get(ps.id),
        )
        for ps in participant_secrets
    ]
    server = Server(config, secrets, arch, root_shard, w0)

    t_prvg = time.perf_counter()
    round_mask_vector(participant_secrets[0].mask_seed, 1, participant_secrets[0].rn, dim)
    timing["prvg_s"] = time.perf_counter() - t_prvg

    metrics: list[dict] = []
    internals_log: list[RoundInternals] = []
    round_records: list[RoundRecord] = []
    for r in range(1, config.rounds + 1):
        t0 = time.perf_counter()
        if publishing:
            submissions = [p.compute_submission(server.w, r) for p in participants]
        else:
            # masks and signatures do not affect the trajectory; skip them
            # when nothing is being published
            submissions = []
            for p in participants:
                g, loss = local_gradient(
                    p.arch,
                    server.w,
                    p.shard,
                    p.batch_size,
                    derive_seed(p.secrets.mask_seed, "batch", r),
                )
                g = corrupt_gradient(g, p.adversary)
                submissions.append(
                    Submission(p.secrets.id, g, b"", b"", loss)
                )
        timing["sign_mask_s"] += time.perf_counter() - t0
        if submission_hook is not None:
            submissions = submission_hook(r, submissions)

        if publishing:
            skip_id = None
            if skip_benign is not None and skip_benign[0] == r:
                skip_id = skip_benign[1]
            t0 = time.perf_counter()
            record, info = server.run_round(
                r, submissions, detection=detection, skip_benign_id=skip_id
            )
            timing["server_verify_s"] += time.perf_counter() - t0
            round_records.append(record)
            timing["record_bytes"] += len(record.encode())
        else:
            g_s, server_loss = server.server_gradient(r)
            gradients = {s.id: s.gradient for s in submissions}
            if detection:
                ag, benign, dots = robust_aggregate(
                    g_s, gradients, config.clipping, config.clip_factor
                )
            else:
                benign = sorted(gradients)
                dots = {}
                total = g_s
                for i in benign:
                    total = total + gradients[i]
                ag = floor_div(total, len(benign) + 1)
            server.w = server.w - scale_by_dyadic(
                ag, server.eta_num, server.eta_exp
            )
            losses = {s.id: s.loss for s in submissions}
            losses[0] = server_loss
            info = RoundInternals(
                r=r,
                benign=list(benign),
                rejected_sigs=[],
                dots=dots,
                ag=ag,
                g_s=g_s,
                losses=losses,
            )

        if keep_internals:
            internals_log.append(info)

        row = {
            "round": r,
            "train_loss": sum(info.losses.values()) / len(info.losses),
            "test_accuracy": "",
            "benign_count": len(info.benign),
        }
        want_eval = test is not None and (
            (config.metrics_every > 0 and r % config.metrics_every == 0)
            or r == config.rounds
        )
        if want_eval:
            acc, _ = evaluate(arch, server.w, test)
            row["test_accuracy"] = f"{acc:.6f}"
        metrics.append(row)

    record_obj = None
    if publishing:
        record_obj = server.finalize(round_records)
        payload = record_obj.encode()
        timing["record_bytes"] += len(payload)
        server_ledger.append(payload, timestamp=config.timestamp)

    return RunResult(
        w0=w0,
        w_final=server.w,
        genesis=genesis,
        record=record_obj,
        ledger_path=str(ledger_path) if publishing else None,
        metrics=metrics,
        timing=timing,
        internals=internals_log,
    )
