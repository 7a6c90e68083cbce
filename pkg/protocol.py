"""
Round-Structured Secure Aggregation

Masking aggregation, four rounds:
    R1  every client masks its vector, h_i = v_i + A s_i + e_i, and sends it
    R2  the server fixes U1 (whose h arrived) and tells the clients
    R3  secure vector addition (Sagg) over the s_i of U1 yields sum(s) and U2
    R4  the server sums h over U2 and unmasks: V = H - A sum(s)

Sagg itself is two message rounds over packed Shamir sharings: clients
deal shares of their vector, then send the sum of the shares they received.
The server (or, in broadcast topology, every client) reconstructs.

Everything travels over an in-process MessageBus as serialized bytes so the
transcript is byte-accurate, and each party's compute is timed separately.
Dropouts and misbehaving clients come from an AdversarySpec.
"""

import hashlib
import logging
import math
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field as dataclass_field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from errors import InsufficientParticipationError, ParameterError, ShapeError
from lwe import LweParams, MaskedVector, PublicMatrix, gen_mask, gen_masks, mask, unmask_sum
from sampler import Prg
from shamir import (
    Abort,
    ShareSet,
    SharingConfig,
    decode_share_message,
    encode_share_message,
    is_abort,
    reconstruct,
    reconstruct_verified,
    share_vector,
)

logger = logging.getLogger(__name__)

SERVER = -1
TOPOLOGIES = ("server", "broadcast")

REPORT_COLUMNS = [
    "k", "m", "n", "q", "dropout", "client_bytes", "server_bytes", "expansion",
    "client_ms", "server_ms", "outcome", "expansion_bitpacked", "mode", "topology",
    "server_sent_bytes", "server_received_bytes", "h_sum_ms", "sagg_reconstruct_ms", "unmask_ms",
]


class Phase(Enum):
    R1 = 1
    R2 = 2
    R3 = 3
    R4 = 4
    DONE = 5
    ABORTED = 6


@dataclass
class RoundState:
    """Client sets of one aggregation round; U2 <= U1 <= U."""

    U: FrozenSet[int]
    U1: FrozenSet[int] = frozenset()
    U2: FrozenSet[int] = frozenset()
    phase: Phase = Phase.R1

    def advance(self, phase: Phase):
        if self.phase in (Phase.DONE, Phase.ABORTED) or phase.value < self.phase.value:
            raise ParameterError(f"cannot move from {self.phase.name} to {phase.name}")
        self.phase = phase


class Behavior(str, Enum):
    HONEST = "honest"
    NO_NOISE = "no_noise"
    BAD_SHARE_SUM = "bad_share_sum"
    BAD_SHARE = "bad_share"
    WRONG_SECRET = "wrong_secret"


@dataclass(frozen=True)
class AdversarySpec:
    """
    Dropouts and misbehaving clients.

    dropout_round: 1 = before sending h, 2 = after h but before sharing s,
    3 = after sharing but before sending share-sums.
    """

    dropout_fraction: float = 0.0
    dropout_round: int = 1
    corrupt_clients: FrozenSet[int] = frozenset()
    behavior: Behavior = Behavior.HONEST

    def __post_init__(self):
        if not 0.0 <= self.dropout_fraction < 1.0:
            raise ParameterError(f"dropout_fraction must be in [0, 1), got {self.dropout_fraction}")
        if self.dropout_round not in (1, 2, 3):
            raise ParameterError(f"dropout_round must be 1, 2 or 3, got {self.dropout_round}")
        object.__setattr__(self, "corrupt_clients", frozenset(self.corrupt_clients))
        object.__setattr__(self, "behavior", Behavior(self.behavior))

    def validate(self, k: int):
        if any(c < 0 or c >= k for c in self.corrupt_clients):
            raise ParameterError(f"corrupt clients {sorted(self.corrupt_clients)} outside [0, {k})")
        if len(self.corrupt_clients) >= math.ceil(k / 2):
            raise ParameterError(
                f"{len(self.corrupt_clients)} corrupt clients break the honest majority of k={k}"
            )

    def dropout_count(self, k: int) -> int:
        return int(math.floor(self.dropout_fraction * k))

    def dropped_clients(self, k: int, rng: np.random.Generator) -> FrozenSet[int]:
        count = self.dropout_count(k)
        if count == 0:
            return frozenset()
        return frozenset(int(i) for i in rng.choice(k, size=count, replace=False))

    def acts(self, client: int, behavior: Behavior) -> bool:
        return self.behavior == behavior and client in self.corrupt_clients

    @classmethod
    def parse(cls, text: str) -> "AdversarySpec":
        """
        Parse 'dropout=0.25;round=2;corrupt=1,4;behavior=bad_share_sum'.

        Every key is optional; an empty string is the honest, dropout-free spec.
        """
        fields = {}
        for part in filter(None, (p.strip() for p in (text or "").split(";"))):
            key, sep, value = part.partition("=")
            if not sep:
                raise ParameterError(f"adversary spec item {part!r} is not key=value")
            key = key.strip()
            value = value.strip()
            if key == "dropout":
                fields["dropout_fraction"] = float(value)
            elif key == "round":
                fields["dropout_round"] = int(value)
            elif key == "corrupt":
                fields["corrupt_clients"] = frozenset(int(c) for c in value.split(",") if c)
            elif key == "behavior":
                fields["behavior"] = Behavior(value)
            else:
                raise ParameterError(f"unknown adversary spec key {key!r}")
        return cls(**fields)


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    receiver: int
    kind: str
    payload: bytes
    elements: int = 0

    @property
    def size(self) -> int:
        return len(self.payload)


class MessageBus:
    """
    Queued in-process delivery with byte accounting.

    Self-addressed messages are delivered but not counted as traffic. The
    transcript digest covers every message in send order.
    """

    def __init__(self):
        self.sent_bytes: Dict[int, int] = defaultdict(int)
        self.received_bytes: Dict[int, int] = defaultdict(int)
        self.sent_elements: Dict[int, int] = defaultdict(int)
        self.message_count = 0
        self._inboxes: Dict[Tuple[int, str], List[Message]] = defaultdict(list)
        self._digest = hashlib.sha256()

    def send(self, message: Message):
        self._inboxes[(message.receiver, message.kind)].append(message)
        self._digest.update(
            f"{message.round}|{message.sender}|{message.receiver}|{message.kind}|".encode()
        )
        self._digest.update(message.payload)
        if message.sender == message.receiver:
            return
        self.sent_bytes[message.sender] += message.size
        self.received_bytes[message.receiver] += message.size
        self.sent_elements[message.sender] += message.elements
        self.message_count += 1

    def collect(self, receiver: int, kind: str) -> List[Message]:
        """Drain the receiver's queue for one message kind."""
        return self._inboxes.pop((receiver, kind), [])

    def fingerprint(self) -> str:
        return self._digest.copy().hexdigest()


class PartyClock:
    """Accumulated wall-clock seconds per party and per (party, phase)."""

    def __init__(self):
        self.seconds: Dict[int, float] = defaultdict(float)
        self.phases: Dict[Tuple[int, str], float] = defaultdict(float)

    @contextmanager
    def measure(self, party: int, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.charge(party, time.perf_counter() - start, phase)

    def charge(self, party: int, seconds: float, phase: str):
        self.seconds[party] += seconds
        self.phases[(party, phase)] += seconds

    def phase_seconds(self, party: int, phase: str) -> float:
        return self.phases.get((party, phase), 0.0)


@dataclass
class AggregationOutcome:
    """Result of one masking-aggregation round (a vector, or an Abort)."""

    result: Union[np.ndarray, Abort]
    participants: FrozenSet[int]
    state: RoundState
    bus: MessageBus
    clocks: PartyClock
    params: LweParams
    sharing: Optional[SharingConfig]
    adversary: AdversarySpec
    topology: str = "server"

    @property
    def aborted(self) -> bool:
        return is_abort(self.result)

    @property
    def k(self) -> int:
        return len(self.state.U)


@dataclass
class CommunicationReport:
    k: int
    m: int
    n: int
    q: int
    dropout: float
    client_bytes: float
    server_bytes: int
    expansion: float
    client_ms: float
    server_ms: float
    outcome: str
    expansion_bitpacked: float
    mode: str
    topology: str
    server_sent_bytes: int
    server_received_bytes: int
    h_sum_ms: float
    sagg_reconstruct_ms: float
    unmask_ms: float

    def to_row(self) -> dict:
        return {col: getattr(self, col) for col in REPORT_COLUMNS}


def _bitmap(members, k: int) -> bytes:
    flags = np.zeros(k, dtype=np.uint8)
    flags[sorted(members)] = 1
    return np.packbits(flags).tobytes()


def _needed_share_sums(sharing: SharingConfig) -> int:
    return sharing.r + 1 if sharing.malicious else sharing.r


def run_sagg(secret_vectors: Dict[int, np.ndarray], sharing: SharingConfig,
             adversary: AdversarySpec = None, seed=None, *,
             silent_after_sharing: FrozenSet[int] = frozenset(),
             bus: MessageBus = None, clocks: PartyClock = None,
             topology: str = "server", round_id: int = 0,
             workers: int = 0, check: str = "all") -> Union[Tuple[np.ndarray, FrozenSet[int]], Abort]:
    """
    Secure vector addition over the clients in `secret_vectors`.

    Returns (sum, participants) or an Abort. Clients in
    `silent_after_sharing` deal their shares and then go quiet.
    """
    adversary = adversary or AdversarySpec()
    bus = bus if bus is not None else MessageBus()
    clocks = clocks if clocks is not None else PartyClock()
    if topology not in TOPOLOGIES:
        raise ParameterError(f"unknown Sagg topology {topology!r}")
    field = sharing.field
    dealers = sorted(secret_vectors)
    if len(dealers) < sharing.r:
        raise InsufficientParticipationError(
            f"{len(dealers)} clients shared, reconstruction needs {sharing.r}"
        )
    lengths = {np.asarray(v).shape for v in secret_vectors.values()}
    if len(lengths) != 1:
        raise ShapeError(f"secret vectors have different shapes {sorted(lengths)}")
    n = np.asarray(secret_vectors[dealers[0]]).shape[0]
    prg = Prg(seed if seed is not None else config.DEFAULT_SEED)

    # Round 1: deal shares of every secret vector
    def deal(i: int) -> ShareSet:
        rng = prg.generator(f"sagg/{round_id}/dealer/{i}")
        with clocks.measure(i, "sagg_share"):
            return share_vector(secret_vectors[i], sharing, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dealt = list(pool.map(deal, dealers))
    else:
        dealt = [deal(i) for i in dealers]

    for i, shares in zip(dealers, dealt):
        victim = next((j for j in dealers if j != i), None)
        for j in dealers:
            values = shares.for_client(j)
            if j == victim and adversary.acts(i, Behavior.BAD_SHARE):
                values = values.copy()
                values[0] = (values[0] + 1) % field.q
            payload = encode_share_message(round_id, i, values, field)
            bus.send(Message(round_id, i, j, "share", payload, elements=values.shape[0]))

    # Round 2: each remaining client sums the shares it holds
    senders = [j for j in dealers if j not in silent_after_sharing]
    needed = _needed_share_sums(sharing)
    if len(senders) < needed:
        raise InsufficientParticipationError(
            f"{len(senders)} share-sums available, {needed} needed"
        )

    share_sums = {}
    for j in senders:
        received = bus.collect(j, "share")
        with clocks.measure(j, "sagg_sum"):
            total = field.sum([decode_share_message(msg.payload, field)[2] for msg in received])
            if adversary.acts(j, Behavior.BAD_SHARE_SUM):
                total[0] = (total[0] + 1) % field.q
        share_sums[j] = total
        payload = encode_share_message(round_id, j, total, field)
        targets = [SERVER] if topology == "server" else senders
        for target in targets:
            bus.send(Message(round_id, j, target, "share_sum", payload, elements=total.shape[0]))

    participants = frozenset(dealers)

    def rebuild(messages: List[Message]):
        sums = {}
        for msg in messages:
            _, index, values = decode_share_message(msg.payload, field)
            sums[index] = values
        share_set = ShareSet.from_client_shares(sharing, sums, length=n)
        if sharing.malicious:
            return reconstruct_verified(share_set, check=check)
        return reconstruct(share_set)

    if topology == "server":
        messages = bus.collect(SERVER, "share_sum")
        with clocks.measure(SERVER, "sagg_reconstruct"):
            result = rebuild(messages)
        if is_abort(result):
            return Abort(reason=result.reason, stage="sagg")
        return result, participants

    # Broadcast: every client reconstructs and reports (s, U2); the server takes the majority
    for j in senders:
        messages = bus.collect(j, "share_sum")
        with clocks.measure(j, "sagg_reconstruct"):
            local = rebuild(messages)
        payload = b"" if is_abort(local) else field.to_bytes(local) + _bitmap(participants, sharing.k)
        elements = 0 if is_abort(local) else n
        bus.send(Message(round_id, j, SERVER, "sagg_result", payload, elements=elements))

    with clocks.measure(SERVER, "sagg_reconstruct"):
        votes = Counter(msg.payload for msg in bus.collect(SERVER, "sagg_result"))
        winner, count = votes.most_common(1)[0]
    if count * 2 <= len(senders):
        return Abort(reason="no majority among reported sums", stage="sagg")
    if winner == b"":
        return Abort(reason="clients reported share inconsistency", stage="sagg")
    return field.from_bytes(winner[: 4 * n]), participants


def run_masking_aggregation(inputs, params: LweParams, sharing: SharingConfig = None,
                            adversary: AdversarySpec = None, seed=None, *,
                            malicious: bool = False, topology: str = "server",
                            round_id: int = 0, workers: int = 0,
                            matrix: PublicMatrix = None, check: str = "all") -> AggregationOutcome:
    """
    One full masking-aggregation round over k client vectors in F_q^m.

    `sharing` defaults to SharingConfig.default sized for the adversary's
    dropouts; `malicious` only matters when the default is used.
    """
    field = params.field
    vectors = [field.array(v) for v in inputs]
    k = len(vectors)
    if k < 2:
        raise ParameterError(f"aggregation needs at least 2 clients, got {k}")
    if any(v.shape != (params.m,) for v in vectors):
        raise ShapeError(f"every input must have length m={params.m}")
    adversary = adversary or AdversarySpec()
    adversary.validate(k)

    prg = Prg(seed if seed is not None else config.DEFAULT_SEED)
    dropped = adversary.dropped_clients(k, prg.generator(f"round/{round_id}/dropout"))
    if sharing is None:
        sharing = SharingConfig.default(
            k, field, n=params.n, expected_dropouts=len(dropped), malicious=malicious
        )
    elif sharing.k != k or sharing.field != field:
        raise ParameterError(f"sharing config is for k={sharing.k} over q={sharing.field.q}")

    a_seed = prg.derive(f"round/{round_id}/A")
    if matrix is None:
        matrix = PublicMatrix(a_seed, params.m, params.n, field)
    bus = MessageBus()
    clocks = PartyClock()
    state = RoundState(U=frozenset(range(k)))

    def finish(result, participants=frozenset()) -> AggregationOutcome:
        if is_abort(result):
            state.advance(Phase.ABORTED)
            logger.warning("aggregation round %d aborted at %s: %s", round_id, result.stage, result.reason)
        else:
            state.advance(Phase.DONE)
        return AggregationOutcome(result, participants, state, bus, clocks, params,
                                  sharing, adversary, topology)

    def drops_at(stage: int) -> FrozenSet[int]:
        return dropped if adversary.dropout_round == stage else frozenset()

    # R1: mask and send h
    senders = [i for i in range(k) if i not in drops_at(1)]
    seeds = {i: prg.derive(f"round/{round_id}/client/{i}") for i in senders}
    masks = _generate_masks(params, a_seed, seeds, matrix, clocks, workers)
    for i in senders:
        key, b = masks[i]
        with clocks.measure(i, "mask"):
            h = mask(vectors[i], b, client_id=i, field=field, round_id=round_id)
            payload = h.to_bytes(field)
        bus.send(Message(round_id, i, SERVER, "masked", payload, elements=params.m))

    # R2: server fixes U1 and announces it
    state.advance(Phase.R2)
    received = {}
    for msg in bus.collect(SERVER, "masked"):
        h = MaskedVector.from_bytes(msg.payload, field)
        received[h.client_id] = h.h
    state.U1 = frozenset(received)
    if len(state.U1) <= sharing.t:
        return finish(Abort(reason=f"|U1|={len(state.U1)} <= t={sharing.t}", stage="R2"))
    announcement = round_id.to_bytes(4, "little") + _bitmap(state.U1, k)
    for i in sorted(state.U1):
        bus.send(Message(round_id, SERVER, i, "u1", announcement))

    # R3: secure vector addition over the secrets of U1
    state.advance(Phase.R3)
    secrets = {}
    for i in sorted(state.U1 - drops_at(2)):
        s = masks[i][0].s
        if adversary.acts(i, Behavior.WRONG_SECRET):
            s = s.copy()
            s[0] = (s[0] + 1) % field.q
        secrets[i] = s
    try:
        sagg = run_sagg(
            secrets, sharing, adversary, prg.derive(f"round/{round_id}/sagg"),
            silent_after_sharing=drops_at(3), bus=bus, clocks=clocks,
            topology=topology, round_id=round_id, workers=workers, check=check,
        )
    except InsufficientParticipationError as e:
        return finish(Abort(reason=str(e), stage="sagg"))
    if is_abort(sagg):
        return finish(sagg)
    s_sum, participants = sagg
    state.U2 = participants
    if len(state.U2) <= sharing.t:
        return finish(Abort(reason=f"|U2|={len(state.U2)} <= t={sharing.t}", stage="R3"))

    # R4: sum h over U2 only and remove A * sum(s)
    state.advance(Phase.R4)
    with clocks.measure(SERVER, "h_sum"):
        H = field.sum([received[i] for i in sorted(state.U2)])
    with clocks.measure(SERVER, "unmask"):
        V = unmask_sum(H, s_sum, matrix)
    return finish(V, state.U2)


def _generate_masks(params, a_seed, seeds, matrix, clocks, workers):
    """Per-client masks; batched into one matrix product unless running threaded."""
    if not seeds:
        return {}
    if workers > 1:
        def one(i):
            with clocks.measure(i, "keygen"):
                return i, gen_mask(params, a_seed, seeds[i], matrix=matrix)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return dict(pool.map(one, sorted(seeds)))

    start = time.perf_counter()
    masks = gen_masks(params, a_seed, seeds, matrix=matrix)
    # One shared product, charged evenly to the clients it served
    share = (time.perf_counter() - start) / len(seeds)
    for i in seeds:
        clocks.charge(i, share, "keygen")
    return masks


def measure_transcript(outcome: AggregationOutcome) -> CommunicationReport:
    """Byte and timing summary of a completed round."""
    params = outcome.params
    bus, clocks = outcome.bus, outcome.clocks
    clients = sorted(outcome.state.U)
    client_bytes = float(np.mean([bus.sent_bytes.get(i, 0) for i in clients]))
    client_elements = float(np.mean([bus.sent_elements.get(i, 0) for i in clients]))
    element_bits = params.field.element_bits
    server_sent = bus.sent_bytes.get(SERVER, 0)
    server_received = bus.received_bytes.get(SERVER, 0)
    mode = "malicious" if outcome.sharing is not None and outcome.sharing.malicious else "semi-honest"

    return CommunicationReport(
        k=len(clients),
        m=params.m,
        n=params.n,
        q=params.q,
        dropout=outcome.adversary.dropout_fraction,
        client_bytes=client_bytes,
        server_bytes=server_sent + server_received,
        expansion=client_bytes / (config.BYTES_PER_ELEMENT * params.m),
        client_ms=1000.0 * float(np.mean([clocks.seconds.get(i, 0.0) for i in clients])),
        server_ms=1000.0 * clocks.seconds.get(SERVER, 0.0),
        outcome="abort" if outcome.aborted else "ok",
        expansion_bitpacked=client_elements * element_bits / (config.FIXED_POINT_BITS * params.m),
        mode=mode,
        topology=outcome.topology,
        server_sent_bytes=server_sent,
        server_received_bytes=server_received,
        h_sum_ms=1000.0 * clocks.phase_seconds(SERVER, "h_sum"),
        sagg_reconstruct_ms=1000.0 * clocks.phase_seconds(SERVER, "sagg_reconstruct"),
        unmask_ms=1000.0 * clocks.phase_seconds(SERVER, "unmask"),
    )


def reports_frame(reports: Sequence[CommunicationReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)


def write_reports(reports: Sequence[CommunicationReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reports_frame(reports).to_csv(path, index=False)
    logger.info("wrote %d report rows to %s", len(reports), path)
    return path
