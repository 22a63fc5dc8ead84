#!/usr/bin/env python3
"""
Sessão BB84 entre Alice e Bob

Cada ponta é uma máquina de estados sequencial que conversa com a outra
apenas por mensagens do canal clássico:

    idle -> quantum_tx -> sifting -> qber_estimate -> reconcile -> amplify -> done
                    (aborted alcançável de qualquer estado)

Roteiro das mensagens (B = Bob, A = Alice):
    HELLO B->A, A->B
    DETECTIONS B->A, BASIS_MATCH A->B
    SAMPLE_REQUEST A->B, SAMPLE_BITS B->A, SAMPLE_BITS A->B
    CASCADE_SHUFFLE A->B (uma por passada >= 2), CASCADE_PARITY_REQ/RESP em rodadas,
    VERIFY_HASH B->A, A->B
    PA_SEED B->A, DONE B->A, A->B

Decisões tomadas sobre informação que os dois lados já compartilham
(sem bits, amostra insuficiente, QBER estimado acima do limite, hash de
verificação divergente) abortam localmente dos dois lados sem quadro extra;
as demais são comunicadas com ABORT.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from cascade_recon import (CascadeConfig, CascadeError, CascadeResponder, LeakLedger,
                           run_cascade, verify_hash)
from classical_wire import (HASH_BITS, Abort, AbortReason, BasisMatch, CascadeParityReq,
                            CascadeParityResp, CascadeShuffle, Detections, Done, FrameChannel,
                            Hello, Message, MessageType, PASeed, SampleBits, SampleRequest,
                            VerifyHash, WireError)
from event_sim import AliceRecord, BobRecord, encode_phase
from logging_config import get_logger, log_session_event
from privacy_amp import QBER_THRESHOLD, SecretKey, ToeplitzSeed, amplify, toeplitz_hash

logger = get_logger('qkd_sim.protocol')

MIN_SIFTED_BITS = 100
BASES = {'Z': 0, 'X': 1}


class SessionPhase(Enum):
    IDLE = 'idle'
    QUANTUM_TX = 'quantum_tx'
    SIFTING = 'sifting'
    QBER_ESTIMATE = 'qber_estimate'
    RECONCILE = 'reconcile'
    AMPLIFY = 'amplify'
    DONE = 'done'
    ABORTED = 'aborted'


PHASE_ORDER = (SessionPhase.IDLE, SessionPhase.QUANTUM_TX, SessionPhase.SIFTING,
               SessionPhase.QBER_ESTIMATE, SessionPhase.RECONCILE, SessionPhase.AMPLIFY,
               SessionPhase.DONE)

# Fase a que pertence cada tipo de mensagem (ABORT pertence a todas)
MESSAGE_PHASE: Dict[MessageType, SessionPhase] = {
    MessageType.HELLO: SessionPhase.IDLE,
    MessageType.DETECTIONS: SessionPhase.SIFTING,
    MessageType.BASIS_MATCH: SessionPhase.SIFTING,
    MessageType.SAMPLE_REQUEST: SessionPhase.QBER_ESTIMATE,
    MessageType.SAMPLE_BITS: SessionPhase.QBER_ESTIMATE,
    MessageType.CASCADE_SHUFFLE: SessionPhase.RECONCILE,
    MessageType.CASCADE_PARITY_REQ: SessionPhase.RECONCILE,
    MessageType.CASCADE_PARITY_RESP: SessionPhase.RECONCILE,
    MessageType.VERIFY_HASH: SessionPhase.RECONCILE,
    MessageType.PA_SEED: SessionPhase.AMPLIFY,
    MessageType.DONE: SessionPhase.AMPLIFY,
}


class SessionAborted(Exception):
    """Sessão encerrada sem chave; remote indica que o ABORT veio do par"""

    def __init__(self, reason: AbortReason, remote: bool = False, detail: str = "", notify: bool = True):
        super().__init__(f"{reason.label}{': ' + detail if detail else ''}")
        self.reason = reason
        self.remote = remote
        self.detail = detail
        self.notify = notify


@dataclass(frozen=True)
class EncodingRecord:
    cycle_index: int
    bit: int
    basis: int
    phase: float

    def __post_init__(self):
        if self.cycle_index < 0:
            raise ValueError("Índice de ciclo negativo")
        if not math.isclose(self.phase, encode(self.bit, self.basis)):
            raise ValueError("Fase incoerente com bit e base")


@dataclass(frozen=True)
class DetectionRecord:
    cycle_index: int
    bob_basis: int
    bit: int


@dataclass
class SiftedKey:
    bits: np.ndarray
    source_cycles: np.ndarray

    def __post_init__(self):
        if len(self.bits) != len(self.source_cycles):
            raise ValueError("Bits e ciclos de origem com tamanhos diferentes")

    def __len__(self) -> int:
        return len(self.bits)

    def without(self, positions) -> 'SiftedKey':
        keep = np.ones(len(self.bits), dtype=bool)
        keep[np.asarray(positions, dtype=np.int64)] = False
        return SiftedKey(self.bits[keep], self.source_cycles[keep])


def _basis_code(basis) -> int:
    if isinstance(basis, str):
        if basis.upper() not in BASES:
            raise ValueError(f"Base inválida: {basis}")
        return BASES[basis.upper()]
    if basis not in (0, 1):
        raise ValueError(f"Base inválida: {basis}")
    return int(basis)


def encode(bit: int, basis) -> float:
    """Fase de Alice: bit * pi + (base X) * pi/2"""
    if bit not in (0, 1):
        raise ValueError(f"Bit inválido: {bit}")
    return float(encode_phase(bit, _basis_code(basis)))


def encoding_records(alice: AliceRecord, positions) -> list:
    """Registros de codificação de Alice nas posições dadas do seu registro"""
    return [EncodingRecord(int(alice.cycles[i]), int(alice.bits[i]), int(alice.bases[i]),
                           encode(int(alice.bits[i]), int(alice.bases[i])))
            for i in np.asarray(positions, dtype=np.int64)]


def detection_records(bob: BobRecord) -> list:
    return [DetectionRecord(int(c), int(b), int(x)) for c, b, x in zip(bob.cycles, bob.bases, bob.bits)]


def sift(detection_cycles, detection_bases, alice: AliceRecord) -> Tuple[np.ndarray, np.ndarray]:
    """
    Peneiração: mantém os ciclos anunciados por Bob em que as bases coincidem.

    Retorna (ciclos mantidos, máscara sobre as detecções anunciadas).
    Índice de ciclo desconhecido aborta com protocol_error.
    """
    cycles = np.asarray(detection_cycles, dtype=np.int64)
    bases = np.asarray(detection_bases, dtype=np.uint8)
    try:
        _, alice_bases = alice.lookup(cycles)
    except KeyError as e:
        raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail=str(e)) from e
    keep = alice_bases == bases
    return cycles[keep], keep


def sample_size(n: int, sample_fraction: float, floor: int = 200) -> int:
    return min(max(math.ceil(sample_fraction * n), floor), n // 2)


def choose_sample(n: int, sample_fraction: float, rng: np.random.Generator, floor: int = 200) -> np.ndarray:
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError(f"sample_fraction fora de (0, 1): {sample_fraction}")
    if n < MIN_SIFTED_BITS:
        raise SessionAborted(AbortReason.INSUFFICIENT_BITS, detail=f"{n} bits peneirados", notify=False)
    return np.sort(rng.choice(n, size=sample_size(n, sample_fraction, floor), replace=False)).astype(np.int64)


def estimate_qber(alice_bits, bob_bits, sample_fraction: float, rng_seed=None,
                  floor: int = 200) -> Tuple[float, np.ndarray]:
    """Estimativa por amostra revelada; retorna (estimativa, posições reveladas)"""
    alice_bits = np.asarray(alice_bits, dtype=np.uint8)
    bob_bits = np.asarray(bob_bits, dtype=np.uint8)
    if len(alice_bits) != len(bob_bits):
        raise ValueError("Chaves peneiradas com tamanhos diferentes")
    positions = choose_sample(len(alice_bits), sample_fraction, np.random.default_rng(rng_seed), floor)
    return _sample_qber(alice_bits[positions], bob_bits[positions]), positions


def _sample_qber(alice_sample: np.ndarray, bob_sample: np.ndarray) -> float:
    return int(np.count_nonzero(alice_sample != bob_sample)) / len(alice_sample)


def report_digest(session_id: str, n: int, m: int, key_leak: int, qber_estimate: float) -> bytes:
    text = f"{session_id}|{n}|{m}|{key_leak}|{qber_estimate!r}"
    return hashlib.sha256(text.encode('utf-8')).digest()


@dataclass(frozen=True)
class SessionConfig:
    """Parâmetros de protocolo que as duas pontas precisam compartilhar"""
    version: int = 1
    session_id: str = 'qkd-session'
    sample_fraction: float = 0.1
    sample_floor: int = 200
    qber_threshold: float = QBER_THRESHOLD
    safety_bits: int = 30
    tagged_fraction: float = 0.0
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    config_digest: bytes = b''

    def __post_init__(self):
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("sample_fraction deve estar em (0, 1)")
        if not 0.0 < self.qber_threshold <= QBER_THRESHOLD:
            raise ValueError(f"qber_threshold deve estar em (0, {QBER_THRESHOLD}]")
        if self.safety_bits < 0:
            raise ValueError("safety_bits não pode ser negativo")

    def digest(self) -> bytes:
        if self.config_digest:
            return self.config_digest
        fields_ = asdict(self)
        fields_.pop('config_digest')
        canonical = json.dumps(fields_, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode('utf-8')).digest()

    @classmethod
    def from_config(cls, cfg, **overrides) -> 'SessionConfig':
        """Monta a partir das seções PROTOCOL e CASCADE do arquivo INI"""
        values = dict(
            version=cfg.getint('PROTOCOL', 'version', 1),
            sample_fraction=cfg.getfloat('PROTOCOL', 'sample_fraction', 0.1),
            sample_floor=cfg.getint('PROTOCOL', 'sample_floor', 200),
            qber_threshold=cfg.getfloat('PROTOCOL', 'qber_threshold', QBER_THRESHOLD),
            safety_bits=cfg.getint('PROTOCOL', 'safety_bits', 30),
            cascade=CascadeConfig(
                n_passes=cfg.getint('CASCADE', 'n_passes', 4),
                k1_constant=cfg.getfloat('CASCADE', 'k1_constant', 0.73),
                verify_bits=cfg.getint('CASCADE', 'verify_bits', HASH_BITS),
            ),
        )
        values.update(overrides)
        return cls(**values)


_WIRE_ABORT = {
    'timeout': AbortReason.TIMEOUT,
    'channel_closed': AbortReason.CHANNEL_CLOSED,
    'unknown_type': AbortReason.PROTOCOL_ERROR,
}


class Endpoint:
    """Base comum de Alice e Bob: fases, envio/recepção tipados e abortos"""

    role = ''

    def __init__(self, channel: FrameChannel, config: SessionConfig, rng_seed=None):
        self.channel = channel
        self.config = config
        self.rng = np.random.default_rng(rng_seed)
        self.phase = SessionPhase.IDLE
        self.ledger = LeakLedger()
        self.stats: Dict[str, Any] = {}
        self.abort_reason: Optional[AbortReason] = None
        self.key: Optional[SiftedKey] = None
        self.secret: Optional[SecretKey] = None
        self.qber_estimate: Optional[float] = None
        self._handlers: Dict[SessionPhase, Callable[[], None]] = {}

    # Ciclo de vida

    def start(self) -> None:
        if self.phase is not SessionPhase.IDLE:
            raise RuntimeError(f"Sessão já iniciada ({self.phase.value})")
        self._guarded(self._handshake)
        self._transition(SessionPhase.QUANTUM_TX)

    def step(self) -> SessionPhase:
        if self.phase in (SessionPhase.DONE, SessionPhase.ABORTED, SessionPhase.IDLE):
            raise RuntimeError(f"Nenhum passo a executar na fase {self.phase.value}")
        following = PHASE_ORDER[PHASE_ORDER.index(self.phase) + 1]
        self._transition(following)
        handler = self._handlers.get(following)
        if handler is not None:
            self._guarded(handler)
        return self.phase

    def finish(self) -> SecretKey:
        if self.phase is not SessionPhase.DONE or self.secret is None:
            raise RuntimeError(f"Sessão não concluída ({self.phase.value})")
        return self.secret

    def run(self) -> SecretKey:
        self.start()
        while self.phase is not SessionPhase.DONE:
            self.step()
        return self.finish()

    def _transition(self, phase: SessionPhase) -> None:
        if phase is not SessionPhase.ABORTED:
            current = PHASE_ORDER.index(self.phase)
            if PHASE_ORDER.index(phase) != current + 1:
                raise RuntimeError(f"Transição inválida {self.phase.value} -> {phase.value}")
        self.phase = phase
        log_session_event(self.role, phase.value)

    def _guarded(self, action: Callable[[], None]) -> None:
        try:
            action()
        except SessionAborted as e:
            self._abort(e)
            raise
        except CascadeError as e:
            failure = SessionAborted(AbortReason.PROTOCOL_ERROR, detail=str(e))
            self._abort(failure)
            raise failure from e

    def _abort(self, error: SessionAborted) -> None:
        self.abort_reason = error.reason
        self.stats['abort_reason'] = error.reason.label
        if error.notify and not error.remote:
            try:
                self.channel.send(Abort(error.reason))
            except WireError:
                pass
        origin = 'par' if error.remote else 'local'
        self.phase = SessionPhase.ABORTED
        log_session_event(self.role, SessionPhase.ABORTED.value, f"{error.reason.label} ({origin}) {error.detail}")

    # Mensagens

    def _send(self, msg: Message) -> None:
        owner = MESSAGE_PHASE[msg.msg_type]
        if owner is not self.phase:
            raise RuntimeError(f"{msg.msg_type.name} não pertence à fase {self.phase.value}")
        try:
            self.channel.send(msg)
        except WireError as e:
            if e.code in ('oversize', 'malformed'):
                # Nada foi escrito no socket: o par ainda pode receber o ABORT
                raise SessionAborted(AbortReason.PROTOCOL_ERROR,
                                     detail=f"{msg.msg_type.name} não enviável: {e}") from e
            raise SessionAborted(_WIRE_ABORT.get(e.code, AbortReason.CHANNEL_CLOSED),
                                 detail=str(e), notify=False) from e

    def _expect(self, *types):
        try:
            msg = self.channel.recv()
        except WireError as e:
            reason = _WIRE_ABORT.get(e.code, AbortReason.MALFORMED_FRAME)
            raise SessionAborted(reason, detail=str(e),
                                 notify=reason is not AbortReason.CHANNEL_CLOSED) from e
        if isinstance(msg, Abort):
            raise SessionAborted(msg.reason, remote=True)
        if not isinstance(msg, types):
            raise SessionAborted(AbortReason.PROTOCOL_ERROR,
                                 detail=f"{msg.msg_type.name} inesperada na fase {self.phase.value}")
        return msg

    def _check_hello(self, hello: Hello) -> None:
        if hello.version != self.config.version:
            raise SessionAborted(AbortReason.VERSION_MISMATCH,
                                 detail=f"par na versão {hello.version}, local {self.config.version}")
        if hello.config_digest != self.config.digest():
            raise SessionAborted(AbortReason.CONFIG_MISMATCH)

    # Decisões sobre informação compartilhada

    def _adopt_sifted(self, key: SiftedKey) -> None:
        self.key = key
        self.stats['n_sifted'] = len(key)
        if len(key) == 0:
            raise SessionAborted(AbortReason.NO_BITS, notify=False)
        if len(key) < MIN_SIFTED_BITS:
            raise SessionAborted(AbortReason.INSUFFICIENT_BITS, detail=f"{len(key)} bits", notify=False)

    def _adopt_estimate(self, positions: np.ndarray, alice_sample: np.ndarray, bob_sample: np.ndarray) -> None:
        if len(alice_sample) != len(positions) or len(bob_sample) != len(positions):
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="amostra com tamanho incorreto")
        self.qber_estimate = _sample_qber(alice_sample, bob_sample)
        self.ledger.add_sample(len(positions))
        self.key = self.key.without(positions)
        self.stats.update(sample_size=len(positions), qber_estimate=self.qber_estimate,
                          n_reconciled=len(self.key))
        log_session_event(self.role, 'qber_estimate', f"{self.qber_estimate:.4f} em {len(positions)} bits")
        if self.qber_estimate >= self.config.qber_threshold:
            raise SessionAborted(AbortReason.QBER_THRESHOLD, detail=f"estimativa {self.qber_estimate:.4f}",
                                 notify=False)

    def _secret(self, bits: np.ndarray, m: int) -> SecretKey:
        report = dict(self.stats)
        report.update(parity_bits=self.ledger.parity_bits_disclosed,
                      sample_bits=self.ledger.sample_bits_disclosed,
                      verify_bits=self.ledger.verify_bits_disclosed)
        return SecretKey(bits, self.config.session_id, len(self.key), m,
                         self.ledger.key_leak, self.qber_estimate, report)

    def _digest(self, m: int) -> bytes:
        return report_digest(self.config.session_id, len(self.key), m, self.ledger.key_leak, self.qber_estimate)


class AliceEndpoint(Endpoint):
    role = 'alice'

    def __init__(self, record: AliceRecord, channel: FrameChannel, config: SessionConfig, rng_seed=None):
        super().__init__(channel, config, rng_seed)
        self.record = record
        self._handlers = {
            SessionPhase.SIFTING: self._sifting,
            SessionPhase.QBER_ESTIMATE: self._estimate,
            SessionPhase.RECONCILE: self._reconcile,
            SessionPhase.AMPLIFY: self._amplify,
        }

    def _handshake(self) -> None:
        self._check_hello(self._expect(Hello))
        self._send(Hello(self.config.version, self.config.digest()))

    def _sifting(self) -> None:
        detections = self._expect(Detections)
        kept_cycles, keep = sift(detections.cycles, detections.bases, self.record)
        self._send(BasisMatch(keep.astype(np.uint8)))
        bits, _ = self.record.lookup(kept_cycles)
        self.stats['n_detections'] = len(detections.cycles)
        self._adopt_sifted(SiftedKey(bits, kept_cycles))

    def _estimate(self) -> None:
        positions = choose_sample(len(self.key), self.config.sample_fraction, self.rng, self.config.sample_floor)
        self._send(SampleRequest(positions))
        bob_sample = self._expect(SampleBits).bits
        alice_sample = self.key.bits[positions]
        self._send(SampleBits(alice_sample))
        self._adopt_estimate(positions, alice_sample, bob_sample)

    def _reconcile(self) -> None:
        seeds = [int(s) for s in self.rng.integers(0, 2 ** 63, self.config.cascade.n_passes - 1)]
        cascade = self.config.cascade.with_seeds(seeds)
        for pass_index, seed in enumerate(seeds, start=1):
            self._send(CascadeShuffle(pass_index, seed))
        responder = CascadeResponder(self.key.bits, cascade)
        while True:
            msg = self._expect(CascadeParityReq, VerifyHash)
            if isinstance(msg, CascadeParityReq):
                parities = responder.parities(msg.ranges)
                self.ledger.add_parities(len(parities))
                self._send(CascadeParityResp(parities))
                continue
            own = verify_hash(self.key.bits, msg.salt, self.config.cascade.verify_bits)
            self._send(VerifyHash(msg.salt, own))
            self.ledger.add_verify(self.config.cascade.verify_bits)
            if own != msg.digest:
                raise SessionAborted(AbortReason.RECONCILIATION_FAILED, notify=False)
            return

    def _amplify(self) -> None:
        seed_msg = self._expect(PASeed)
        n = len(self.key)
        m = seed_msg.final_length
        bound = n - self.ledger.key_leak - self.config.safety_bits
        if not 1 <= m <= bound or len(seed_msg.seed) != n + m - 1:
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail=f"m={m} incompatível (limite {bound})")
        final = toeplitz_hash(self.key.bits, ToeplitzSeed(seed_msg.seed, n, m))
        digest = self._digest(m)
        if self._expect(Done).digest != digest:
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="resumo final divergente")
        self._send(Done(digest))
        self.stats['final_length'] = m
        self.secret = self._secret(final, m)


class BobEndpoint(Endpoint):
    role = 'bob'

    def __init__(self, record: BobRecord, channel: FrameChannel, config: SessionConfig, rng_seed=None):
        super().__init__(channel, config, rng_seed)
        self.record = record
        self.n_corrected: Optional[int] = None
        self._handlers = {
            SessionPhase.SIFTING: self._sifting,
            SessionPhase.QBER_ESTIMATE: self._estimate,
            SessionPhase.RECONCILE: self._reconcile,
            SessionPhase.AMPLIFY: self._amplify,
        }

    def _handshake(self) -> None:
        self._send(Hello(self.config.version, self.config.digest()))
        self._check_hello(self._expect(Hello))

    def _sifting(self) -> None:
        self._send(Detections(self.record.cycles, self.record.bases))
        keep = self._expect(BasisMatch).keep.astype(bool)
        if len(keep) != len(self.record.cycles):
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="máscara de bases com tamanho incorreto")
        self.stats['n_detections'] = len(self.record.cycles)
        self._adopt_sifted(SiftedKey(self.record.bits[keep], self.record.cycles[keep]))

    def _estimate(self) -> None:
        positions = self._expect(SampleRequest).positions
        n = len(self.key)
        if (len(positions) != sample_size(n, self.config.sample_fraction, self.config.sample_floor)
                or len(np.unique(positions)) != len(positions) or (len(positions) and positions.max() >= n)):
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="amostra inválida")
        bob_sample = self.key.bits[positions]
        self._send(SampleBits(bob_sample))
        alice_sample = self._expect(SampleBits).bits
        self._adopt_estimate(positions, alice_sample, bob_sample)

    def _reconcile(self) -> None:
        n_shuffles = self.config.cascade.n_passes - 1
        seeds = []
        for pass_index in range(1, n_shuffles + 1):
            shuffle = self._expect(CascadeShuffle)
            if shuffle.pass_index != pass_index:
                raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="embaralhamento fora de ordem")
            seeds.append(shuffle.seed)
        cascade = self.config.cascade.with_seeds(seeds)
        result = run_cascade(self.key.bits, self.qber_estimate, cascade, _WireParityOracle(self), self.ledger)
        self.key = SiftedKey(result.corrected_key, self.key.source_cycles)
        self.n_corrected = result.n_corrected
        qber_measured = result.n_corrected / len(self.key)
        self.stats.update(n_corrected=result.n_corrected, qber_measured=qber_measured,
                          corrections_per_pass=result.corrections_per_pass, cascade_rounds=result.rounds,
                          parities_reused=result.parities_reused)

        salt = int(self.rng.integers(0, 2 ** 63))
        own = verify_hash(self.key.bits, salt, self.config.cascade.verify_bits)
        self._send(VerifyHash(salt, own))
        reply = self._expect(VerifyHash)
        if reply.salt != salt:
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="sal de verificação divergente")
        self.ledger.add_verify(self.config.cascade.verify_bits)
        if reply.digest != own:
            raise SessionAborted(AbortReason.RECONCILIATION_FAILED, notify=False)

    def _amplify(self) -> None:
        n = len(self.key)
        qber_measured = self.stats['qber_measured']
        if qber_measured >= self.config.qber_threshold:
            raise SessionAborted(AbortReason.QBER_THRESHOLD, detail=f"medido {qber_measured:.4f}")
        seed = amplify(self.key.bits, qber_measured, self.ledger, self.rng,
                       self.config.safety_bits, self.config.tagged_fraction)
        if seed is None:
            self.stats['final_length'] = 0
            raise SessionAborted(AbortReason.NO_SECURE_BITS,
                                 detail=f"n={n}, vazamento={self.ledger.key_leak}")
        m = seed.m
        self.stats['final_length'] = m
        self._send(PASeed(m, seed.bits))
        final = toeplitz_hash(self.key.bits, seed)
        digest = self._digest(m)
        self._send(Done(digest))
        if self._expect(Done).digest != digest:
            raise SessionAborted(AbortReason.PROTOCOL_ERROR, detail="resumo final divergente", notify=False)
        self.secret = self._secret(final, m)


class _WireParityOracle:
    """Paridades de Alice obtidas pelo canal, uma rodada por chamada"""

    def __init__(self, endpoint: BobEndpoint):
        self.endpoint = endpoint

    def parities(self, ranges: np.ndarray) -> np.ndarray:
        self.endpoint._send(CascadeParityReq(ranges))
        return self.endpoint._expect(CascadeParityResp).parities


@dataclass
class SessionOutcome:
    role: str
    secret: Optional[SecretKey]
    abort_reason: Optional[AbortReason]
    remote_abort: bool
    stats: Dict[str, Any]
    ledger: LeakLedger

    @property
    def completed(self) -> bool:
        return self.secret is not None


def run_session(role: str, record, channel: FrameChannel, config: SessionConfig, rng_seed=None) -> SessionOutcome:
    """Executa uma ponta até a chave final ou um aborto"""
    if role == 'alice':
        endpoint: Endpoint = AliceEndpoint(record, channel, config, rng_seed)
    elif role == 'bob':
        endpoint = BobEndpoint(record, channel, config, rng_seed)
    else:
        raise ValueError(f"Papel desconhecido: {role}")
    remote = False
    try:
        endpoint.run()
    except SessionAborted as e:
        remote = e.remote
    return SessionOutcome(role, endpoint.secret, endpoint.abort_reason, remote, endpoint.stats, endpoint.ledger)
