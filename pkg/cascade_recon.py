#!/usr/bin/env python3
"""
Reconciliação de erros Cascade

Bob corrige sua chave peneirada consultando paridades de blocos da chave de
Alice. Cada passada divide a chave (embaralhada a partir da segunda) em
blocos de k1 * 2^(p-1) bits; blocos com paridade relativa ímpar são
bisseccionados até isolar um erro, e cada correção reabre os blocos das
passadas anteriores que contêm a posição corrigida.

As consultas de todas as bisseções em andamento vão numa única rodada
(CASCADE_PARITY_REQ), e cada paridade respondida é contabilizada no
LeakLedger. Bob guarda toda paridade de Alice já conhecida: faixas repetidas
não voltam ao canal, a metade direita de uma bisseção sai da paridade do pai
e, a partir da segunda passada, o último bloco sai da paridade total da
chave (o XOR dos blocos da primeira passada).
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from classical_wire import HASH_BITS, MessageType, decode_frame
from logging_config import get_logger
from privacy_amp import ToeplitzSeed, toeplitz_hash

logger = get_logger('qkd_sim.cascade')

DEFAULT_PASSES = 4
DEFAULT_K1_CONSTANT = 0.73
MIN_BLOCK = 4
MAX_VERIFY_BITS = 64   # o hash viaja num u64


class CascadeError(Exception):
    """Falha de contrato ou de comunicação durante a reconciliação"""


@dataclass(frozen=True)
class CascadeConfig:
    n_passes: int = DEFAULT_PASSES
    k1_constant: float = DEFAULT_K1_CONSTANT
    shuffle_seeds: Tuple[int, ...] = ()   # uma por passada a partir da segunda
    verify_bits: int = HASH_BITS

    def __post_init__(self):
        if self.n_passes < 2:
            raise ValueError("Cascade exige ao menos 2 passadas")
        if self.shuffle_seeds and len(self.shuffle_seeds) != self.n_passes - 1:
            raise ValueError("Uma semente de embaralhamento por passada a partir da segunda")
        if not 1 <= self.verify_bits <= MAX_VERIFY_BITS:
            raise ValueError(f"verify_bits deve estar em [1, {MAX_VERIFY_BITS}]")

    def with_seeds(self, seeds: Sequence[int]) -> 'CascadeConfig':
        return replace(self, shuffle_seeds=tuple(int(s) for s in seeds))


@dataclass
class LeakLedger:
    """Bits correlacionados com a chave revelados no canal clássico"""
    parity_bits_disclosed: int = 0
    sample_bits_disclosed: int = 0
    verify_bits_disclosed: int = 0

    def add_parities(self, count: int) -> None:
        self._check(count)
        self.parity_bits_disclosed += count

    def add_sample(self, count: int) -> None:
        self._check(count)
        self.sample_bits_disclosed += count

    def add_verify(self, count: int) -> None:
        self._check(count)
        self.verify_bits_disclosed += count

    @staticmethod
    def _check(count: int) -> None:
        if count < 0:
            raise ValueError("O registro de vazamento só cresce")

    @property
    def key_leak(self) -> int:
        """Vazamento sobre a chave reconciliada (a amostra já foi descartada)"""
        return self.parity_bits_disclosed + self.verify_bits_disclosed

    @property
    def total(self) -> int:
        return self.key_leak + self.sample_bits_disclosed

    @classmethod
    def from_frames(cls, frames, verify_bits: int = HASH_BITS) -> 'LeakLedger':
        """
        Reconstrói o registro a partir dos quadros gravados no canal.

        frames: sequência de (remetente, bytes do quadro). Paridades vêm das
        respostas CASCADE_PARITY_RESP, a amostra de SAMPLE_REQUEST e cada par
        (sal, hash) de verificação conta verify_bits uma vez.
        """
        ledger = cls()
        verify_salts: Set[int] = set()
        for _, frame in frames:
            msg = decode_frame(frame)
            if msg.msg_type == MessageType.CASCADE_PARITY_RESP:
                ledger.add_parities(len(msg.parities))
            elif msg.msg_type == MessageType.SAMPLE_REQUEST:
                ledger.add_sample(len(msg.positions))
            elif msg.msg_type == MessageType.VERIFY_HASH and msg.salt not in verify_salts:
                verify_salts.add(msg.salt)
                ledger.add_verify(verify_bits)
        return ledger


def block_parity(bits, start: int = 0, end: Optional[int] = None) -> int:
    """XOR dos bits em [start, end)"""
    bits = np.asarray(bits, dtype=np.uint8)
    end = len(bits) if end is None else end
    if not 0 <= start <= end <= len(bits):
        raise ValueError(f"Faixa [{start}, {end}) fora da cadeia de {len(bits)} bits")
    return int(np.bitwise_xor.reduce(bits[start:end], initial=0))


def initial_block_size(e_est: float, n: int, k1_constant: float = DEFAULT_K1_CONSTANT) -> int:
    """k1 = ceil(0.73 / e), limitado a [4, n/2]; e = 0 é tratado como 1/n"""
    if n < 2 * MIN_BLOCK:
        raise CascadeError(f"Chave curta demais para Cascade: {n} bits")
    e = e_est if e_est > 0 else 1.0 / n
    return int(min(max(math.ceil(k1_constant / e), MIN_BLOCK), n // 2))


def pass_permutation(seed: Optional[int], n: int) -> np.ndarray:
    """Ordem dos bits numa passada; identidade sem semente"""
    if seed is None:
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng(seed).permutation(n).astype(np.int64)


def _split(start: int, end: int) -> int:
    """Fim da metade esquerda de uma bisseção: ceil(tamanho / 2)"""
    return start + (end - start + 1) // 2


def binary_search_error(alice_block, bob_block, ledger: Optional[LeakLedger] = None) -> Tuple[int, int]:
    """
    Localiza um bit divergente num bloco de paridade relativa ímpar.

    Retorna (índice, trocas de paridade). Cada troca revela a paridade da
    metade esquerda de Alice; são ceil(log2 |bloco|) trocas.
    """
    alice = np.asarray(alice_block, dtype=np.uint8)
    bob = np.asarray(bob_block, dtype=np.uint8)
    if len(alice) != len(bob) or len(alice) == 0:
        raise ValueError("Blocos vazios ou de tamanhos diferentes")
    if block_parity(alice) == block_parity(bob):
        raise ValueError("Bloco com paridade relativa par: nada a localizar")
    lo, hi = 0, len(alice)
    exchanges = 0
    while hi - lo > 1:
        mid = _split(lo, hi)
        exchanges += 1
        if block_parity(alice, lo, mid) != block_parity(bob, lo, mid):
            hi = mid
        else:
            lo = mid
    if ledger is not None:
        ledger.add_parities(exchanges)
    return lo, exchanges


class ParityOracle(Protocol):
    """Fonte das paridades de Alice: faixas (passada, início, fim) -> bits"""

    def parities(self, ranges: np.ndarray) -> np.ndarray:
        ...


class CascadeResponder:
    """Lado de Alice: responde paridades de faixas nas ordens de cada passada"""

    def __init__(self, alice_key, config: CascadeConfig):
        key = np.asarray(alice_key, dtype=np.uint8)
        self.n = len(key)
        self.n_passes = config.n_passes
        seeds = (None,) + tuple(config.shuffle_seeds or (None,) * (config.n_passes - 1))
        # Prefixos de XOR por passada: paridade [s, e) = prefix[e] ^ prefix[s]
        self._prefix = [
            np.concatenate(([0], np.bitwise_xor.accumulate(key[pass_permutation(seed, self.n)])))
            for seed in seeds
        ]
        self.answered = 0

    def parities(self, ranges: np.ndarray) -> np.ndarray:
        ranges = np.asarray(ranges, dtype=np.int64).reshape(-1, 3)
        if len(ranges) == 0:
            return np.zeros(0, dtype=np.uint8)
        passes, starts, ends = ranges[:, 0], ranges[:, 1], ranges[:, 2]
        if passes.min() < 0 or passes.max() >= self.n_passes:
            raise CascadeError("Passada inexistente na consulta de paridade")
        if starts.min() < 0 or ends.max() > self.n or np.any(starts >= ends):
            raise CascadeError("Faixa de paridade fora da chave")
        out = np.empty(len(ranges), dtype=np.uint8)
        for p in np.unique(passes):
            sel = passes == p
            prefix = self._prefix[p]
            out[sel] = prefix[ends[sel]] ^ prefix[starts[sel]]
        self.answered += len(ranges)
        return out


@dataclass
class CascadeResult:
    corrected_key: np.ndarray
    ledger: LeakLedger
    n_corrected: int
    corrections_per_pass: List[int] = field(default_factory=list)
    rounds: int = 0
    k1: int = 0
    parities_reused: int = 0   # obtidas sem nova revelação


Range = Tuple[int, int, int]


class _BobState:
    """Chave de Bob, as ordens de cada passada e as paridades de Alice já conhecidas"""

    def __init__(self, bob_key, k1: int, config: CascadeConfig):
        self.key = np.array(bob_key, dtype=np.uint8, copy=True)
        n = len(self.key)
        seeds = (None,) + tuple(config.shuffle_seeds or (None,) * (config.n_passes - 1))
        self.perm = [pass_permutation(seed, n) for seed in seeds]
        self.inverse = []
        for perm in self.perm:
            inv = np.empty(n, dtype=np.int64)
            inv[perm] = np.arange(n)
            self.inverse.append(inv)
        self.block = [k1 << p for p in range(config.n_passes)]
        self.alice_top: Dict[int, np.ndarray] = {}
        self.known: Dict[Range, int] = {}
        self.total_parity: Optional[int] = None
        self.reused = 0

    def block_range(self, p: int, b: int) -> Tuple[int, int]:
        start = b * self.block[p]
        return start, min(start + self.block[p], len(self.key))

    def parity(self, p: int, start: int, end: int) -> int:
        return int(np.bitwise_xor.reduce(self.key[self.perm[p][start:end]], initial=0))

    def top_parities(self, p: int) -> np.ndarray:
        starts = np.arange(0, len(self.key), self.block[p])
        return np.bitwise_xor.reduceat(self.key[self.perm[p]], starts).astype(np.uint8)

    def is_odd(self, p: int, b: int) -> bool:
        start, end = self.block_range(p, b)
        return bool(self.alice_top[p][b] ^ self.parity(p, start, end))


def _ask(oracle: ParityOracle, ranges: List[Range], ledger: LeakLedger) -> np.ndarray:
    request = np.asarray(ranges, dtype=np.int64).reshape(-1, 3)
    answer = np.asarray(oracle.parities(request), dtype=np.uint8)
    if len(answer) != len(request):
        raise CascadeError(f"Resposta com {len(answer)} paridades para {len(request)} faixas")
    ledger.add_parities(len(request))
    return answer


def _learn(state: _BobState, ranges: List[Range], oracle: ParityOracle,
           ledger: LeakLedger) -> Tuple[np.ndarray, bool]:
    """Paridades de Alice nas faixas; só as desconhecidas vão ao canal (uma rodada)"""
    missing = list(dict.fromkeys(r for r in ranges if r not in state.known))
    if missing:
        for r, bit in zip(missing, _ask(oracle, missing, ledger)):
            state.known[r] = int(bit)
    state.reused += len(ranges) - len(missing)
    return np.array([state.known[r] for r in ranges], dtype=np.uint8), bool(missing)


def _top_parities(state: _BobState, p: int, oracle: ParityOracle, ledger: LeakLedger) -> bool:
    """Paridades de topo da passada p; retorna se houve rodada no canal"""
    n = len(state.key)
    ranges = [(p,) + state.block_range(p, b) for b in range(math.ceil(n / state.block[p]))]
    if p == 0:
        tops, asked = _learn(state, ranges, oracle, ledger)
        state.total_parity = int(np.bitwise_xor.reduce(tops, initial=0))
    else:
        head, asked = _learn(state, ranges[:-1], oracle, ledger)
        last = state.total_parity ^ int(np.bitwise_xor.reduce(head, initial=0))
        state.known[ranges[-1]] = last
        state.reused += 1
        tops = np.append(head, last).astype(np.uint8)
    state.alice_top[p] = tops
    return asked


def _bisect_all(state: _BobState, searches: List[Range],
                oracle: ParityOracle, ledger: LeakLedger) -> Tuple[Set[int], int]:
    """Bisseções paralelas; retorna as posições (ordem original) com erro e as rodadas"""
    found: Set[int] = set()
    rounds = 0
    open_ranges = list(searches)
    while open_ranges:
        for p, start, end in [r for r in open_ranges if r[2] - r[1] == 1]:
            found.add(int(state.perm[p][start]))
        open_ranges = [r for r in open_ranges if r[2] - r[1] > 1]
        if not open_ranges:
            break
        halves = [(p, start, _split(start, end)) for p, start, end in open_ranges]
        alice_left, asked = _learn(state, halves, oracle, ledger)
        rounds += asked
        next_ranges = []
        for (p, start, end), (_, _, mid), a_par in zip(open_ranges, halves, alice_left):
            state.known.setdefault((p, mid, end), state.known[(p, start, end)] ^ int(a_par))
            if a_par != state.parity(p, start, mid):
                next_ranges.append((p, start, mid))
            else:
                next_ranges.append((p, mid, end))
        open_ranges = next_ranges
    return found, rounds


def run_cascade(bob_key, e_est: float, config: CascadeConfig, oracle: ParityOracle,
                ledger: Optional[LeakLedger] = None) -> CascadeResult:
    """
    Executa todas as passadas do lado de Bob.

    A cada passada p pede as paridades de topo, bissecciona os blocos ímpares
    e, para cada posição corrigida, reavalia os blocos que a contêm em todas
    as passadas <= p até não restar bloco ímpar.
    """
    ledger = ledger if ledger is not None else LeakLedger()
    n = len(bob_key)
    k1 = initial_block_size(e_est, n, config.k1_constant)
    state = _BobState(bob_key, k1, config)
    per_pass: List[int] = []
    total_rounds = 0

    for p in range(config.n_passes):
        total_rounds += _top_parities(state, p, oracle, ledger)
        odd = np.flatnonzero(state.alice_top[p] ^ state.top_parities(p))
        pending = {(p, int(b)) for b in odd}

        corrected = 0
        while pending:
            searches = [(q,) + state.block_range(q, b) for q, b in sorted(pending) if state.is_odd(q, b)]
            pending = set()
            found, rounds = _bisect_all(state, searches, oracle, ledger)
            total_rounds += rounds
            for pos in sorted(found):
                state.key[pos] ^= 1
                corrected += 1
                for q in range(p + 1):
                    pending.add((q, int(state.inverse[q][pos] // state.block[q])))
        per_pass.append(corrected)
        logger.debug(f"Cascade passada {p + 1}: bloco {state.block[p]}, {corrected} correções")

    return CascadeResult(state.key, ledger, sum(per_pass), per_pass, total_rounds, k1, state.reused)


def verify_hash(key_bits, salt: int, n_bits: int = HASH_BITS) -> int:
    """Hash de verificação de n_bits: Toeplitz com semente derivada do sal"""
    key = np.asarray(key_bits, dtype=np.uint8)
    seed = ToeplitzSeed.generate(len(key), n_bits, np.random.default_rng(salt))
    out = toeplitz_hash(key, seed)
    return int(''.join('1' if b else '0' for b in out.tolist()), 2)
