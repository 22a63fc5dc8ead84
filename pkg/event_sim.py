#!/usr/bin/env python3
"""
Simulador estocástico da camada quântica

Gera, ciclo a ciclo de relógio, a codificação aleatória de Alice, a base de
medida de Bob e o resultado de detecção sob perda na fibra, contagens
errôneas (escuro + luz espúria), deriva de fase do interferômetro e ataque
opcional de interceptação e reenvio.

Dois modos com as mesmas probabilidades por ciclo:
    - exato: um sorteio por ciclo (CycleBatch), permite deriva e auditoria
    - agregado: contagens binomiais por célula (TallyCounts), para >= 10^8 ciclos

Uso:
    batch = simulate_exact(params, 10**6, rng_seed=7)
    tallies = simulate_aggregated(params, 2_400_000_00, rng_seed=7)
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from link_model import LinkParams, signal_rate_per_cycle
from logging_config import get_logger

logger = get_logger('qkd_sim.event_sim')

BASIS_Z: int = 0
BASIS_X: int = 1

OUTCOME_NONE: int = -1

ORIGIN_NONE: int = 0
ORIGIN_SIGNAL: int = 1
ORIGIN_NOISE: int = 2
ORIGIN_DOUBLE: int = 3

NOISE_SIFTING_MODES = ('two_output', 'basis')
ATTACK_MODES = ('none', 'intercept_resend')

# Ciclos por bloco no modo exato; fixo para que a sequência de sorteios não
# dependa do tamanho total da execução
CHUNK_CYCLES: int = 1 << 21

CellKey = Tuple[int, int, int]  # (base de Alice, bit de Alice, base de Bob)
CELL_KEYS: Tuple[CellKey, ...] = tuple(itertools.product((0, 1), (0, 1), (0, 1)))


@dataclass(frozen=True)
class DriftState:
    """Erro de fase do interferômetro e limite da taxa de deriva"""
    phase_offset_deg: float = 0.0
    drift_rate_deg_per_s: float = 0.05

    def __post_init__(self):
        if self.drift_rate_deg_per_s < 0:
            raise ValueError("Taxa de deriva não pode ser negativa")


@dataclass(frozen=True)
class AttackConfig:
    """Espiã de interceptação e reenvio atuando numa fração dos fótons de sinal"""
    mode: str = 'none'
    fraction: float = 0.0

    def __post_init__(self):
        if self.mode not in ATTACK_MODES:
            raise ValueError(f"Modo de ataque desconhecido: {self.mode}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"Fração de ataque fora de [0, 1]: {self.fraction}")
        if self.mode == 'none' and self.fraction != 0.0:
            raise ValueError("Ataque 'none' exige fração 0")

    @property
    def intercept_fraction(self) -> float:
        return self.fraction if self.mode == 'intercept_resend' else 0.0


def parse_attack(spec: str) -> AttackConfig:
    """Converte 'none' ou 'intercept:<f>' em AttackConfig"""
    spec = spec.strip().lower()
    if spec in ('', 'none'):
        return AttackConfig()
    if spec.startswith('intercept:'):
        try:
            fraction = float(spec.split(':', 1)[1])
        except ValueError as e:
            raise ValueError(f"Fração de ataque inválida em '{spec}'") from e
        return AttackConfig('intercept_resend', fraction)
    raise ValueError(f"Especificação de ataque inválida: '{spec}' (use none ou intercept:<f>)")


@dataclass(frozen=True)
class SimOptions:
    """Convenções do amostrador que o modelo fechado deixa em aberto"""
    noise_sifting: str = 'two_output'
    interferometer_visibility: float = 1.0

    def __post_init__(self):
        if self.noise_sifting not in NOISE_SIFTING_MODES:
            raise ValueError(f"noise_sifting deve ser um de {NOISE_SIFTING_MODES}")
        if not 0.0 <= self.interferometer_visibility <= 1.0:
            raise ValueError("Visibilidade clássica fora de [0, 1]")


def noise_probability(params: LinkParams, noise_sifting: str = 'two_output') -> float:
    """
    Probabilidade de clique errôneo por ciclo.

    'two_output': P_e por saída do interferômetro, duas saídas -> 2 P_e por ciclo, de modo
    que após a peneiração o ruído contribui P_e por ciclo, como no denominador do QBER.
    'basis': P_e por ciclo, peneirado a 50% como qualquer detecção.
    """
    if noise_sifting == 'two_output':
        return min(1.0, 2.0 * params.p_err_cycle)
    if noise_sifting == 'basis':
        return params.p_err_cycle
    raise ValueError(f"noise_sifting desconhecido: {noise_sifting}")


def encode_phase(bits, bases):
    """Fase de Alice: bit * pi + (base X) * pi/2"""
    return np.asarray(bits, dtype=float) * np.pi + np.asarray(bases, dtype=float) * (np.pi / 2.0)


def click_probabilities(delta_phi_rad, visibility: float):
    """Probabilidades de saída bit0 / bit1 do interferômetro de Bob"""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError(f"Visibilidade fora de [0, 1]: {visibility}")
    fringe = visibility * np.cos(delta_phi_rad)
    p_bit0 = (1.0 + fringe) / 2.0
    p_bit1 = (1.0 - fringe) / 2.0
    if np.ndim(p_bit0) == 0:
        return float(p_bit0), float(p_bit1)
    return p_bit0, p_bit1


def signal_error_probability(params: LinkParams, attack: Optional[AttackConfig] = None,
                             visibility: float = 1.0) -> float:
    """Erro de um clique de sinal com bases iguais (interceptação + modulação)"""
    f = attack.intercept_fraction if attack else 0.0
    base = (1.0 - visibility) / 2.0
    # Espiã na base errada (prob. f/2) deixa o resultado de Bob aleatório
    raw = (1.0 - f / 2.0) * base + (f / 2.0) * 0.5
    return raw + params.e_mod - 2.0 * raw * params.e_mod


def drift_walk_deg(drift: DriftState, n_seconds: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """
    Passeio aleatório de fase com incremento uniforme em [-taxa, +taxa] por segundo.

    Retorna o deslocamento vigente em cada segundo e o deslocamento final.
    """
    increments = rng.uniform(-drift.drift_rate_deg_per_s, drift.drift_rate_deg_per_s, n_seconds)
    walk = drift.phase_offset_deg + np.concatenate(([0.0], np.cumsum(increments)))
    return walk[:-1], float(walk[-1])


def apply_intercept_resend(cycle_state: Tuple[np.ndarray, np.ndarray], f: float,
                           rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Interceptação e reenvio sobre os fótons de sinal.

    cycle_state = (bits, bases) enviados por Alice. Cada fóton é interceptado
    com probabilidade f: Eva mede numa base aleatória e reenvia o estado que
    obteve. Retorna (bits, bases) efetivamente recebidos por Bob e a máscara
    de interceptação.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"Fração de interceptação fora de [0, 1]: {f}")
    bits, bases = cycle_state
    count = len(bits)
    intercepted = rng.random(count) < f
    eve_bases = rng.integers(0, 2, count, dtype=np.uint8)
    guesses = rng.integers(0, 2, count, dtype=np.uint8)
    eve_bits = np.where(eve_bases == bases, bits, guesses).astype(np.uint8)
    return (np.where(intercepted, eve_bits, bits).astype(np.uint8),
            np.where(intercepted, eve_bases, bases).astype(np.uint8),
            intercepted)


@dataclass
class CycleBatch:
    """Resultado exato por ciclo de relógio"""
    count: int
    alice_bits: np.ndarray
    alice_bases: np.ndarray
    bob_bases: np.ndarray
    outcome: np.ndarray          # -1 nenhum, 0 ou 1
    origin: np.ndarray           # ORIGIN_*
    final_drift: Optional[DriftState] = None

    def __post_init__(self):
        for name in ('alice_bits', 'alice_bases', 'bob_bases', 'outcome', 'origin'):
            if len(getattr(self, name)) != self.count:
                raise ValueError(f"Sequência {name} com comprimento diferente de count")
        if np.any((self.outcome == OUTCOME_NONE) != (self.origin == ORIGIN_NONE)):
            raise ValueError("Resultado 'nenhum' deve coincidir com origem vazia")

    @property
    def detected(self) -> np.ndarray:
        return self.outcome != OUTCOME_NONE

    @property
    def sifted(self) -> np.ndarray:
        return self.detected & (self.alice_bases == self.bob_bases)

    def sifted_counts(self) -> Tuple[int, int]:
        """(bits peneirados, erros peneirados)"""
        mask = self.sifted
        errors = int(np.count_nonzero(self.outcome[mask] != self.alice_bits[mask]))
        return int(np.count_nonzero(mask)), errors


@dataclass
class CellTally:
    n_cycles: int = 0
    n_signal_clicks: int = 0
    n_signal_errors: int = 0
    n_noise_clicks: int = 0
    n_double_clicks: int = 0
    n_noise_errors: int = 0   # erros entre cliques de ruído e duplos

    @property
    def n_clicks(self) -> int:
        return self.n_signal_clicks + self.n_noise_clicks + self.n_double_clicks

    @property
    def n_errors(self) -> int:
        return self.n_signal_errors + self.n_noise_errors


@dataclass
class TallyCounts:
    """Contagens agregadas por célula (base de Alice, bit de Alice, base de Bob)"""
    cells: Dict[CellKey, CellTally] = field(default_factory=lambda: {key: CellTally() for key in CELL_KEYS})

    @property
    def total_cycles(self) -> int:
        return sum(cell.n_cycles for cell in self.cells.values())

    @property
    def detections(self) -> int:
        return sum(cell.n_clicks for cell in self.cells.values())

    @property
    def double_clicks(self) -> int:
        return sum(cell.n_double_clicks for cell in self.cells.values())

    @property
    def sifted_bits(self) -> int:
        return sum(cell.n_clicks for key, cell in self.cells.items() if key[0] == key[2])

    @property
    def sifted_errors(self) -> int:
        return sum(cell.n_errors for key, cell in self.cells.items() if key[0] == key[2])

    @property
    def sifted_qber(self) -> float:
        return self.sifted_errors / self.sifted_bits if self.sifted_bits else 0.0

    def validate(self) -> None:
        for key, cell in self.cells.items():
            if cell.n_signal_errors > cell.n_signal_clicks:
                raise ValueError(f"Célula {key}: mais erros que cliques de sinal")
            if cell.n_noise_errors > cell.n_noise_clicks + cell.n_double_clicks:
                raise ValueError(f"Célula {key}: mais erros que cliques de ruído")
            if cell.n_clicks > cell.n_cycles:
                raise ValueError(f"Célula {key}: mais cliques que ciclos")


def simulate_exact(params: LinkParams, n_cycles: int, drift: Optional[DriftState] = None,
                   attack: Optional[AttackConfig] = None, rng_seed=0,
                   options: Optional[SimOptions] = None) -> CycleBatch:
    """
    Amostra cada ciclo de relógio individualmente.

    Por ciclo: bit e base de Alice e base de Bob uniformes; clique de sinal com
    probabilidade R (saída por click_probabilities com a fase do ciclo, incluindo
    a deriva, depois invertida com probabilidade e_mod); independentemente,
    clique de ruído com bit uniforme; sinal + ruído no mesmo ciclo é duplo, com
    bit uniforme. Determinístico para uma semente fixa.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles deve ser >= 1")
    attack = attack or AttackConfig()
    options = options or SimOptions()
    rng = np.random.default_rng(rng_seed)

    rate = float(signal_rate_per_cycle(params))
    p_noise = noise_probability(params, options.noise_sifting)
    f = attack.intercept_fraction

    alice_bits = rng.integers(0, 2, n_cycles, dtype=np.uint8)
    alice_bases = rng.integers(0, 2, n_cycles, dtype=np.uint8)
    bob_bases = rng.integers(0, 2, n_cycles, dtype=np.uint8)
    outcome = np.full(n_cycles, OUTCOME_NONE, dtype=np.int8)
    origin = np.zeros(n_cycles, dtype=np.uint8)

    offsets_deg = None
    final_drift = None
    if drift is not None:
        n_seconds = max(1, math.ceil(n_cycles / params.clock_hz))
        offsets_deg, end_offset = drift_walk_deg(drift, n_seconds, rng)
        final_drift = DriftState(end_offset, drift.drift_rate_deg_per_s)

    for start in range(0, n_cycles, CHUNK_CYCLES):
        stop = min(start + CHUNK_CYCLES, n_cycles)
        size = stop - start
        signal = rng.random(size) < rate
        noise = rng.random(size) < p_noise

        sig_idx = start + np.flatnonzero(signal)
        bits, bases = alice_bits[sig_idx], alice_bases[sig_idx]
        if f > 0.0:
            bits, bases, _ = apply_intercept_resend((bits, bases), f, rng)
        delta_phi = encode_phase(bits, bases) - bob_bases[sig_idx] * (np.pi / 2.0)
        if offsets_deg is not None:
            seconds = np.minimum((sig_idx / params.clock_hz).astype(np.int64), len(offsets_deg) - 1)
            delta_phi = delta_phi + np.radians(offsets_deg[seconds])
        p_bit0, _ = click_probabilities(delta_phi, options.interferometer_visibility)
        signal_bits = (rng.random(len(sig_idx)) >= p_bit0).astype(np.int8)
        signal_bits ^= (rng.random(len(sig_idx)) < params.e_mod).astype(np.int8)
        outcome[sig_idx] = signal_bits
        origin[sig_idx] = ORIGIN_SIGNAL

        noise_idx = start + np.flatnonzero(noise)
        outcome[noise_idx] = rng.integers(0, 2, len(noise_idx), dtype=np.int8)
        origin[noise_idx] = np.where(signal[noise_idx - start], ORIGIN_DOUBLE, ORIGIN_NOISE)

    batch = CycleBatch(n_cycles, alice_bits, alice_bases, bob_bases, outcome, origin, final_drift)
    logger.debug(f"simulate_exact: {n_cycles} ciclos, {int(np.count_nonzero(batch.detected))} detecções")
    return batch


def tally_batch(batch: CycleBatch) -> TallyCounts:
    """Agrega um CycleBatch nas mesmas células do modo agregado"""
    tallies = TallyCounts()
    bob_errors = batch.outcome != batch.alice_bits.astype(np.int8)
    for key in CELL_KEYS:
        alice_basis, alice_bit, bob_basis = key
        in_cell = (batch.alice_bases == alice_basis) & (batch.alice_bits == alice_bit) & (batch.bob_bases == bob_basis)
        signal = in_cell & (batch.origin == ORIGIN_SIGNAL)
        noisy = in_cell & ((batch.origin == ORIGIN_NOISE) | (batch.origin == ORIGIN_DOUBLE))
        tallies.cells[key] = CellTally(
            n_cycles=int(np.count_nonzero(in_cell)),
            n_signal_clicks=int(np.count_nonzero(signal)),
            n_signal_errors=int(np.count_nonzero(signal & bob_errors)),
            n_noise_clicks=int(np.count_nonzero(in_cell & (batch.origin == ORIGIN_NOISE))),
            n_double_clicks=int(np.count_nonzero(in_cell & (batch.origin == ORIGIN_DOUBLE))),
            n_noise_errors=int(np.count_nonzero(noisy & bob_errors)),
        )
    return tallies


def simulate_aggregated(params: LinkParams, n_cycles: int, attack: Optional[AttackConfig] = None,
                        rng_seed=0, options: Optional[SimOptions] = None) -> TallyCounts:
    """
    Sorteia as contagens por célula diretamente de distribuições multinomiais e
    binomiais com as probabilidades por ciclo do modo exato (sem deriva).
    """
    if n_cycles < 0:
        raise ValueError("n_cycles não pode ser negativo")
    attack = attack or AttackConfig()
    options = options or SimOptions()
    rng = np.random.default_rng(rng_seed)

    rate = float(signal_rate_per_cycle(params))
    p_noise = noise_probability(params, options.noise_sifting)
    p_signal_only = rate * (1.0 - p_noise)
    p_noise_only = p_noise * (1.0 - rate)
    p_double = rate * p_noise
    category_p = [p_signal_only, p_noise_only, p_double, max(0.0, 1.0 - p_signal_only - p_noise_only - p_double)]
    e_matched = signal_error_probability(params, attack, options.interferometer_visibility)

    tallies = TallyCounts()
    cell_cycles = rng.multinomial(n_cycles, [1.0 / len(CELL_KEYS)] * len(CELL_KEYS))
    for key, n_cell in zip(CELL_KEYS, cell_cycles):
        n_cell = int(n_cell)
        signal, noise, double, _ = rng.multinomial(n_cell, category_p)
        e_cell = e_matched if key[0] == key[2] else 0.5
        tallies.cells[key] = CellTally(
            n_cycles=n_cell,
            n_signal_clicks=int(signal),
            n_signal_errors=int(rng.binomial(signal, e_cell)),
            n_noise_clicks=int(noise),
            n_double_clicks=int(double),
            n_noise_errors=int(rng.binomial(noise + double, 0.5)),
        )
    logger.debug(f"simulate_aggregated: {n_cycles} ciclos, {tallies.detections} detecções")
    return tallies


@dataclass
class AliceRecord:
    """Registro de codificação de Alice nos ciclos materializados (ordenados)"""
    n_cycles: int
    cycles: np.ndarray
    bits: np.ndarray
    bases: np.ndarray

    def lookup(self, cycle_indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Bits e bases nos ciclos anunciados; KeyError para ciclo desconhecido"""
        cycle_indices = np.asarray(cycle_indices, dtype=np.int64)
        if len(cycle_indices) == 0:
            return np.zeros(0, dtype=np.uint8), np.zeros(0, dtype=np.uint8)
        if cycle_indices.min() < 0 or cycle_indices.max() >= self.n_cycles:
            raise KeyError("Índice de ciclo fora da execução")
        pos = np.searchsorted(self.cycles, cycle_indices)
        pos = np.minimum(pos, len(self.cycles) - 1)
        if len(self.cycles) == 0 or np.any(self.cycles[pos] != cycle_indices):
            raise KeyError("Índice de ciclo sem registro de codificação")
        return self.bits[pos], self.bases[pos]


@dataclass
class BobRecord:
    """Registro de detecções de Bob (índice de ciclo estritamente crescente)"""
    n_cycles: int
    cycles: np.ndarray
    bases: np.ndarray
    bits: np.ndarray

    def __post_init__(self):
        if len(self.cycles) > 1 and np.any(np.diff(self.cycles) <= 0):
            raise ValueError("Índices de detecção devem ser estritamente crescentes")


@dataclass
class QuantumRun:
    """Camada quântica de uma sessão: o que cada lado guarda e as contagens verdadeiras"""
    alice: AliceRecord
    bob: BobRecord
    tallies: TallyCounts


def records_from_batch(batch: CycleBatch) -> Tuple[AliceRecord, BobRecord]:
    detected = np.flatnonzero(batch.detected)
    alice = AliceRecord(batch.count, np.arange(batch.count, dtype=np.int64),
                        batch.alice_bits, batch.alice_bases)
    bob = BobRecord(batch.count, detected.astype(np.int64), batch.bob_bases[detected],
                    batch.outcome[detected].astype(np.uint8))
    return alice, bob


def realize_records(tallies: TallyCounts, n_cycles: int,
                    rng: np.random.Generator) -> Tuple[AliceRecord, BobRecord]:
    """
    Materializa registros esparsos a partir das contagens agregadas.

    Apenas os ciclos com detecção são materializados; dados as contagens, a
    disposição dos eventos ao longo dos ciclos é uniforme.
    """
    alice_bases, alice_bits, bob_bases, wrong = [], [], [], []
    for key in CELL_KEYS:
        cell = tallies.cells[key]
        clicks = cell.n_clicks
        if clicks == 0:
            continue
        flags = np.zeros(clicks, dtype=np.uint8)
        flags[:cell.n_signal_errors] = 1
        noisy_flags = np.zeros(cell.n_noise_clicks + cell.n_double_clicks, dtype=np.uint8)
        noisy_flags[:cell.n_noise_errors] = 1
        flags[cell.n_signal_clicks:] = rng.permutation(noisy_flags)
        alice_bases.append(np.full(clicks, key[0], dtype=np.uint8))
        alice_bits.append(np.full(clicks, key[1], dtype=np.uint8))
        bob_bases.append(np.full(clicks, key[2], dtype=np.uint8))
        wrong.append(flags)

    if not alice_bits:
        empty = np.zeros(0, dtype=np.uint8)
        no_cycles = np.zeros(0, dtype=np.int64)
        return AliceRecord(n_cycles, no_cycles, empty, empty), BobRecord(n_cycles, no_cycles, empty, empty)

    order = rng.permutation(sum(len(a) for a in alice_bits))
    a_bases = np.concatenate(alice_bases)[order]
    a_bits = np.concatenate(alice_bits)[order]
    b_bases = np.concatenate(bob_bases)[order]
    b_bits = a_bits ^ np.concatenate(wrong)[order]
    cycles = np.sort(rng.choice(n_cycles, size=len(order), replace=False)).astype(np.int64)
    return (AliceRecord(n_cycles, cycles, a_bits, a_bases),
            BobRecord(n_cycles, cycles.copy(), b_bases, b_bits))


def spawn_streams(seed: int, count: int = 3):
    """Sementes independentes derivadas da semente da execução"""
    return np.random.SeedSequence(seed).spawn(count)


def run_quantum_layer(params: LinkParams, n_cycles: int, sim_mode: str, seed,
                      drift: Optional[DriftState] = None, attack: Optional[AttackConfig] = None,
                      options: Optional[SimOptions] = None) -> QuantumRun:
    """Executa a camada quântica de uma sessão e separa os registros de cada lado"""
    if sim_mode == 'exact':
        batch = simulate_exact(params, n_cycles, drift, attack, seed, options)
        alice, bob = records_from_batch(batch)
        return QuantumRun(alice, bob, tally_batch(batch))
    if sim_mode == 'aggregate':
        if drift is not None:
            logger.warning("Deriva de fase ignorada no modo agregado")
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        sample_seq, layout_seq = seq.spawn(2)
        tallies = simulate_aggregated(params, n_cycles, attack, sample_seq, options)
        alice, bob = realize_records(tallies, n_cycles, np.random.default_rng(layout_seq))
        return QuantumRun(alice, bob, tallies)
    raise ValueError(f"Modo de simulação desconhecido: {sim_mode}")
