#!/usr/bin/env python3
"""
Amplificação de privacidade

Comprime a chave reconciliada com um hash de Toeplitz (família universal
sobre GF(2)) até o comprimento seguro calculado a partir do QBER e dos bits
revelados no canal clássico.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy import signal, special

QBER_THRESHOLD: float = 0.11
DEFAULT_SAFETY_BITS: int = 30

# Acima deste produto n*m a convolução direta dá lugar à FFT
_DIRECT_CONVOLVE_LIMIT = 1 << 22


def tau(e: float) -> float:
    """Fração de compressão log2(1 + 4e - 4e^2)"""
    if not 0.0 <= e < 0.5:
        raise ValueError(f"QBER fora de [0, 0.5): {e}")
    return math.log2(1.0 + 4.0 * e - 4.0 * e * e)


def binary_entropy(e):
    """h(e) em bits; aceita escalar ou array"""
    e = np.asarray(e, dtype=float)
    value = (special.entr(e) + special.entr(1.0 - e)) / math.log(2.0)
    return float(value) if value.ndim == 0 else value


def _leak_bits(leak_ledger) -> int:
    return int(getattr(leak_ledger, 'key_leak', leak_ledger))


def final_length(n: int, e: float, leak_ledger, safety_s: int = DEFAULT_SAFETY_BITS,
                 tagged_fraction: float = 0.0) -> int:
    """
    Comprimento m da chave final.

    m = floor(n (1 - tau(e)) - vazamento - s), limitado a 0. Com fração de
    pulsos multifótons Delta > 0 (modo incondicional) apenas os n (1 - Delta)
    bits de fóton único contam, com QBER e / (1 - Delta).
    """
    if n < 1:
        raise ValueError("n deve ser >= 1")
    if e >= QBER_THRESHOLD:
        raise ValueError(f"QBER {e:.4f} não está abaixo do limite {QBER_THRESHOLD}")
    if not 0.0 <= tagged_fraction <= 1.0:
        raise ValueError(f"Fração multifóton fora de [0, 1]: {tagged_fraction}")
    leak = _leak_bits(leak_ledger)
    if tagged_fraction > 0.0:
        if tagged_fraction >= 1.0:
            return 0
        single_photon_e = e / (1.0 - tagged_fraction)
        if single_photon_e >= 0.5:
            return 0
        secret = n * (1.0 - tagged_fraction) * (1.0 - tau(single_photon_e))
    else:
        secret = n * (1.0 - tau(e))
    return max(0, math.floor(secret - leak - safety_s))


@dataclass
class ToeplitzSeed:
    """Semente de n + m - 1 bits que define a matriz T[i][j] = seed[i - j + n - 1]"""
    bits: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.n < 1 or self.m < 1:
            raise ValueError("Dimensões de Toeplitz devem ser >= 1")
        if len(self.bits) != self.n + self.m - 1:
            raise ValueError(
                f"Semente com {len(self.bits)} bits; esperado n + m - 1 = {self.n + self.m - 1}"
            )

    @classmethod
    def generate(cls, n: int, m: int, rng: np.random.Generator) -> 'ToeplitzSeed':
        return cls(rng.integers(0, 2, n + m - 1, dtype=np.uint8), n, m)

    def matrix(self) -> np.ndarray:
        """Matriz m x n explícita (apenas para inspeção e testes pequenos)"""
        i = np.arange(self.m)[:, None]
        j = np.arange(self.n)[None, :]
        return self.bits[i - j + self.n - 1]


def toeplitz_hash(key_bits, seed) -> np.ndarray:
    """
    Produto T @ key sobre GF(2).

    A saída i é a convolução de seed com key avaliada em i + n - 1, o que
    evita montar a matriz.
    """
    key = np.asarray(key_bits, dtype=np.uint8)
    n = len(key)
    seed_bits = seed.bits if isinstance(seed, ToeplitzSeed) else np.asarray(seed, dtype=np.uint8)
    if n < 1:
        raise ValueError("Chave vazia")
    m = len(seed_bits) - n + 1
    if m < 1 or (isinstance(seed, ToeplitzSeed) and (seed.n, seed.m) != (n, m)):
        raise ValueError(f"Semente de {len(seed_bits)} bits incompatível com chave de {n} bits")

    if n * m <= _DIRECT_CONVOLVE_LIMIT:
        full = np.convolve(seed_bits.astype(np.int64), key.astype(np.int64))
    else:
        full = np.rint(signal.fftconvolve(seed_bits.astype(float), key.astype(float))).astype(np.int64)
    return (full[n - 1:n - 1 + m] & 1).astype(np.uint8)


@dataclass
class SecretKey:
    """Chave final e o relatório que a acompanha"""
    bits: np.ndarray
    session_id: str
    n: int
    m: int
    key_leak: int
    qber: float
    report: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.bits) != self.m:
            raise ValueError("Comprimento da chave difere de m")

    def to_text(self) -> str:
        return ''.join('1' if b else '0' for b in self.bits.tolist())


def amplify(reconciled_key, e: float, leak_ledger, rng: np.random.Generator,
            safety_s: int = DEFAULT_SAFETY_BITS, tagged_fraction: float = 0.0) -> Optional[ToeplitzSeed]:
    """Calcula m e sorteia a semente; None quando não há bits seguros"""
    n = len(reconciled_key)
    m = final_length(n, e, leak_ledger, safety_s, tagged_fraction)
    if m == 0:
        return None
    return ToeplitzSeed.generate(n, m, rng)
