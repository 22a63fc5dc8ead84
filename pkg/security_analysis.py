#!/usr/bin/env python3
"""
Análise de segurança do enlace

Veredictos do limite de QBER, limite de ataque por divisão do número de
fótons (PNS) para fonte poissoniana e solucionadores de alcance máximo
seguro sobre o modelo fechado de QBER.
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import optimize

from link_model import LinkParams, qber_model_extended, sifted_rate_model, transmittance
from logging_config import get_logger
from privacy_amp import QBER_THRESHOLD, binary_entropy, tau

logger = get_logger('qkd_sim.analysis')

RANGE_BRACKET_KM = (0.0, 500.0)
RANGE_XTOL_KM = 1e-9
DEFAULT_EC_EFFICIENCY = 1.16
# Limite de PNS citado para o sistema como construído; não reproduzido pela fórmula
QUOTED_PNS_LIMIT_KM = 50.0
# Visibilidade medida num enlace de 165.8 km
MEASURED_VISIBILITY_165_8_KM = 0.86


class RangeError(Exception):
    """Falha do solucionador de alcance, com código tipado"""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


@dataclass
class SecurityVerdict:
    qber_ok: bool
    pns_ok: bool
    max_range_km: float
    notes: List[str] = field(default_factory=list)


def p_multiphoton(mu: float) -> float:
    """Probabilidade de pulso com dois ou mais fótons: 1 - (1 + mu) e^-mu"""
    if mu < 0:
        raise ValueError(f"mu deve ser >= 0 (recebido {mu})")
    # -expm1 mantém precisão para mu pequeno
    return float(-math.expm1(-mu) - mu * math.exp(-mu))


def pns_range_limit(params: LinkParams) -> float:
    """
    Maior L com mu 10^(-alpha L/10) >= p_multi(mu).

    A eficiência de Bob cancela nos dois lados. Retorna 0 se a condição já
    falha em L = 0 e infinito sem atenuação.
    """
    if params.mu <= 0:
        raise ValueError("pns_range_limit exige mu > 0")
    p_multi = p_multiphoton(params.mu)
    if params.mu <= p_multi:
        return 0.0
    if params.alpha_db_per_km == 0:
        return math.inf
    return 10.0 * math.log10(params.mu / p_multi) / params.alpha_db_per_km


def multiphoton_tagged_fraction(params: LinkParams, length_km=None) -> float:
    """Fração dos pulsos detectados atribuível a multifótons: min(1, p_multi / (mu T))"""
    length = params.length_km if length_km is None else length_km
    arriving = params.mu * transmittance(params.alpha_db_per_km, length)
    if arriving <= 0:
        return 1.0
    return min(1.0, p_multiphoton(params.mu) / arriving)


def _qber_gap(length_km: float, params: LinkParams, target: float) -> float:
    return float(qber_model_extended(params, length_km)) - target


def solve_max_range(params: LinkParams, target_qber: float = QBER_THRESHOLD) -> float:
    """
    Comprimento L* com qber_model_extended(L*) = target, por bisseção em [0, 500] km.

    RangeError('insecure_at_zero') se o alvo já é excedido em L = 0;
    math.inf quando o QBER nunca alcança o alvo.
    """
    low, high = RANGE_BRACKET_KM
    if _qber_gap(low, params, target_qber) >= 0:
        raise RangeError('insecure_at_zero',
                         f"QBER em L=0 é {qber_model_extended(params, 0.0):.4f} >= {target_qber}")
    if params.p_err_cycle == 0:
        return math.inf
    if _qber_gap(high, params, target_qber) < 0:
        # O QBER tende a 0.5 com L; o alvo fica além do intervalo usual
        while _qber_gap(high, params, target_qber) < 0:
            high *= 2.0
            if high > 1e6:
                return math.inf
    length = optimize.bisect(_qber_gap, low, high, args=(params, target_qber), xtol=RANGE_XTOL_KM)
    logger.info(f"Alcance máximo para QBER {target_qber}: {length:.2f} km")
    return float(length)


def predicted_key_fraction(e: float, ec_efficiency: float = DEFAULT_EC_EFFICIENCY) -> float:
    """Fração assintótica da chave peneirada que sobrevive: 1 - tau(e) - f h(e)"""
    if e >= QBER_THRESHOLD:
        return 0.0
    return max(0.0, 1.0 - tau(e) - ec_efficiency * binary_entropy(e))


def predicted_final_rate(params: LinkParams, length_km=None,
                         ec_efficiency: float = DEFAULT_EC_EFFICIENCY):
    """Taxa de chave final prevista (bits/s); zero além do limite de QBER"""
    length = params.length_km if length_km is None else length_km
    fraction = np.vectorize(predicted_key_fraction, otypes=[float])(
        qber_model_extended(params, length), ec_efficiency)
    rate = np.asarray(sifted_rate_model(params, length)) * fraction
    return float(rate) if np.ndim(rate) == 0 else rate


def verdict(e_measured: float, params: LinkParams) -> SecurityVerdict:
    """Veredicto para um QBER medido no comprimento de params"""
    notes: List[str] = []
    qber_ok = e_measured < QBER_THRESHOLD
    pns_limit = pns_range_limit(params) if params.mu > 0 else math.inf
    pns_ok = params.length_km <= pns_limit
    try:
        max_range = solve_max_range(params)
    except RangeError as e:
        max_range = 0.0
        notes.append(f"alcance: {e.code}")
    notes.append(
        f"limite PNS calculado {pns_limit:.1f} km difere do citado ~{QUOTED_PNS_LIMIT_KM:.0f} km "
        f"(convenção de parâmetros não informada)"
    )
    if not qber_ok:
        notes.append(f"QBER {e_measured:.4f} >= {QBER_THRESHOLD}: chave não pode ser formada")
    if not pns_ok:
        notes.append(f"{params.length_km:g} km além do alcance seguro contra PNS")
    return SecurityVerdict(qber_ok, pns_ok, max_range, notes)
