#!/usr/bin/env python3
"""
Modelo fechado do enlace de fibra

Transmitância, visibilidade de interferência quântica, QBER e taxas previstas
para o sistema BB84 de codificação em fase. As funções são puras e servem de
oráculo para o simulador estocástico (event_sim) e para as varreduras do
harness. Aceitam escalares ou arrays numpy no comprimento da fibra.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import constants

# Parâmetros medidos do enlace de 122 km
AS_BUILT_MU: float = 0.1
AS_BUILT_ALPHA_SPECIFIED: float = 0.2
AS_BUILT_ALPHA_MEASURED: float = 0.21
AS_BUILT_ETA_BOB: float = 0.045
AS_BUILT_P_ERR: float = 8.5e-7
AS_BUILT_P_DARK: float = 3.2e-7
AS_BUILT_CLOCK_HZ: float = 2e6
AS_BUILT_GATE_NS: float = 3.5
AS_BUILT_E_MOD: float = 0.033
# Razão referência:sinal 1.6:1 -> 0.04 de 0.1 fótons no pulso codificado
AS_BUILT_SIGNAL_FRACTION: float = 1.0 / 2.6
TELECOM_WAVELENGTH_M: float = 1.55e-6


@dataclass(frozen=True)
class LinkParams:
    """Constantes físicas do enlace e dos detectores"""
    mu: float = AS_BUILT_MU
    alpha_db_per_km: float = AS_BUILT_ALPHA_MEASURED
    length_km: float = 0.0
    eta_bob: float = AS_BUILT_ETA_BOB
    p_err_cycle: float = AS_BUILT_P_ERR
    p_dark_cycle: float = AS_BUILT_P_DARK
    clock_hz: float = AS_BUILT_CLOCK_HZ
    gate_ns: float = AS_BUILT_GATE_NS
    e_mod: float = AS_BUILT_E_MOD
    signal_fraction: float = AS_BUILT_SIGNAL_FRACTION
    wavelength_m: float = TELECOM_WAVELENGTH_M

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu deve ser >= 0 (recebido {self.mu})")
        if not 0 <= self.eta_bob <= 1:
            raise ValueError(f"eta_bob deve estar em [0, 1] (recebido {self.eta_bob})")
        if not 0 <= self.p_dark_cycle <= self.p_err_cycle < 1:
            raise ValueError(
                f"Exige 0 <= p_dark ({self.p_dark_cycle}) <= p_err ({self.p_err_cycle}) < 1"
            )
        if not 0 <= self.e_mod < 0.5:
            raise ValueError(f"e_mod deve estar em [0, 0.5) (recebido {self.e_mod})")
        if self.length_km < 0:
            raise ValueError(f"length_km deve ser >= 0 (recebido {self.length_km})")
        if self.alpha_db_per_km < 0:
            raise ValueError(f"alpha deve ser >= 0 (recebido {self.alpha_db_per_km})")
        if self.clock_hz <= 0:
            raise ValueError(f"clock_hz deve ser > 0 (recebido {self.clock_hz})")
        if not 0 < self.signal_fraction <= 1:
            raise ValueError(f"signal_fraction deve estar em (0, 1] (recebido {self.signal_fraction})")

    @property
    def p_stray_cycle(self) -> float:
        """Parcela de P_e devida à luz espúria do laser de relógio"""
        return self.p_err_cycle - self.p_dark_cycle

    @property
    def signal_mu(self) -> float:
        """Fótons por pulso no pulso codificado (metadado; a visibilidade usa mu total)"""
        return self.mu * self.signal_fraction

    def with_length(self, length_km: float) -> 'LinkParams':
        return replace(self, length_km=length_km)

    def with_changes(self, **changes) -> 'LinkParams':
        return replace(self, **changes)



def as_built_params(length_km: float = 122.0, alpha_db_per_km: float = AS_BUILT_ALPHA_MEASURED) -> LinkParams:
    """Sistema como construído (alpha medido 0.21 dB/km por padrão)"""
    return LinkParams(length_km=length_km, alpha_db_per_km=alpha_db_per_km)


def improved_params(length_km: float = 165.0) -> LinkParams:
    """
    Sistema melhorado: luz espúria removida (P_e = apenas contagens escuras),
    sem erros de modulação e atenuação especificada de 0.2 dB/km.
    """
    return LinkParams(
        length_km=length_km,
        alpha_db_per_km=AS_BUILT_ALPHA_SPECIFIED,
        p_err_cycle=AS_BUILT_P_DARK,
        p_dark_cycle=AS_BUILT_P_DARK,
        e_mod=0.0,
    )


def _unwrap(value):
    """Escalares voltam como float; arrays permanecem arrays"""
    return float(value) if np.ndim(value) == 0 else value


def _ratio(numerator, denominator, when_empty: float):
    numerator = np.asarray(numerator, dtype=float)
    denominator = np.asarray(denominator, dtype=float)
    safe = np.where(denominator > 0, denominator, 1.0)
    return _unwrap(np.where(denominator > 0, numerator / safe, when_empty))


def transmittance(alpha_db_per_km, length_km):
    """Atenuação da fibra 10^(-alpha L / 10)"""
    return _unwrap(np.power(10.0, -np.multiply(alpha_db_per_km, length_km, dtype=float) / 10.0))


def signal_rate_per_cycle(params: LinkParams, length_km=None):
    """R = mu * 10^(-alpha L/10) * eta_Bob, probabilidade de clique de sinal por ciclo"""
    length = params.length_km if length_km is None else length_km
    return _unwrap(params.mu * np.asarray(transmittance(params.alpha_db_per_km, length)) * params.eta_bob)


def visibility_model(params: LinkParams, length_km=None):
    """Visibilidade de interferência quântica R / (R + 2 P_e)"""
    rate = signal_rate_per_cycle(params, length_km)
    # R = P_e = 0: sem contagens, adotamos visibilidade perfeita
    return _ratio(rate, np.add(rate, 2.0 * params.p_err_cycle), 1.0)


def qber_model(params: LinkParams, length_km=None):
    """QBER apenas por contagens errôneas: 0.5 P_e / (0.5 R + P_e)"""
    return _qber(params, 0.0, length_km)


def qber_model_extended(params: LinkParams, length_km=None):
    """QBER com erros de modulação: (e_mod 0.5 R + 0.5 P_e) / (0.5 R + P_e)"""
    return _qber(params, params.e_mod, length_km)


def _qber(params: LinkParams, e_mod: float, length_km):
    rate = np.asarray(signal_rate_per_cycle(params, length_km))
    numerator = e_mod * 0.5 * rate + 0.5 * params.p_err_cycle
    denominator = 0.5 * rate + params.p_err_cycle
    return _ratio(numerator, denominator, 0.0)


def sifted_rate_model(params: LinkParams, length_km=None):
    """Taxa de bits peneirados (bits/s): clock * (0.5 R + P_e)"""
    rate = np.asarray(signal_rate_per_cycle(params, length_km))
    return _unwrap(params.clock_hz * (0.5 * rate + params.p_err_cycle))


def visibility_to_qber(v: float) -> float:
    """Aproximação e = (1 - V) / 2"""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"Visibilidade fora de [0, 1]: {v}")
    return (1.0 - v) / 2.0


def nep(detector_efficiency: float, dark_rate_per_s: float,
        wavelength_m: float = TELECOM_WAVELENGTH_M) -> float:
    """
    Potência equivalente de ruído (W/Hz^1/2) = (h c / (lambda eta)) * sqrt(2 D).

    Diagnóstico apenas; a convenção usada pelo experimento não é informada.
    """
    if not 0.0 < detector_efficiency <= 1.0:
        raise ValueError(f"Eficiência do detector fora de (0, 1]: {detector_efficiency}")
    if dark_rate_per_s < 0:
        raise ValueError(f"Taxa de contagens escuras negativa: {dark_rate_per_s}")
    photon_energy = constants.h * constants.c / wavelength_m
    return (photon_energy / detector_efficiency) * float(np.sqrt(2.0 * dark_rate_per_s))


def dark_rate_from_gate_probability(p_per_ns: float) -> float:
    """Converte probabilidade de contagem escura por ns em taxa por segundo"""
    return p_per_ns * 1e9
