#!/usr/bin/env python3
"""
Simulador QKD BB84 em fibra

Executa varreduras do modelo fechado (visibilidade, QBER e taxas em função do
comprimento da fibra), sessões BB84 completas de ponta a ponta (no mesmo
processo ou em dois processos via TCP) e a análise de alcance e segurança.

Dependências:
    pip install numpy scipy pandas

Uso:
    python qkd_sim_app.py model-sweep --lengths 0:170:5 --out curvas.csv
    python qkd_sim_app.py simulate --length-km 122 --seed 7 --out sessao.csv
    python qkd_sim_app.py simulate --lengths 5,50,100 --seed 7 --out varredura.csv
    python qkd_sim_app.py serve --transport tcp:0.0.0.0:9000 --seed 7
    python qkd_sim_app.py connect --transport tcp:127.0.0.1:9000 --seed 7 --out sessao.csv
    python qkd_sim_app.py analyze
"""

import argparse
import configparser
import datetime
import hashlib
import json
import math
import os
import sys
import threading
from dataclasses import asdict, dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bb84_session import SessionConfig, SessionOutcome, run_session
from classical_wire import WireError, connect_tcp, inproc_pair, listen_tcp, parse_transport
from config import Config, ConfigError, get_config, get_log_settings, get_wire_settings, load_run_file
from event_sim import (AttackConfig, DriftState, QuantumRun, SimOptions, parse_attack,
                       run_quantum_layer, spawn_streams)
from link_model import (LinkParams, improved_params, qber_model, qber_model_extended,
                        sifted_rate_model, transmittance, visibility_model, visibility_to_qber)
from logging_config import (get_logger, log_analysis_result, log_error_with_context, log_function,
                            log_performance, setup_enhanced_logging)
from privacy_amp import QBER_THRESHOLD
from security_analysis import (MEASURED_VISIBILITY_165_8_KM, QUOTED_PNS_LIMIT_KM, RangeError,
                               multiphoton_tagged_fraction, p_multiphoton, pns_range_limit,
                               predicted_final_rate, predicted_key_fraction, solve_max_range, verdict)

logger = get_logger('qkd_sim')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ANALYSIS = 3
EXIT_INFRA = 4

REPORT_COLUMNS = [
    'length_km', 'transmittance', 'visibility_pred', 'qber_pred', 'qber_measured',
    'sifted_bits', 'sifted_rate_bps', 'leak_bits', 'final_bits', 'final_rate_bps',
    'qber_ok', 'pns_ok', 'seed',
]
MODEL_COLUMNS = [
    'length_km', 'transmittance', 'visibility_pred', 'qber_noise_only', 'qber_pred',
    'sifted_rate_bps', 'final_rate_bps', 'pns_ok',
]
FLOAT_FORMAT = '%.6g'
DEFAULT_SWEEP_LENGTHS = '0:170:5'

# Chave do arquivo de execução / opção -> conversor
RUN_KEYS: Dict[str, Callable[[str], Any]] = {}

# Chave do arquivo de execução -> campo de LinkParams
LINK_FIELDS = {
    'mu': 'mu',
    'alpha': 'alpha_db_per_km',
    'length_km': 'length_km',
    'eta_bob': 'eta_bob',
    'pe': 'p_err_cycle',
    'dark': 'p_dark_cycle',
    'emod': 'e_mod',
    'clock_hz': 'clock_hz',
    'gate_ns': 'gate_ns',
    'signal_fraction': 'signal_fraction',
    'wavelength_m': 'wavelength_m',
}


def _to_bool(raw: str) -> bool:
    value = str(raw).strip().lower()
    if value not in configparser.ConfigParser.BOOLEAN_STATES:
        raise ValueError(f"valor booleano inválido: '{raw}'")
    return configparser.ConfigParser.BOOLEAN_STATES[value]


def _to_count(raw: str) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"esperado inteiro: '{raw}'")
    return int(value)


RUN_KEYS.update({key: float for key in LINK_FIELDS})
RUN_KEYS.update({
    'duration_s': float,
    'cycles': _to_count,
    'seed': int,
    'sim_mode': str,
    'attack': str,
    'sample_fraction': float,
    'safety_bits': int,
    'transport': str,
    'out': str,
    'lengths': str,
    'noise_sifting': str,
    'interferometer_visibility': float,
    'drift': _to_bool,
    'unconditional': _to_bool,
    'improved': _to_bool,
})


def _coerce(layer: Dict[str, Any], source: str) -> Dict[str, Any]:
    values = {}
    for key, raw in layer.items():
        if raw is None:
            continue
        if key not in RUN_KEYS:
            raise ConfigError(f"Chave desconhecida '{key}' em {source}")
        if isinstance(raw, str):
            try:
                raw = RUN_KEYS[key](raw)
            except ValueError as e:
                raise ConfigError(f"Valor inválido para '{key}' em {source}: {e}") from e
        values[key] = raw
    if 'cycles' in values and 'duration_s' in values:
        raise ConfigError(f"Use cycles ou duration_s, não ambos ({source})")
    return values


def _ini_layer(cfg: Config) -> Dict[str, str]:
    layer = {key: cfg.get('LINK', key) for key in LINK_FIELDS if cfg.get('LINK', key)}
    for key in ('sim_mode', 'duration_s', 'noise_sifting', 'drift', 'interferometer_visibility'):
        if cfg.get('SIMULATION', key):
            layer[key] = cfg.get('SIMULATION', key)
    for key in ('sample_fraction', 'safety_bits', 'unconditional'):
        if cfg.get('PROTOCOL', key):
            layer[key] = cfg.get('PROTOCOL', key)
    return layer


def parse_lengths(spec: str) -> List[float]:
    """'a:b:passo' (inclusivo) ou 'l1,l2,...' -> lista crescente de comprimentos"""
    spec = spec.strip()
    try:
        if ':' in spec:
            parts = [float(p) for p in spec.split(':')]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError("use a:b:passo com passo > 0")
            start, stop, step = parts
            lengths = np.round(np.arange(start, stop + step / 2.0, step), 9).tolist()
        else:
            lengths = [float(p) for p in spec.split(',') if p.strip()]
    except ValueError as e:
        raise ConfigError(f"Lista de comprimentos inválida '{spec}': {e}") from e
    if not lengths:
        raise ConfigError("Lista de comprimentos vazia")
    if any(length < 0 for length in lengths):
        raise ConfigError("Comprimentos devem ser >= 0")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError("Comprimentos devem estar em ordem crescente")
    return lengths


class EndpointFailure(RuntimeError):
    """Exceção inesperada numa das threads de uma sessão em processo"""

    def __init__(self, role: str, error: BaseException):
        super().__init__(f"ponta {role}: {type(error).__name__}: {error}")
        self.role = role


@dataclass(frozen=True)
class RunConfig:
    """Configuração completa de uma execução (padrões INI < arquivo < opções)"""
    link: LinkParams
    n_cycles: int
    duration_s: float
    seed: Optional[int]
    sim_mode: str = 'aggregate'
    attack: AttackConfig = AttackConfig()
    sample_fraction: float = 0.1
    safety_bits: int = 30
    transport: str = 'inproc'
    out: Optional[str] = None
    lengths: Tuple[float, ...] = ()
    options: SimOptions = SimOptions()
    drift: bool = False
    unconditional: bool = False

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("Semente obrigatória (--seed) para sessões reproduzíveis")
        return self.seed

    def params(self, length_km: Optional[float] = None) -> LinkParams:
        return self.link if length_km is None else self.link.with_length(length_km)

    def digest(self, length_km: Optional[float] = None) -> bytes:
        """SHA-256 da forma canônica; transporte e saída não entram"""
        canonical = {
            'link': asdict(self.params(length_km)),
            'n_cycles': self.n_cycles,
            'seed': self.seed,
            'sim_mode': self.sim_mode,
            'attack': asdict(self.attack),
            'sample_fraction': self.sample_fraction,
            'safety_bits': self.safety_bits,
            'options': asdict(self.options),
            'drift': self.drift,
            'unconditional': self.unconditional,
        }
        text = json.dumps(canonical, sort_keys=True, default=repr)
        return hashlib.sha256(text.encode('utf-8')).digest()

    def session_config(self, cfg: Config, length_km: Optional[float] = None) -> SessionConfig:
        params = self.params(length_km)
        tagged = multiphoton_tagged_fraction(params) if self.unconditional else 0.0
        try:
            base = SessionConfig.from_config(
                cfg,
                session_id=f"qkd-{self.seed}-{params.length_km:g}km",
                sample_fraction=self.sample_fraction,
                safety_bits=self.safety_bits,
                tagged_fraction=tagged,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e
        combined = hashlib.sha256(self.digest(length_km) + base.digest()).digest()
        return replace(base, config_digest=combined)


def build_run_config(cfg: Config, run_file: Optional[str] = None,
                     flags: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Resolve as três camadas de configuração; ConfigError para valores inválidos"""
    layers = [_coerce(_ini_layer(cfg), cfg.config_file)]
    if run_file:
        layers.append(_coerce(load_run_file(run_file), run_file))
    layers.append(_coerce(flags or {}, 'linha de comando'))

    merged: Dict[str, Any] = {}
    for layer in layers:
        if 'cycles' in layer:
            merged.pop('duration_s', None)
        if 'duration_s' in layer:
            merged.pop('cycles', None)
        merged.update(layer)

    link_values = {key: merged[key] for key in LINK_FIELDS if key in merged}
    if merged.get('improved'):
        improved = asdict(improved_params())
        link_values.update({key: improved[name] for key, name in LINK_FIELDS.items()
                            if name in ('alpha_db_per_km', 'p_err_cycle', 'p_dark_cycle', 'e_mod')})
        for layer in layers[1:]:
            link_values.update({key: layer[key] for key in LINK_FIELDS if key in layer})
    try:
        link = LinkParams(**{LINK_FIELDS[key]: value for key, value in link_values.items()})
        attack = parse_attack(merged.get('attack', 'none'))
        options = SimOptions(merged.get('noise_sifting', 'two_output'), merged.get('interferometer_visibility', 1.0))
        transport = merged.get('transport', 'inproc')
        parse_transport(transport)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    sim_mode = merged.get('sim_mode', 'aggregate')
    if sim_mode not in ('exact', 'aggregate'):
        raise ConfigError(f"sim_mode deve ser exact ou aggregate (recebido '{sim_mode}')")
    if 'cycles' in merged:
        n_cycles = merged['cycles']
        duration_s = n_cycles / link.clock_hz
    else:
        duration_s = merged.get('duration_s', 120.0)
        n_cycles = int(round(duration_s * link.clock_hz))
    if n_cycles < 1:
        raise ConfigError("A execução precisa de pelo menos um ciclo de relógio")
    if not 0.0 < merged.get('sample_fraction', 0.1) < 1.0:
        raise ConfigError("sample_fraction deve estar em (0, 1)")
    if merged.get('safety_bits', 30) < 0:
        raise ConfigError("safety_bits não pode ser negativo")

    lengths = tuple(parse_lengths(merged['lengths'])) if 'lengths' in merged else ()
    return RunConfig(
        link=link,
        n_cycles=n_cycles,
        duration_s=duration_s,
        seed=merged.get('seed'),
        sim_mode=sim_mode,
        attack=attack,
        sample_fraction=merged.get('sample_fraction', 0.1),
        safety_bits=merged.get('safety_bits', 30),
        transport=transport,
        out=merged.get('out'),
        lengths=lengths,
        options=options,
        drift=merged.get('drift', False),
        unconditional=merged.get('unconditional', False),
    )


# Camada quântica e sessões

def _quantum_run(run: RunConfig, params: LinkParams, seed_seq) -> QuantumRun:
    drift = DriftState() if run.drift and run.sim_mode == 'exact' else None
    return run_quantum_layer(params, run.n_cycles, run.sim_mode, seed_seq, drift, run.attack, run.options)


@log_function('qkd_sim.app')
def run_inproc(run: RunConfig, cfg: Config, length_km: Optional[float] = None
               ) -> Tuple[QuantumRun, SessionOutcome, SessionOutcome]:
    """Sessão completa com Alice e Bob em duas threads ligadas por um par de sockets"""
    params = run.params(length_km)
    quantum_seq, alice_seq, bob_seq = spawn_streams(run.require_seed())
    quantum = _quantum_run(run, params, quantum_seq)
    session = run.session_config(cfg, length_km)
    timeout, max_payload = get_wire_settings(cfg)

    alice_channel, bob_channel = inproc_pair(timeout, max_payload)
    outcomes: Dict[str, SessionOutcome] = {}
    failures: Dict[str, BaseException] = {}

    def _endpoint(role, record, channel, seed_seq):
        try:
            with channel:
                outcomes[role] = run_session(role, record, channel, session, seed_seq)
        except Exception as e:
            failures[role] = e

    threads = [
        threading.Thread(target=_endpoint, args=('alice', quantum.alice, alice_channel, alice_seq), name='alice'),
        threading.Thread(target=_endpoint, args=('bob', quantum.bob, bob_channel, bob_seq), name='bob'),
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    if failures:
        role, error = next(iter(failures.items()))
        log_error_with_context(error, f"sessão {role}")
        if isinstance(error, (WireError, OSError)):
            raise error
        raise EndpointFailure(role, error) from error
    return quantum, outcomes['alice'], outcomes['bob']


@log_function('qkd_sim.app')
def serve_session(run: RunConfig, cfg: Config,
                  on_listening: Optional[Callable[[int], None]] = None) -> SessionOutcome:
    """Ponta de Alice no modo TCP: aceita uma conexão e executa a sessão"""
    kind, host, port = parse_transport(run.transport)
    if kind != 'tcp':
        raise ConfigError("serve exige --transport tcp:host:port")
    quantum_seq, alice_seq, _ = spawn_streams(run.require_seed())
    quantum = _quantum_run(run, run.link, quantum_seq)
    session = run.session_config(cfg)
    timeout, max_payload = get_wire_settings(cfg)
    with listen_tcp(host, port, timeout, max_payload, on_listening=on_listening) as channel:
        return run_session('alice', quantum.alice, channel, session, alice_seq)


@log_function('qkd_sim.app')
def connect_session(run: RunConfig, cfg: Config) -> Tuple[QuantumRun, SessionOutcome]:
    """Ponta de Bob no modo TCP"""
    kind, host, port = parse_transport(run.transport)
    if kind != 'tcp':
        raise ConfigError("connect exige --transport tcp:host:port")
    quantum_seq, _, bob_seq = spawn_streams(run.require_seed())
    quantum = _quantum_run(run, run.link, quantum_seq)
    session = run.session_config(cfg)
    timeout, max_payload = get_wire_settings(cfg)
    with connect_tcp(host, port, timeout, max_payload) as channel:
        return quantum, run_session('bob', quantum.bob, channel, session, bob_seq)


# Relatórios

def report_row(run: RunConfig, params: LinkParams, bob: SessionOutcome,
               qber_threshold: float = QBER_THRESHOLD) -> Dict[str, Any]:
    """Linha do relatório a partir do resultado de Bob (quem mede o QBER final)"""
    stats = bob.stats
    qber_measured = stats.get('qber_measured', stats.get('qber_estimate', math.nan))
    sifted_bits = int(stats.get('n_sifted', 0))
    final_bits = bob.secret.m if bob.completed else 0
    return {
        'length_km': params.length_km,
        'transmittance': transmittance(params.alpha_db_per_km, params.length_km),
        'visibility_pred': visibility_model(params),
        'qber_pred': qber_model_extended(params),
        'qber_measured': qber_measured,
        'sifted_bits': sifted_bits,
        'sifted_rate_bps': sifted_bits / run.duration_s,
        'leak_bits': bob.ledger.key_leak,
        'final_bits': final_bits,
        'final_rate_bps': final_bits / run.duration_s,
        # NaN (aborto antes da estimativa) compara como falso
        'qber_ok': bool(qber_measured < qber_threshold),
        'pns_ok': bool(params.mu == 0 or params.length_km <= pns_range_limit(params)),
        'seed': run.seed,
    }


def _threshold(cfg: Config) -> float:
    return cfg.getfloat('PROTOCOL', 'qber_threshold', QBER_THRESHOLD)


def report_frame(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=REPORT_COLUMNS)


def model_sweep_frame(params: LinkParams, lengths: Sequence[float]) -> pd.DataFrame:
    """Colunas do modelo fechado para cada comprimento (sem sorteios)"""
    lengths = np.asarray(lengths, dtype=float)
    pns_limit = pns_range_limit(params) if params.mu > 0 else math.inf
    frame = pd.DataFrame({
        'length_km': lengths,
        'transmittance': transmittance(params.alpha_db_per_km, lengths),
        'visibility_pred': visibility_model(params, lengths),
        'qber_noise_only': qber_model(params, lengths),
        'qber_pred': qber_model_extended(params, lengths),
        'sifted_rate_bps': sifted_rate_model(params, lengths),
        'final_rate_bps': predicted_final_rate(params, lengths),
        'pns_ok': lengths <= pns_limit,
    })
    return frame[MODEL_COLUMNS]


def write_frame(frame: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"Relatório exportado para {out} ({len(frame)} linhas)")
    else:
        frame.to_csv(sys.stdout, index=False, float_format=FLOAT_FORMAT)


def key_path(out: str, role: str, length_km: Optional[float] = None) -> str:
    base = os.path.splitext(out)[0]
    if length_km is not None:
        base = f"{base}.{length_km:g}km"
    return f"{base}.{role}.key"


def write_key(outcome: SessionOutcome, path: str) -> None:
    with open(path, 'w', encoding='ascii') as f:
        f.write(outcome.secret.to_text())
    logger.info(f"Chave de {outcome.role} ({outcome.secret.m} bits) gravada em {path}")


def _describe(outcome: SessionOutcome, length_km: float) -> str:
    if outcome.completed:
        return f"{length_km:g} km: chave de {outcome.secret.m} bits"
    origin = ' (par)' if outcome.remote_abort else ''
    return f"{length_km:g} km: sessão abortada: {outcome.abort_reason.label}{origin}"


# Comandos

def cmd_model_sweep(run: RunConfig, cfg: Config) -> int:
    lengths = run.lengths or tuple(parse_lengths(DEFAULT_SWEEP_LENGTHS))
    start_time = datetime.datetime.now()
    frame = model_sweep_frame(run.link, lengths)
    write_frame(frame, run.out)
    log_analysis_result('varredura do modelo', len(frame),
                        (datetime.datetime.now() - start_time).total_seconds())
    return EXIT_OK


def cmd_simulate(run: RunConfig, cfg: Config) -> int:
    if parse_transport(run.transport)[0] != 'inproc':
        raise ConfigError("simulate usa transporte inproc; para TCP use serve/connect")
    lengths = run.lengths or (run.link.length_km,)
    sweep = len(lengths) > 1
    rows = []
    for length in lengths:
        start_time = datetime.datetime.now()
        _, alice, bob = run_inproc(run, cfg, length)
        rows.append(report_row(run, run.params(length), bob, _threshold(cfg)))
        print(_describe(bob, length), file=sys.stderr)
        if run.out and alice.completed and bob.completed:
            write_key(alice, key_path(run.out, 'alice', length if sweep else None))
            write_key(bob, key_path(run.out, 'bob', length if sweep else None))
        log_performance('simulate', (datetime.datetime.now() - start_time).total_seconds(),
                        f"{length:g} km, {run.n_cycles} ciclos ({run.sim_mode})")
    write_frame(report_frame(rows), run.out)
    return EXIT_OK


def _single_length(run: RunConfig, command: str) -> RunConfig:
    if len(run.lengths) > 1:
        raise ConfigError(f"{command} executa um único comprimento; use --length-km")
    if run.lengths:
        return replace(run, link=run.link.with_length(run.lengths[0]), lengths=())
    return run


def cmd_serve(run: RunConfig, cfg: Config) -> int:
    run = _single_length(run, 'serve')
    outcome = serve_session(run, cfg, on_listening=lambda port: print(f"Aguardando Bob na porta {port}",
                                                                    file=sys.stderr, flush=True))
    print(_describe(outcome, run.link.length_km), file=sys.stderr)
    if run.out and outcome.completed:
        write_key(outcome, key_path(run.out, 'alice'))
    return EXIT_OK


def cmd_connect(run: RunConfig, cfg: Config) -> int:
    run = _single_length(run, 'connect')
    _, outcome = connect_session(run, cfg)
    print(_describe(outcome, run.link.length_km), file=sys.stderr)
    if run.out and outcome.completed:
        write_key(outcome, key_path(run.out, 'bob'))
    write_frame(report_frame([report_row(run, run.link, outcome, _threshold(cfg))]), run.out)
    return EXIT_OK


def analysis_lines(params: LinkParams) -> List[str]:
    """Relatório de alcance e segurança; RangeError se inseguro já em L = 0"""
    max_range = solve_max_range(params)
    improved_range = solve_max_range(improved_params())
    qber_here = qber_model_extended(params)
    pns_limit = pns_range_limit(params) if params.mu > 0 else math.inf
    lines = [
        f"Enlace: mu={params.mu:g}, alpha={params.alpha_db_per_km:g} dB/km, "
        f"eta_Bob={params.eta_bob:g}, P_e={params.p_err_cycle:g}, e_mod={params.e_mod:g}",
        f"Em {params.length_km:g} km: visibilidade {visibility_model(params):.4f}, "
        f"QBER previsto {qber_here:.4f}",
        f"Alcance máximo (QBER 11%): {max_range:.1f} km",
        f"Alcance do sistema melhorado: {improved_range:.1f} km",
    ]
    if params.mu > 0:
        lines.append(f"Probabilidade multifóton: {p_multiphoton(params.mu):.4e}; "
                     f"limite PNS: {pns_limit:.1f} km (citado ~{QUOTED_PNS_LIMIT_KM:.0f} km)")
    if qber_here < 0.5:
        lines.append(f"Fração de chave prevista: {predicted_key_fraction(qber_here):.4f}; "
                     f"taxa final prevista: {predicted_final_rate(params):.2f} bits/s")
    lines.append(f"Registro em 165.8 km: visibilidade {MEASURED_VISIBILITY_165_8_KM:.0%} "
                 f"-> QBER {visibility_to_qber(MEASURED_VISIBILITY_165_8_KM):.1%}")
    result = verdict(qber_here, params)
    lines.append(f"Veredicto: qber_ok={result.qber_ok}, pns_ok={result.pns_ok}")
    lines.extend(f"  - {note}" for note in result.notes)
    return lines


def cmd_analyze(run: RunConfig, cfg: Config) -> int:
    lines = analysis_lines(run.link)
    print('\n'.join(lines))
    log_analysis_result('alcance', len(lines))
    return EXIT_OK


COMMANDS = {
    'model-sweep': (cmd_model_sweep, 'Curvas do modelo fechado (visibilidade, QBER, taxas) em CSV'),
    'simulate': (cmd_simulate, 'Sessão BB84 completa no mesmo processo (uma linha por comprimento)'),
    'serve': (cmd_serve, 'Ponta de Alice em TCP (aguarda a conexão de Bob)'),
    'connect': (cmd_connect, 'Ponta de Bob em TCP (grava o relatório)'),
    'analyze': (cmd_analyze, 'Alcance máximo, limite PNS e veredictos'),
}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', metavar='ARQUIVO', help='Arquivo de execução chave=valor (opções prevalecem)')
    parser.add_argument('--length-km', type=float, help='Comprimento da fibra (km)')
    parser.add_argument('--lengths', help='Comprimentos: a:b:passo ou l1,l2,...')
    parser.add_argument('--alpha', type=float, help='Atenuação da fibra (dB/km)')
    parser.add_argument('--mu', type=float, help='Número médio de fótons por pulso')
    parser.add_argument('--eta-bob', type=float, help='Eficiência de detecção de Bob')
    parser.add_argument('--pe', type=float, help='Probabilidade de contagem errônea por ciclo')
    parser.add_argument('--dark', type=float, help='Probabilidade de contagem escura por ciclo')
    parser.add_argument('--emod', type=float, help='Taxa de erro de modulação')
    parser.add_argument('--clock-hz', type=float, help='Frequência do relógio (Hz)')
    duration = parser.add_mutually_exclusive_group()
    duration.add_argument('--duration-s', type=float, help='Duração da transmissão (s)')
    duration.add_argument('--cycles', type=_to_count, help='Número de ciclos de relógio')
    parser.add_argument('--seed', type=int, help='Semente da execução')
    parser.add_argument('--sim-mode', choices=['exact', 'aggregate'], help='Modo do amostrador')
    parser.add_argument('--attack', help='none ou intercept:<f>')
    parser.add_argument('--sample-fraction', type=float, help='Fração da chave usada para estimar o QBER')
    parser.add_argument('--safety-bits', type=int, help='Margem de segurança s da amplificação')
    parser.add_argument('--transport', help='inproc ou tcp:host:port')
    parser.add_argument('--out', help='Arquivo CSV de saída (chaves em <out>.alice.key / <out>.bob.key)')
    parser.add_argument('--noise-sifting', choices=['two_output', 'basis'], help='Convenção do ruído por ciclo')
    parser.add_argument('--drift', action='store_const', const=True, help='Deriva de fase (modo exato)')
    parser.add_argument('--unconditional', action='store_const', const=True,
                        help='Descontar pulsos multifótons na amplificação')
    parser.add_argument('--improved', action='store_const', const=True,
                        help='Parâmetros do sistema melhorado (sem luz espúria, e_mod=0, 0.2 dB/km)')


FLAG_KEYS = [
    'length_km', 'lengths', 'alpha', 'mu', 'eta_bob', 'pe', 'dark', 'emod', 'clock_hz', 'duration_s',
    'cycles', 'seed', 'sim_mode', 'attack', 'sample_fraction', 'safety_bits', 'transport', 'out',
    'noise_sifting', 'drift', 'unconditional', 'improved',
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Simulador QKD BB84 em fibra óptica')
    parser.add_argument('--log-level', default=None, help='Nível de log dos arquivos (DEBUG, INFO, ...)')
    parser.add_argument('--log-dir', default=None, help='Diretório dos arquivos de log')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, (_, help_text) in COMMANDS.items():
        _add_run_options(subparsers.add_parser(name, help=help_text))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = get_config()
    log_settings = get_log_settings()
    setup_enhanced_logging(args.log_level or log_settings['level'], log_settings['console_level'],
                           args.log_dir or log_settings['dir'])
    logger.debug(f"Configuração INI ({cfg.config_file}): {cfg.get_all_settings()}")

    handler = COMMANDS[args.command][0]
    flags = {key: getattr(args, key) for key in FLAG_KEYS}
    try:
        run = build_run_config(cfg, args.config, flags)
        return handler(run, cfg)
    except ConfigError as e:
        print(f"Erro de configuração: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RangeError as e:
        print(f"Erro de análise: {e}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (WireError, OSError, EndpointFailure) as e:
        log_error_with_context(e, args.command)
        print(f"Falha de infraestrutura: {e}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == '__main__':
    sys.exit(main())
