#!/usr/bin/env python3
"""
Testes Unitários do simulador QKD BB84 - canal clássico e protocolo

Cobre o codec de quadros, a reconciliação Cascade, as sessões BB84 entre
Alice e Bob (no mesmo processo e via TCP local) e os comandos da linha de
comando.

Execução:
    python -m unittest tests tests_protocol
"""

import contextlib
import io
import math
import os
import socket
import tempfile
import threading
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pandas as pd

from bb84_session import (AliceEndpoint, EncodingRecord, SessionConfig, SessionPhase, detection_records,
                          encode, encoding_records, estimate_qber, run_session, sample_size, sift)
from cascade_recon import (CascadeConfig, CascadeError, CascadeResponder, LeakLedger,
                           binary_search_error, block_parity, initial_block_size, run_cascade,
                           verify_hash)
from classical_wire import (HEADER, Abort, AbortReason, BasisMatch, CascadeParityReq, CascadeParityResp,
                            CascadeShuffle, Detections, Done, FrameChannel, Hello, MessageType, PASeed,
                            SampleBits, SampleRequest, VerifyHash, WireError, WireTap, decode_frame,
                            decode_varints, encode_frame, encode_varints, inproc_pair, pack_bits,
                            parse_transport, unpack_bits)
from config import Config, ConfigError
from event_sim import AliceRecord, parse_attack, run_quantum_layer, spawn_streams
from link_model import LinkParams, as_built_params
from privacy_amp import binary_entropy
import qkd_sim_app

REPORT_HEADER = ('length_km,transmittance,visibility_pred,qber_pred,qber_measured,sifted_bits,'
                 'sifted_rate_bps,leak_bits,final_bits,final_rate_bps,qber_ok,pns_ok,seed')

# Volume dos testes aleatórios; aumente via ambiente para execuções longas
FUZZ_CASES = int(os.getenv('QKD_SIM_FUZZ_CASES', '200000'))
SESSION_CASES = int(os.getenv('QKD_SIM_SESSION_CASES', '20'))
TCP_SESSION_CASES = int(os.getenv('QKD_SIM_TCP_CASES', '3'))


def quantum_records(params, n_cycles, seed, attack='none'):
    quantum_seq, alice_seq, bob_seq = spawn_streams(seed)
    run = run_quantum_layer(params, n_cycles, 'aggregate', quantum_seq, attack=parse_attack(attack))
    return run, alice_seq, bob_seq


def run_pair(run, alice_seq, bob_seq, alice_config, bob_config=None, tap=None, timeout_s=20.0, channels=None):
    """Executa Alice e Bob em duas threads sobre um par de sockets locais"""
    alice_channel, bob_channel = channels or inproc_pair(timeout_s, tap=tap)
    outcomes = {}

    def endpoint(role, record, channel, config, seed_seq):
        with channel:
            outcomes[role] = run_session(role, record, channel, config, seed_seq)

    threads = [
        threading.Thread(target=endpoint, args=('alice', run.alice, alice_channel, alice_config, alice_seq)),
        threading.Thread(target=endpoint, args=('bob', run.bob, bob_channel, bob_config or alice_config, bob_seq)),
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(600)
    return outcomes['alice'], outcomes['bob']


def random_bits(rng, size):
    return rng.integers(0, 2, size, dtype=np.uint8)


def random_message(msg_type, rng):
    """Instância aleatória válida de cada tipo de mensagem"""
    size = int(rng.integers(0, 300))
    if msg_type == MessageType.HELLO:
        return Hello(int(rng.integers(0, 1 << 16)), rng.bytes(32))
    if msg_type == MessageType.DETECTIONS:
        start = int(rng.integers(0, 1 << 40))
        cycles = start + np.cumsum(rng.integers(1, 1 << 20, size)) - 1
        return Detections(cycles.astype(np.int64), random_bits(rng, size))
    if msg_type == MessageType.BASIS_MATCH:
        return BasisMatch(random_bits(rng, size))
    if msg_type == MessageType.SAMPLE_REQUEST:
        return SampleRequest(rng.integers(0, 1 << 32, size, dtype=np.int64))
    if msg_type == MessageType.SAMPLE_BITS:
        return SampleBits(random_bits(rng, size))
    if msg_type == MessageType.CASCADE_SHUFFLE:
        return CascadeShuffle(int(rng.integers(0, 256)), int(rng.integers(0, 1 << 63)))
    if msg_type == MessageType.CASCADE_PARITY_REQ:
        starts = rng.integers(0, (1 << 32) - 2, size, dtype=np.int64)
        ends = starts + rng.integers(1, 1 << 16, size, dtype=np.int64)
        ends = np.minimum(ends, (1 << 32) - 1)
        passes = rng.integers(0, 256, size, dtype=np.int64)
        return CascadeParityReq(np.stack([passes, starts, ends], axis=1))
    if msg_type == MessageType.CASCADE_PARITY_RESP:
        return CascadeParityResp(random_bits(rng, size))
    if msg_type == MessageType.PA_SEED:
        return PASeed(int(rng.integers(0, 1 << 32)), random_bits(rng, size))
    if msg_type == MessageType.VERIFY_HASH:
        return VerifyHash(int(rng.integers(0, 1 << 63)), int(rng.integers(0, 1 << 63)) * 2 + 1)
    if msg_type == MessageType.ABORT:
        return Abort(AbortReason(int(rng.choice([r.value for r in AbortReason]))))
    if msg_type == MessageType.DONE:
        return Done(rng.bytes(32))
    raise ValueError(msg_type)


class TestWireCodec(unittest.TestCase):
    """Testes do formato de quadros"""

    def test_abort_golden_vector(self):
        frame = encode_frame(Abort(AbortReason.PROTOCOL_ERROR))
        self.assertEqual(frame, bytes.fromhex('514B44310B0000000101'))
        self.assertEqual(decode_frame(frame), Abort(AbortReason.PROTOCOL_ERROR))

    def test_header_layout(self):
        frame = encode_frame(Done(b'\x07' * 32))
        self.assertEqual(frame[:4], b'QKD1')
        self.assertEqual(frame[4], MessageType.DONE)
        self.assertEqual(int.from_bytes(frame[5:9], 'big'), 32)

    def test_detections_frame(self):
        msg = Detections(np.array([3, 4, 300, 70_000], dtype=np.int64), np.array([0, 1, 1, 0], dtype=np.uint8))
        decoded = decode_frame(encode_frame(msg))
        self.assertEqual(decoded, msg)

    def test_varints(self):
        values = np.array([0, 127, 128, 300, 2 ** 35, 2 ** 63], dtype=np.uint64)
        data = encode_varints(values)
        self.assertEqual(encode_varints([300]), b'\xac\x02')
        decoded, used = decode_varints(data + b'\xff', len(values))
        np.testing.assert_array_equal(decoded, values)
        self.assertEqual(used, len(data))

    def test_bit_packing(self):
        self.assertEqual(pack_bits([1, 0, 1]), b'\x05\xa0')
        np.testing.assert_array_equal(unpack_bits(b'\x05\xa0'), [1, 0, 1])
        with self.assertRaises(ValueError):
            unpack_bits(b'\x05\xa1')
        with self.assertRaises(ValueError):
            pack_bits([0, 2])

    def test_error_codes(self):
        valid = encode_frame(SampleRequest(np.array([1, 5, 9])))
        cases = {
            'bad_magic': b'QKX1' + valid[4:],
            'truncated': valid[:-2],
            'unknown_type': valid[:4] + b'\x7f' + valid[5:],
            'malformed': valid + b'\x00',
        }
        for code, data in cases.items():
            with self.subTest(code=code):
                with self.assertRaises(WireError) as ctx:
                    decode_frame(data)
                self.assertEqual(ctx.exception.code, code)
        oversize = HEADER.pack(b'QKD1', MessageType.DONE, 1 << 25)
        with self.assertRaises(WireError) as ctx:
            decode_frame(oversize)
        self.assertEqual(ctx.exception.code, 'oversize')

    def test_encode_rejects_invalid_messages(self):
        with self.assertRaises(WireError):
            encode_frame(VerifyHash(1, 1 << 64))
        with self.assertRaises(WireError):
            encode_frame(Hello(1, b'curto'))
        with self.assertRaises(WireError):
            encode_frame(CascadeParityReq(np.array([[0, 5, 5]])))

    def test_round_trip_all_message_types(self):
        rng = np.random.default_rng(31)
        for msg_type in MessageType:
            for _ in range(50):
                msg = random_message(msg_type, rng)
                with self.subTest(msg_type=msg_type.name):
                    frame = encode_frame(msg)
                    self.assertEqual(frame[4], msg_type)
                    self.assertEqual(decode_frame(frame), msg)

    def test_fuzz_never_crashes(self):
        """Entradas aleatórias e quadros mutados só produzem WireError"""
        rng = np.random.default_rng(2024)
        seeds = [encode_frame(random_message(msg_type, rng)) for msg_type in MessageType for _ in range(3)]
        for i in range(FUZZ_CASES):
            if i % 2:
                data = bytearray(seeds[i % len(seeds)])
                for pos in rng.integers(0, len(data), rng.integers(1, 4)):
                    data[pos] = int(rng.integers(0, 256))
                data = bytes(data[:int(rng.integers(0, len(data) + 1))])
            else:
                body = rng.integers(0, 256, int(rng.integers(0, 40)), dtype=np.uint8).tobytes()
                data = b'QKD1' + bytes([int(rng.integers(0, 14))]) + len(body).to_bytes(4, 'big') + body
            try:
                decode_frame(data)
            except WireError:
                pass

    def test_parse_transport(self):
        self.assertEqual(parse_transport('inproc'), ('inproc', None, None))
        self.assertEqual(parse_transport('tcp:127.0.0.1:9000'), ('tcp', '127.0.0.1', 9000))
        for bad in ('udp:1:2', 'tcp:host', 'tcp:host:porta', 'tcp:host:70000'):
            with self.assertRaises(ValueError):
                parse_transport(bad)

    def test_channel_errors(self):
        left, right = inproc_pair(timeout_s=0.2)
        with self.assertRaises(WireError) as ctx:
            left.recv()
        self.assertEqual(ctx.exception.code, 'timeout')
        right.close()
        with self.assertRaises(WireError) as ctx:
            left.recv()
        self.assertEqual(ctx.exception.code, 'channel_closed')
        left.close()


class TestCascade(unittest.TestCase):
    """Testes da reconciliação"""

    def test_block_parity_and_sizes(self):
        self.assertEqual(block_parity([1, 1, 0, 1]), 1)
        self.assertEqual(block_parity([1, 1, 0, 1], 0, 2), 0)
        self.assertEqual(initial_block_size(0.03, 10_000), 25)
        self.assertEqual(initial_block_size(0.0, 100), 50)
        self.assertEqual(initial_block_size(0.5, 100), 4)
        with self.assertRaises(CascadeError):
            initial_block_size(0.03, 6)

    def test_binary_search_error(self):
        alice = np.zeros(37, dtype=np.uint8)
        bob = alice.copy()
        bob[21] = 1
        ledger = LeakLedger()
        index, exchanges = binary_search_error(alice, bob, ledger)
        self.assertEqual(index, 21)
        self.assertEqual(ledger.parity_bits_disclosed, exchanges)
        self.assertLessEqual(exchanges, 6)
        with self.assertRaises(ValueError):
            binary_search_error(alice, alice)

    def test_cascade_corrects_planted_errors(self):
        """n = 10^4: correção completa e vazamento <= 1.5 n h(e)"""
        n = 10_000
        rng = np.random.default_rng(77)
        for e in (0.01, 0.03, 0.05, 0.08):
            failures = 0
            for trial in range(10):
                alice = rng.integers(0, 2, n, dtype=np.uint8)
                bob = alice.copy()
                bob[rng.choice(n, size=int(round(e * n)), replace=False)] ^= 1
                config = CascadeConfig().with_seeds(rng.integers(0, 2 ** 63, 3))
                result = run_cascade(bob, e, config, CascadeResponder(alice, config))
                if not np.array_equal(result.corrected_key, alice):
                    failures += 1
                    continue
                self.assertEqual(result.n_corrected, int(round(e * n)))
                self.assertLessEqual(result.ledger.parity_bits_disclosed, 1.5 * n * binary_entropy(e))
            with self.subTest(e=e):
                self.assertLessEqual(failures, 1)

    def test_error_free_key_leaks_only_top_parities(self):
        """Sem erros: paridades de topo menos o último bloco inferido de cada passada seguinte"""
        n = 10_000
        alice = np.random.default_rng(3).integers(0, 2, n, dtype=np.uint8)
        config = CascadeConfig().with_seeds([4, 5, 6])
        responder = CascadeResponder(alice, config)
        result = run_cascade(alice.copy(), 0.03, config, responder)
        k1 = initial_block_size(0.03, n)
        expected = sum(math.ceil(n / (k1 << p)) for p in range(config.n_passes)) - (config.n_passes - 1)
        self.assertEqual(result.n_corrected, 0)
        self.assertEqual(result.ledger.parity_bits_disclosed, expected)
        self.assertEqual(responder.answered, expected)
        self.assertEqual(result.parities_reused, config.n_passes - 1)

    def test_known_parities_are_not_requested_again(self):
        n = 4000
        rng = np.random.default_rng(8)
        alice = rng.integers(0, 2, n, dtype=np.uint8)
        bob = alice.copy()
        bob[rng.choice(n, size=320, replace=False)] ^= 1
        config = CascadeConfig().with_seeds([9, 10, 11])
        responder = CascadeResponder(alice, config)
        requested = []

        class RecordingOracle:
            def parities(self, ranges):
                requested.extend(map(tuple, np.asarray(ranges).tolist()))
                return responder.parities(ranges)

        result = run_cascade(bob, 0.08, config, RecordingOracle())
        self.assertEqual(len(requested), len(set(requested)))
        self.assertEqual(result.ledger.parity_bits_disclosed, len(requested))
        self.assertEqual(responder.answered, len(requested))
        self.assertGreater(result.parities_reused, config.n_passes - 1)

    def test_responder_counts_and_validates(self):
        alice = np.random.default_rng(1).integers(0, 2, 64, dtype=np.uint8)
        config = CascadeConfig().with_seeds([1, 2, 3])
        responder = CascadeResponder(alice, config)
        parities = responder.parities(np.array([[0, 0, 64], [0, 3, 4]]))
        self.assertEqual(parities[0], block_parity(alice))
        self.assertEqual(parities[1], alice[3])
        self.assertEqual(responder.answered, 2)
        with self.assertRaises(CascadeError):
            responder.parities(np.array([[4, 0, 8]]))
        with self.assertRaises(CascadeError):
            responder.parities(np.array([[0, 0, 65]]))

    def test_verify_hash(self):
        key = np.random.default_rng(5).integers(0, 2, 2000, dtype=np.uint8)
        other = key.copy()
        other[1234] ^= 1
        self.assertEqual(verify_hash(key, 99), verify_hash(key.copy(), 99))
        self.assertNotEqual(verify_hash(key, 99), verify_hash(other, 99))
        self.assertLess(verify_hash(key, 7), 1 << 50)

    def test_ledger_is_monotone(self):
        ledger = LeakLedger()
        ledger.add_parities(10)
        ledger.add_sample(5)
        ledger.add_verify(50)
        self.assertEqual(ledger.key_leak, 60)
        self.assertEqual(ledger.total, 65)
        with self.assertRaises(ValueError):
            ledger.add_parities(-1)


class TestSessionHelpers(unittest.TestCase):
    """Testes das funções auxiliares de sessão"""

    def test_encode(self):
        self.assertAlmostEqual(encode(0, 'Z'), 0.0)
        self.assertAlmostEqual(encode(1, 'Z'), np.pi)
        self.assertAlmostEqual(encode(0, 'X'), np.pi / 2)
        self.assertAlmostEqual(encode(1, 1), 3 * np.pi / 2)
        with self.assertRaises(ValueError):
            encode(2, 'Z')

    def test_sift(self):
        alice = AliceRecord(10, np.arange(10), np.zeros(10, dtype=np.uint8),
                            np.array([0, 1] * 5, dtype=np.uint8))
        kept, keep = sift(np.array([1, 2, 3, 4]), np.array([1, 1, 1, 0]), alice)
        np.testing.assert_array_equal(kept, [1, 3, 4])
        np.testing.assert_array_equal(keep, [True, False, True, True])

    def test_encoding_and_detection_records(self):
        run, _, _ = quantum_records(as_built_params(4.4), 200_000, 8)
        encodings = encoding_records(run.alice, [0, 1, 2])
        self.assertEqual([r.cycle_index for r in encodings], run.alice.cycles[:3].tolist())
        for record in encodings:
            self.assertAlmostEqual(record.phase, encode(record.bit, record.basis))
        detections = detection_records(run.bob)
        self.assertEqual(len(detections), len(run.bob.cycles))
        self.assertTrue(all(a.cycle_index < b.cycle_index for a, b in zip(detections, detections[1:])))
        with self.assertRaises(ValueError):
            EncodingRecord(5, 1, 0, 0.0)

    def test_sample_size(self):
        self.assertEqual(sample_size(10_000, 0.1), 1000)
        self.assertEqual(sample_size(1000, 0.1), 200)
        self.assertEqual(sample_size(300, 0.1), 150)

    def test_estimate_qber(self):
        alice = np.zeros(2000, dtype=np.uint8)
        bob = alice.copy()
        bob[::10] = 1
        estimate, positions = estimate_qber(alice, bob, 0.5, rng_seed=1)
        self.assertEqual(len(positions), 1000)
        self.assertAlmostEqual(estimate, 0.1, delta=0.03)

    def test_session_config_digest(self):
        base = SessionConfig()
        self.assertEqual(base.digest(), SessionConfig().digest())
        self.assertNotEqual(base.digest(), SessionConfig(sample_fraction=0.2).digest())
        with self.assertRaises(ValueError):
            SessionConfig(qber_threshold=0.2)


class TestSessions(unittest.TestCase):
    """Sessões completas entre Alice e Bob"""

    def test_completed_session_keys_and_ledger(self):
        """Chaves idênticas e registro de vazamento reconstruído do canal"""
        for seed in (1, 2, 3):
            with self.subTest(seed=seed):
                run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 10_000_000, seed)
                tap = WireTap()
                alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig(session_id=f's{seed}'), tap=tap)
                self.assertTrue(alice.completed and bob.completed)
                np.testing.assert_array_equal(alice.secret.bits, bob.secret.bits)
                rebuilt = LeakLedger.from_frames(tap.frames)
                for ledger in (alice.ledger, bob.ledger):
                    self.assertEqual(ledger, rebuilt)
                self.assertLessEqual(bob.secret.m, bob.stats['n_sifted'])

    def test_key_ratio_near_3_percent(self):
        run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 10_000_000, 11)
        _, bob = run_pair(run, alice_seq, bob_seq, SessionConfig())
        self.assertTrue(bob.completed)
        ratio = bob.secret.m / bob.stats['n_sifted']
        self.assertTrue(0.40 <= ratio <= 0.60, ratio)

    def test_122_km_link_completes(self):
        """
        Enlace de 122 km (alpha 0.21, QBER ~9%): chave final entre 3% e 15% da peneirada.

        Em 120 s só ~1.7 mil bits são peneirados e os ~280 bits fixos (amostra
        mínima, verificação e margem) consomem a chave; por isso a sessão
        acumula 40 min de relógio (4.8e9 ciclos, ~34 mil bits peneirados).
        """
        params = as_built_params(122.0)
        for seed in (31, 32, 33):
            with self.subTest(seed=seed):
                run, alice_seq, bob_seq = quantum_records(params, 4_800_000_000, seed)
                tap = WireTap()
                alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig(session_id=f'l122-{seed}'),
                                      tap=tap, timeout_s=60.0)
                self.assertTrue(alice.completed and bob.completed, (alice.abort_reason, bob.abort_reason))
                np.testing.assert_array_equal(alice.secret.bits, bob.secret.bits)
                ratio = bob.secret.m / bob.stats['n_sifted']
                self.assertTrue(0.03 <= ratio <= 0.15, ratio)
                self.assertEqual(bob.ledger, LeakLedger.from_frames(tap.frames))

    def test_configured_verify_bits(self):
        run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 10_000_000, 12)
        tap = WireTap()
        config = SessionConfig(session_id='v32', cascade=CascadeConfig(verify_bits=32))
        alice, bob = run_pair(run, alice_seq, bob_seq, config, tap=tap)
        self.assertTrue(alice.completed and bob.completed)
        rebuilt = LeakLedger.from_frames(tap.frames, 32)
        for ledger in (alice.ledger, bob.ledger):
            self.assertEqual(ledger.verify_bits_disclosed, 32)
            self.assertEqual(ledger, rebuilt)
        with self.assertRaises(ValueError):
            CascadeConfig(verify_bits=65)

    def test_unsendable_frame_notifies_peer(self):
        """Quadro acima do limite local: aborto de protocolo e ABORT entregue ao par"""
        run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 1_000_000, 20)
        left, right = socket.socketpair()
        channels = (FrameChannel(left, 'alice', 20.0), FrameChannel(right, 'bob', 20.0, max_payload=64))
        alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig(), channels=channels)
        self.assertEqual(bob.abort_reason, AbortReason.PROTOCOL_ERROR)
        self.assertFalse(bob.remote_abort)
        self.assertEqual(alice.abort_reason, AbortReason.PROTOCOL_ERROR)
        self.assertTrue(alice.remote_abort)

    def test_randomized_sessions(self):
        """Sessões aleatórias: chaves idênticas ou o mesmo motivo de aborto nas duas pontas"""
        rng = np.random.default_rng(404)
        completed = 0
        for case in range(SESSION_CASES):
            length = float(rng.uniform(0.0, 130.0))
            cycles = int(10 ** rng.uniform(5.0, 7.3))
            with self.subTest(case=case, length=length, cycles=cycles):
                run, alice_seq, bob_seq = quantum_records(as_built_params(length), cycles, 500 + case)
                tap = WireTap()
                alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig(session_id=f'r{case}'), tap=tap)
                self.assertEqual(alice.completed, bob.completed)
                if bob.completed:
                    completed += 1
                    np.testing.assert_array_equal(alice.secret.bits, bob.secret.bits)
                else:
                    self.assertEqual(alice.abort_reason, bob.abort_reason)
                rebuilt = LeakLedger.from_frames(tap.frames)
                self.assertEqual(alice.ledger, rebuilt)
                self.assertEqual(bob.ledger, rebuilt)
        if SESSION_CASES >= 10:
            self.assertGreater(completed, 0)

    def test_full_intercept_always_aborts(self):
        run, alice_seq, bob_seq = quantum_records(as_built_params(10.0), 5_000_000, 13, 'intercept:1')
        alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig())
        self.assertEqual(alice.abort_reason, AbortReason.QBER_THRESHOLD)
        self.assertEqual(bob.abort_reason, AbortReason.QBER_THRESHOLD)
        self.assertGreater(bob.stats['qber_estimate'], 0.2)

    def test_config_mismatch(self):
        run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 1_000_000, 14)
        alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig(), SessionConfig(sample_fraction=0.2))
        self.assertEqual(alice.abort_reason, AbortReason.CONFIG_MISMATCH)
        self.assertEqual(bob.abort_reason, AbortReason.CONFIG_MISMATCH)
        self.assertTrue(bob.remote_abort)

    def test_version_mismatch(self):
        run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 1_000_000, 15)
        alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig(), SessionConfig(version=2))
        self.assertEqual(alice.abort_reason, AbortReason.VERSION_MISMATCH)
        self.assertEqual(bob.abort_reason, AbortReason.VERSION_MISMATCH)

    def test_insufficient_and_no_bits(self):
        run, alice_seq, bob_seq = quantum_records(as_built_params(0.0), 20_000, 16)
        alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig())
        self.assertEqual(alice.abort_reason, AbortReason.INSUFFICIENT_BITS)
        self.assertEqual(bob.abort_reason, AbortReason.INSUFFICIENT_BITS)

        dark = LinkParams(mu=0.0, p_err_cycle=0.0, p_dark_cycle=0.0)
        run, alice_seq, bob_seq = quantum_records(dark, 1_000_000, 17)
        alice, bob = run_pair(run, alice_seq, bob_seq, SessionConfig())
        self.assertEqual(alice.abort_reason, AbortReason.NO_BITS)
        self.assertEqual(bob.abort_reason, AbortReason.NO_BITS)
        self.assertFalse(alice.remote_abort or bob.remote_abort)

    def _lonely_alice(self, prepare, timeout_s=5.0):
        """Alice contra um par controlado pelo teste"""
        run, alice_seq, _ = quantum_records(as_built_params(4.4), 100_000, 18)
        left, right = socket.socketpair()
        prepare(right)
        with FrameChannel(left, 'alice', timeout_s) as channel:
            outcome = run_session('alice', run.alice, channel, SessionConfig(), alice_seq)
        return outcome, right

    def test_malformed_frame_aborts(self):
        outcome, peer = self._lonely_alice(lambda sock: sock.sendall(b'XXXX' + bytes(20)))
        self.assertEqual(outcome.abort_reason, AbortReason.MALFORMED_FRAME)
        reply = FrameChannel(peer, 'bob', 1.0).recv()
        self.assertEqual(reply, Abort(AbortReason.MALFORMED_FRAME))
        peer.close()

    def test_unexpected_message_aborts(self):
        outcome, peer = self._lonely_alice(lambda sock: sock.sendall(encode_frame(Done(bytes(32)))))
        self.assertEqual(outcome.abort_reason, AbortReason.PROTOCOL_ERROR)
        peer.close()

    def test_timeout_and_closed_channel(self):
        outcome, peer = self._lonely_alice(lambda sock: None, timeout_s=0.2)
        self.assertEqual(outcome.abort_reason, AbortReason.TIMEOUT)
        peer.close()
        outcome, peer = self._lonely_alice(lambda sock: sock.close())
        self.assertEqual(outcome.abort_reason, AbortReason.CHANNEL_CLOSED)

    def test_step_api(self):
        """start/step/finish seguem as fases na ordem"""
        run, alice_seq, bob_seq = quantum_records(as_built_params(4.4), 3_000_000, 19)
        alice_channel, bob_channel = inproc_pair(20.0)
        bob_thread = threading.Thread(target=run_session, args=('bob', run.bob, bob_channel, SessionConfig(), bob_seq))
        bob_thread.start()
        endpoint = AliceEndpoint(run.alice, alice_channel, SessionConfig(), alice_seq)
        endpoint.start()
        phases = [endpoint.phase]
        while endpoint.phase is not SessionPhase.DONE:
            phases.append(endpoint.step())
        key = endpoint.finish()
        bob_thread.join(60)
        alice_channel.close()
        bob_channel.close()
        self.assertEqual(phases, [SessionPhase.QUANTUM_TX, SessionPhase.SIFTING, SessionPhase.QBER_ESTIMATE,
                                  SessionPhase.RECONCILE, SessionPhase.AMPLIFY, SessionPhase.DONE])
        self.assertEqual(len(key.bits), key.m)
        with self.assertRaises(RuntimeError):
            endpoint.step()


class TestHarness(unittest.TestCase):
    """Testes da linha de comando"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.cfg = Config(os.path.join(self.tmp.name, 'padrao.ini'))
        self.log_dir = os.path.join(self.tmp.name, 'logs')

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def main(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = qkd_sim_app.main(['--log-dir', self.log_dir] + list(argv))
        return code, stdout.getvalue()

    def test_model_sweep(self):
        out = self.path('modelo.csv')
        code, _ = self.main('model-sweep', '--lengths', '0:170:5', '--out', out)
        self.assertEqual(code, 0)
        frame = pd.read_csv(out)
        self.assertEqual(len(frame), 35)
        self.assertTrue((frame.loc[frame.length_km <= 65, 'visibility_pred'] > 0.99).all())

        code, _ = self.main('model-sweep', '--lengths', '0,122', '--alpha', '0.21', '--out', out)
        self.assertEqual(code, 0)
        frame = pd.read_csv(out)
        self.assertAlmostEqual(frame.qber_pred.iloc[1], 0.0896, delta=0.001)

    def test_model_sweep_is_deterministic(self):
        first, second = self.path('a.csv'), self.path('b.csv')
        self.main('model-sweep', '--out', first)
        self.main('model-sweep', '--out', second)
        with open(first, 'rb') as a, open(second, 'rb') as b:
            self.assertEqual(a.read(), b.read())

    def test_bad_lengths_exit_code(self):
        self.assertEqual(self.main('model-sweep', '--lengths', '')[0], 2)
        self.assertEqual(self.main('model-sweep', '--lengths', '50,10')[0], 2)

    def test_simulate_report_and_keys(self):
        out = self.path('sessao.csv')
        code, _ = self.main('simulate', '--length-km', '4.4', '--cycles', '1e7', '--seed', '7', '--out', out)
        self.assertEqual(code, 0)
        with open(out, encoding='utf-8') as f:
            self.assertEqual(f.readline().strip(), REPORT_HEADER)
        row = pd.read_csv(out).iloc[0]
        self.assertLessEqual(row.final_bits, row.sifted_bits)
        self.assertTrue(row.qber_ok)
        self.assertAlmostEqual(row.sifted_rate_bps, row.sifted_bits / 5.0)
        with open(self.path('sessao.alice.key')) as a, open(self.path('sessao.bob.key')) as b:
            alice_key, bob_key = a.read(), b.read()
        self.assertEqual(alice_key, bob_key)
        self.assertEqual(len(alice_key), row.final_bits)

    def test_simulate_requires_seed(self):
        self.assertEqual(self.main('simulate', '--cycles', '1000')[0], 2)

    def test_simulate_sweep_rows(self):
        out = self.path('varredura.csv')
        code, _ = self.main('simulate', '--lengths', '5,25', '--cycles', '4e6', '--seed', '3', '--out', out)
        self.assertEqual(code, 0)
        frame = pd.read_csv(out)
        self.assertEqual(list(frame.length_km), [5.0, 25.0])
        self.assertTrue(os.path.exists(self.path('varredura.5km.alice.key')))

    def test_analyze(self):
        code, text = self.main('analyze')
        self.assertEqual(code, 0)
        self.assertIn('129.4 km', text)
        self.assertIn('164.9 km', text)
        self.assertIn('~50 km', text)
        code, text = self.main('analyze', '--improved')
        self.assertIn('Alcance máximo (QBER 11%): 164.9 km', text)

    def test_analyze_insecure_at_zero(self):
        self.assertEqual(self.main('analyze', '--emod', '0.12')[0], 3)

    def test_connect_without_server(self):
        with socket.socket() as spare:
            spare.bind(('127.0.0.1', 0))
            port = spare.getsockname()[1]
        code, _ = self.main('connect', '--transport', f'tcp:127.0.0.1:{port}', '--seed', '1', '--cycles', '1000')
        self.assertEqual(code, 4)

    def test_endpoint_crash_exit_code(self):
        """Exceção inesperada numa thread da sessão vira código de saída 4"""
        with patch('qkd_sim_app.run_session', side_effect=RuntimeError('falha simulada')):
            code, _ = self.main('simulate', '--cycles', '1000', '--seed', '1')
        self.assertEqual(code, 4)
        with patch('qkd_sim_app.run_session', side_effect=RuntimeError('falha simulada')):
            run = qkd_sim_app.build_run_config(self.cfg, None, {'cycles': 1000, 'seed': 1})
            with self.assertRaises(qkd_sim_app.EndpointFailure) as ctx:
                qkd_sim_app.run_inproc(run, self.cfg)
        self.assertIn(ctx.exception.role, ('alice', 'bob'))

    def test_run_config_layers(self):
        run_file = self.path('execucao.cfg')
        with open(run_file, 'w', encoding='utf-8') as f:
            f.write("length_km = 50\ncycles = 1000000\nseed = 5\n")
        run = qkd_sim_app.build_run_config(self.cfg, run_file, {'length_km': 60.0})
        self.assertEqual(run.link.length_km, 60.0)
        self.assertEqual(run.n_cycles, 1_000_000)
        self.assertAlmostEqual(run.duration_s, 0.5)
        run = qkd_sim_app.build_run_config(self.cfg, run_file, {'duration_s': 2.0})
        self.assertEqual(run.n_cycles, 4_000_000)

        with open(run_file, 'w', encoding='utf-8') as f:
            f.write("cycles = 10\nduration_s = 1\n")
        with self.assertRaises(ConfigError):
            qkd_sim_app.build_run_config(self.cfg, run_file)
        with open(run_file, 'w', encoding='utf-8') as f:
            f.write("comprimento = 10\n")
        with self.assertRaises(ConfigError):
            qkd_sim_app.build_run_config(self.cfg, run_file)
        with self.assertRaises(ConfigError):
            qkd_sim_app.build_run_config(self.cfg, None, {'sim_mode': 'rapido'})

    def _tcp_session(self, run):
        """Alice servindo numa thread e Bob conectando na porta escolhida pelo sistema"""
        run = replace(run, transport='tcp:127.0.0.1:0')
        listening = threading.Event()
        ports = []
        served = {}

        def on_listening(port):
            ports.append(port)
            listening.set()

        def serve():
            served['alice'] = qkd_sim_app.serve_session(run, self.cfg, on_listening)

        server = threading.Thread(target=serve)
        server.start()
        self.assertTrue(listening.wait(10))
        _, bob = qkd_sim_app.connect_session(replace(run, transport=f'tcp:127.0.0.1:{ports[0]}'), self.cfg)
        server.join(60)
        return served['alice'], bob

    def test_tcp_matches_inproc(self):
        """Mesma configuração: chaves idênticas nos dois transportes"""
        run = qkd_sim_app.build_run_config(self.cfg, None, {'length_km': 4.4, 'cycles': 3_000_000, 'seed': 21})
        alice, bob = self._tcp_session(run)
        _, inproc_alice, inproc_bob = qkd_sim_app.run_inproc(run, self.cfg)
        self.assertTrue(bob.completed and alice.completed)
        np.testing.assert_array_equal(bob.secret.bits, alice.secret.bits)
        np.testing.assert_array_equal(bob.secret.bits, inproc_bob.secret.bits)
        self.assertEqual(qkd_sim_app.report_row(run, run.link, bob),
                         qkd_sim_app.report_row(run, run.link, inproc_bob))

    def test_randomized_tcp_sessions(self):
        rng = np.random.default_rng(808)
        for case in range(TCP_SESSION_CASES):
            flags = {'length_km': round(float(rng.uniform(0.0, 60.0)), 1),
                     'cycles': int(10 ** rng.uniform(6.0, 7.0)), 'seed': 900 + case}
            with self.subTest(**flags):
                run = qkd_sim_app.build_run_config(self.cfg, None, flags)
                alice, bob = self._tcp_session(run)
                self.assertEqual(alice.completed, bob.completed)
                if bob.completed:
                    np.testing.assert_array_equal(alice.secret.bits, bob.secret.bits)
                else:
                    self.assertEqual(alice.abort_reason, bob.abort_reason)
                self.assertEqual(alice.ledger, bob.ledger)


if __name__ == '__main__':
    # Executar os testes
    unittest.main(verbosity=2)
