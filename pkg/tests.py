#!/usr/bin/env python3
"""
Testes Unitários do simulador QKD BB84 - modelo físico e camada quântica

Cobre o modelo fechado do enlace, o amostrador estocástico, a amplificação de
privacidade, a análise de segurança e a configuração.

Execução:
    python -m unittest tests tests_protocol
"""

import math
import os
import tempfile
import unittest

import numpy as np
from scipy import stats

from config import Config, ConfigError, load_run_file
from event_sim import (CELL_KEYS, AttackConfig, DriftState, SimOptions, apply_intercept_resend,
                       click_probabilities, drift_walk_deg, noise_probability, parse_attack,
                       realize_records, run_quantum_layer, signal_error_probability,
                       simulate_aggregated, simulate_exact, tally_batch)
from link_model import (LinkParams, as_built_params, dark_rate_from_gate_probability, improved_params, nep,
                        qber_model, qber_model_extended, sifted_rate_model, signal_rate_per_cycle,
                        transmittance, visibility_model, visibility_to_qber)
from privacy_amp import (SecretKey, ToeplitzSeed, amplify, binary_entropy, final_length,
                         tau, toeplitz_hash)
from security_analysis import (RangeError, multiphoton_tagged_fraction, p_multiphoton,
                               pns_range_limit, predicted_final_rate, predicted_key_fraction,
                               solve_max_range, verdict)


class TestLinkModel(unittest.TestCase):
    """Testes do modelo fechado do enlace"""

    def test_visibility_at_122_km(self):
        """Visibilidade em 122 km com as duas atenuações"""
        specified = as_built_params(122.0, alpha_db_per_km=0.2)
        measured = as_built_params(122.0, alpha_db_per_km=0.21)
        self.assertAlmostEqual(visibility_model(specified), 0.906, delta=0.001)
        self.assertAlmostEqual(visibility_model(measured), 0.879, delta=0.002)
        # Dentro de 3 pontos percentuais dos 88.4% medidos
        self.assertLess(abs(visibility_model(measured) - 0.884), 0.03)

    def test_visibility_above_99_percent_up_to_65_km(self):
        params = as_built_params(0.0, alpha_db_per_km=0.2)
        lengths = np.arange(0.0, 65.0 + 1e-9, 5.0)
        self.assertTrue(np.all(visibility_model(params, lengths) > 0.99))

    def test_qber_extended_endpoints(self):
        """QBER com erros de modulação: ~3.3% na origem e ~8.9% em 122 km"""
        params = as_built_params(122.0)
        self.assertAlmostEqual(qber_model_extended(params, 0.0), 0.0330, delta=0.0005)
        self.assertAlmostEqual(qber_model_extended(params), 0.0896, delta=0.001)

    def test_noise_only_qber_matches_visibility(self):
        """Sem erros de modulação o QBER é (1 - V) / 2 em toda a faixa"""
        params = as_built_params(0.0, alpha_db_per_km=0.2)
        lengths = np.linspace(0.0, 170.0, 341)
        expected = (1.0 - visibility_model(params, lengths)) / 2.0
        np.testing.assert_allclose(qber_model(params, lengths), expected, atol=1e-3)

    def test_sifted_rate_at_4_4_km(self):
        params = as_built_params(4.4)
        self.assertAlmostEqual(sifted_rate_model(params), 3639.0, delta=1.5)

    def test_scalar_and_array_inputs(self):
        params = as_built_params(50.0)
        self.assertIsInstance(qber_model_extended(params), float)
        values = qber_model_extended(params, np.array([10.0, 50.0]))
        self.assertEqual(values.shape, (2,))
        self.assertAlmostEqual(values[1], qber_model_extended(params))

    def test_transmittance(self):
        self.assertEqual(transmittance(0.2, 0.0), 1.0)
        self.assertAlmostEqual(transmittance(0.2, 50.0), 0.1)

    def test_zero_rate_edge_cases(self):
        """mu = 0 deixa apenas ruído; sem ruído e sem sinal a visibilidade é 1"""
        noisy = LinkParams(mu=0.0)
        self.assertAlmostEqual(qber_model(noisy), 0.5)
        silent = LinkParams(mu=0.0, p_err_cycle=0.0, p_dark_cycle=0.0)
        self.assertEqual(visibility_model(silent), 1.0)
        self.assertEqual(qber_model(silent), 0.0)

    def test_invalid_params(self):
        with self.assertRaises(ValueError):
            LinkParams(p_err_cycle=1e-7, p_dark_cycle=3.2e-7)
        with self.assertRaises(ValueError):
            LinkParams(e_mod=0.6)
        with self.assertRaises(ValueError):
            visibility_to_qber(1.2)

    def test_improved_params(self):
        params = improved_params()
        self.assertEqual(params.p_err_cycle, params.p_dark_cycle)
        self.assertEqual(params.e_mod, 0.0)
        self.assertEqual(params.p_stray_cycle, 0.0)
        self.assertAlmostEqual(params.signal_mu, 0.1 / 2.6)

    def test_nep_positive(self):
        self.assertAlmostEqual(dark_rate_from_gate_probability(1e-7), 100.0)
        self.assertGreater(nep(0.1, dark_rate_from_gate_probability(1e-7)), 0.0)
        self.assertGreater(nep(0.1, 4e2), nep(0.1, 1e2))
        with self.assertRaises(ValueError):
            nep(0.0, 1e3)

    def test_nep_detector_figure(self):
        """eta = 12% e 1e-7 contagens escuras por ns em 1550 nm"""
        value = nep(0.12, dark_rate_from_gate_probability(1e-7), 1.55e-6)
        self.assertAlmostEqual(value / 1e-17, 1.51, delta=0.01)

    def test_models_are_monotone_in_length(self):
        params = as_built_params()
        lengths = np.linspace(0.0, 200.0, 401)
        plain = qber_model(params, lengths)
        extended = qber_model_extended(params, lengths)
        self.assertTrue(np.all(np.diff(plain) >= 0))
        self.assertTrue(np.all(np.diff(extended) >= 0))
        self.assertTrue(np.all(extended >= plain))
        self.assertTrue(np.all(extended <= 0.5))
        self.assertTrue(np.all(np.diff(visibility_model(params, lengths)) <= 0))
        self.assertTrue(np.all(np.diff(sifted_rate_model(params, lengths)) < 0))

    def test_sifted_rate_slope_follows_attenuation(self):
        """Regime dominado pelo sinal (L <= 65 km): inclinação em dB/km igual a alpha"""
        params = as_built_params()
        lengths = np.linspace(0.0, 65.0, 66)
        fit = stats.linregress(lengths, np.log10(sifted_rate_model(params, lengths)))
        slope_db_per_km = -10.0 * fit.slope
        self.assertLess(abs(slope_db_per_km - params.alpha_db_per_km) / params.alpha_db_per_km, 0.02)


class TestEventSim(unittest.TestCase):
    """Testes do amostrador da camada quântica"""

    def test_click_probabilities(self):
        self.assertEqual(click_probabilities(0.0, 1.0), (1.0, 0.0))
        p0, p1 = click_probabilities(np.pi, 1.0)
        self.assertAlmostEqual(p0, 0.0)
        self.assertAlmostEqual(p1, 1.0)
        p0, p1 = click_probabilities(np.pi / 2.0, 1.0)
        self.assertAlmostEqual(p0, 0.5)
        with self.assertRaises(ValueError):
            click_probabilities(0.0, 1.5)

    def test_parse_attack(self):
        self.assertEqual(parse_attack('none'), AttackConfig())
        attack = parse_attack('intercept:0.5')
        self.assertEqual(attack.mode, 'intercept_resend')
        self.assertEqual(attack.intercept_fraction, 0.5)
        for bad in ('intercept:abc', 'intercept:1.5', 'replay'):
            with self.assertRaises(ValueError):
                parse_attack(bad)

    def test_noise_probability_modes(self):
        params = as_built_params()
        self.assertAlmostEqual(noise_probability(params, 'two_output'), 2 * params.p_err_cycle)
        self.assertAlmostEqual(noise_probability(params, 'basis'), params.p_err_cycle)
        with self.assertRaises(ValueError):
            SimOptions(noise_sifting='triple')

    def test_intercept_resend_error_rate(self):
        """Interceptação total: 25% de erro somado aos erros de modulação"""
        params = LinkParams(e_mod=0.0)
        self.assertAlmostEqual(signal_error_probability(params, AttackConfig('intercept_resend', 1.0)), 0.25)
        self.assertAlmostEqual(signal_error_probability(params), 0.0)

    def test_apply_intercept_resend_without_eve(self):
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, 1000, dtype=np.uint8)
        bases = rng.integers(0, 2, 1000, dtype=np.uint8)
        out_bits, out_bases, mask = apply_intercept_resend((bits, bases), 0.0, rng)
        np.testing.assert_array_equal(out_bits, bits)
        np.testing.assert_array_equal(out_bases, bases)
        self.assertFalse(mask.any())

    def test_drift_walk(self):
        drift = DriftState(phase_offset_deg=1.0, drift_rate_deg_per_s=0.05)
        offsets, final = drift_walk_deg(drift, 120, np.random.default_rng(1))
        self.assertEqual(len(offsets), 120)
        self.assertEqual(offsets[0], 1.0)
        self.assertLessEqual(abs(final - 1.0), 120 * 0.05)

    def test_drift_adds_negligible_qber(self):
        """Deriva no limite de 0.05 graus/s ao longo de 120 s quase não gera erros"""
        # Relógio reduzido: 120 s cabem em 2.4e6 ciclos exatos
        params = LinkParams(length_km=0.0, p_err_cycle=0.0, p_dark_cycle=0.0, e_mod=0.0, clock_hz=2e4)
        batch = simulate_exact(params, 2_400_000, drift=DriftState(), rng_seed=17)
        n, errors = batch.sifted_counts()
        self.assertGreater(n, 4000)
        self.assertLess(errors / n, 0.001)
        self.assertIsNotNone(batch.final_drift)
        self.assertLessEqual(abs(batch.final_drift.phase_offset_deg), 120 * 0.05)
        # Pior caso no fim da execução: (1 - cos 6 graus) / 2
        self.assertLess((1.0 - math.cos(math.radians(6.0))) / 2.0, 0.0014)

    def test_basis_match_fraction(self):
        batch = simulate_exact(as_built_params(0.0), 1_000_000, rng_seed=19)
        matched = float(np.mean(batch.alice_bases == batch.bob_bases))
        self.assertLess(abs(matched - 0.5), 3.0 * 0.5 / math.sqrt(1_000_000))
        detections = int(np.count_nonzero(batch.detected))
        kept = int(np.count_nonzero(batch.sifted)) / detections
        self.assertLess(abs(kept - 0.5), 3.0 * 0.5 / math.sqrt(detections))

    def test_simulated_intercept_resend_qber(self):
        """QBER peneirado sob Eva em modo exato: f/4 sem erros de modulação"""
        params = LinkParams(length_km=0.0, p_err_cycle=0.0, p_dark_cycle=0.0, e_mod=0.0)
        for fraction, expected, seed in ((1.0, 0.25, 23), (0.5, 0.125, 24)):
            batch = simulate_exact(params, 4_000_000, attack=AttackConfig('intercept_resend', fraction),
                                   rng_seed=seed)
            n, errors = batch.sifted_counts()
            sigma = math.sqrt(expected * (1.0 - expected) / n)
            self.assertLess(abs(errors / n - expected), 3.0 * sigma, f"f={fraction}")

    def test_exact_mode_is_deterministic(self):
        params = as_built_params(25.0)
        first = simulate_exact(params, 200_000, rng_seed=11)
        second = simulate_exact(params, 200_000, rng_seed=11)
        np.testing.assert_array_equal(first.outcome, second.outcome)
        np.testing.assert_array_equal(first.origin, second.origin)

    def test_exact_qber_matches_model_at_25_km(self):
        """QBER peneirado dentro de 4 sigma binomiais do modelo fechado"""
        params = as_built_params(25.0)
        batch = simulate_exact(params, 15_000_000, rng_seed=2024)
        n, errors = batch.sifted_counts()
        model = qber_model_extended(params)
        sigma = math.sqrt(model * (1.0 - model) / n)
        self.assertGreater(n, 9000)
        self.assertLess(abs(errors / n - model), 4.0 * sigma)

    def test_tally_batch_is_consistent(self):
        batch = simulate_exact(as_built_params(0.0), 500_000, rng_seed=5)
        tallies = tally_batch(batch)
        tallies.validate()
        self.assertEqual(tallies.total_cycles, 500_000)
        self.assertEqual(tallies.detections, int(batch.detected.sum()))
        self.assertEqual((tallies.sifted_bits, tallies.sifted_errors), batch.sifted_counts())

    def test_aggregated_sifted_rate_at_4_4_km(self):
        params = as_built_params(4.4)
        tallies = simulate_aggregated(params, 240_000_000, rng_seed=7)
        rate = tallies.sifted_bits / 120.0
        self.assertLess(abs(rate - 3639.0) / 3639.0, 0.10)
        # Dentro de 15% dos 3.4 kbit/s medidos
        self.assertLess(abs(rate - 3400.0) / 3400.0, 0.15)

    def test_aggregated_qber_at_122_km(self):
        params = as_built_params(122.0)
        tallies = simulate_aggregated(params, 2_400_000_000, rng_seed=8)
        self.assertAlmostEqual(tallies.sifted_qber, qber_model_extended(params), delta=0.01)
        # Taxa peneirada dentro de um fator 2 dos 9.2 bit/s medidos
        rate = tallies.sifted_bits / 1200.0
        self.assertTrue(9.2 / 2 <= rate <= 9.2 * 2)

    def test_aggregated_sifted_rate_at_122_km_over_120_s(self):
        params = as_built_params(122.0)
        tallies = simulate_aggregated(params, 240_000_000, rng_seed=27)
        expected = float(sifted_rate_model(params)) * 120.0
        self.assertLess(abs(tallies.sifted_bits - expected), 4.0 * math.sqrt(expected))
        self.assertTrue(9.2 / 2 <= tallies.sifted_bits / 120.0 <= 9.2 * 2)

    def test_aggregated_zero_cycles(self):
        tallies = simulate_aggregated(as_built_params(), 0, rng_seed=1)
        self.assertEqual(tallies.total_cycles, 0)
        self.assertEqual(tallies.sifted_qber, 0.0)

    def test_double_clicks_counted(self):
        params = LinkParams(length_km=0.0, p_err_cycle=1e-3, p_dark_cycle=1e-3)
        tallies = simulate_aggregated(params, 2_000_000, rng_seed=4)
        expected = signal_rate_per_cycle(params) * 2e-3 * 2_000_000
        self.assertGreater(tallies.double_clicks, 0)
        self.assertLess(abs(tallies.double_clicks - expected), 5.0 * math.sqrt(expected))

    def test_exact_and_aggregated_agree(self):
        """Teste qui-quadrado de duas amostras sobre as categorias de detecção"""
        params = as_built_params(0.0)

        def categories(tallies):
            sifted_ok = tallies.sifted_bits - tallies.sifted_errors
            unsifted = tallies.detections - tallies.sifted_bits
            silent = tallies.total_cycles - tallies.detections
            return [sifted_ok, tallies.sifted_errors, unsifted, silent]

        exact = tally_batch(simulate_exact(params, 5_000_000, rng_seed=21))
        aggregated = simulate_aggregated(params, 5_000_000, rng_seed=22)
        _, p_value, _, _ = stats.chi2_contingency([categories(exact), categories(aggregated)])
        self.assertGreater(p_value, 0.001)

    def test_modes_agree_over_50_runs(self):
        """Histogramas de bits e erros peneirados em 50 execuções de 1e6 ciclos por modo"""
        params = as_built_params(0.0)
        runs = 50
        exact = [tally_batch(simulate_exact(params, 1_000_000, rng_seed=1000 + i))
                 for i in range(runs)]
        aggregated = [simulate_aggregated(params, 1_000_000, rng_seed=2000 + i)
                      for i in range(runs)]

        def histogram_p_value(left, right):
            pooled = np.concatenate([left, right])
            edges = np.unique(np.quantile(pooled, [0.2, 0.4, 0.6, 0.8]))
            table = np.array([np.bincount(np.digitize(left, edges), minlength=len(edges) + 1),
                              np.bincount(np.digitize(right, edges), minlength=len(edges) + 1)])
            table = table[:, table.sum(axis=0) > 0]
            return stats.chi2_contingency(table)[1]

        for attribute in ('sifted_bits', 'sifted_errors'):
            left = np.array([getattr(t, attribute) for t in exact])
            right = np.array([getattr(t, attribute) for t in aggregated])
            self.assertGreater(histogram_p_value(left, right), 0.01, attribute)

    def test_realized_records_match_tallies(self):
        params = as_built_params(10.0)
        tallies = simulate_aggregated(params, 5_000_000, rng_seed=9)
        alice, bob = realize_records(tallies, 5_000_000, np.random.default_rng(10))
        self.assertEqual(len(bob.cycles), tallies.detections)
        self.assertTrue(np.all(np.diff(bob.cycles) > 0))
        sifted = alice.bases == bob.bases
        self.assertEqual(int(sifted.sum()), tallies.sifted_bits)
        self.assertEqual(int((alice.bits[sifted] != bob.bits[sifted]).sum()), tallies.sifted_errors)
        bits, _ = alice.lookup(bob.cycles[:10])
        np.testing.assert_array_equal(bits, alice.bits[:10])
        with self.assertRaises(KeyError):
            alice.lookup(np.array([5_000_000]))

    def test_quantum_layer_modes(self):
        params = as_built_params(20.0)
        run = run_quantum_layer(params, 300_000, 'exact', 13)
        self.assertEqual(len(run.bob.cycles), run.tallies.detections)
        run = run_quantum_layer(params, 300_000, 'aggregate', np.random.SeedSequence(13))
        self.assertEqual(len(run.alice.cycles), run.tallies.detections)
        with self.assertRaises(ValueError):
            run_quantum_layer(params, 10, 'hybrid', 1)

    def test_cell_keys_cover_all_cycles(self):
        tallies = simulate_aggregated(as_built_params(), 1_000_000, rng_seed=1)
        self.assertEqual(len(CELL_KEYS), 8)
        self.assertEqual(sum(tallies.cells[key].n_cycles for key in CELL_KEYS), 1_000_000)


class TestPrivacyAmplification(unittest.TestCase):
    """Testes do comprimento final e do hash de Toeplitz"""

    def test_tau(self):
        self.assertEqual(tau(0.0), 0.0)
        self.assertAlmostEqual(tau(0.033), math.log2(1 + 4 * 0.033 - 4 * 0.033 ** 2))
        with self.assertRaises(ValueError):
            tau(0.5)

    def test_binary_entropy(self):
        self.assertAlmostEqual(binary_entropy(0.5), 1.0)
        self.assertEqual(binary_entropy(0.0), 0.0)
        self.assertAlmostEqual(binary_entropy(0.11), 0.4999, delta=1e-3)

    def test_final_length(self):
        n, e, leak, s = 10_000, 0.033, 3000, 30
        expected = math.floor(n * (1 - tau(e)) - leak - s)
        self.assertEqual(final_length(n, e, leak, s), expected)
        self.assertEqual(final_length(100, 0.1, 90, 30), 0)
        with self.assertRaises(ValueError):
            final_length(n, 0.11, leak, s)

    def test_final_length_is_monotone(self):
        errors = np.linspace(0.0, 0.109, 60)
        by_error = [final_length(10_000, e, 2000, 30) for e in errors]
        self.assertTrue(all(a >= b for a, b in zip(by_error, by_error[1:])))
        by_leak = [final_length(10_000, 0.05, leak, 30) for leak in range(0, 12_000, 250)]
        self.assertTrue(all(a >= b for a, b in zip(by_leak, by_leak[1:])))
        self.assertEqual(by_leak[-1], 0)

    def test_final_length_with_tagged_fraction(self):
        plain = final_length(10_000, 0.03, 2000, 30)
        tagged = final_length(10_000, 0.03, 2000, 30, tagged_fraction=0.1)
        self.assertLess(tagged, plain)
        self.assertEqual(final_length(10_000, 0.03, 2000, 30, tagged_fraction=1.0), 0)

    def test_toeplitz_hash_matches_matrix(self):
        rng = np.random.default_rng(42)
        key = rng.integers(0, 2, 64, dtype=np.uint8)
        seed = ToeplitzSeed.generate(64, 20, rng)
        expected = seed.matrix().astype(np.int64) @ key.astype(np.int64) % 2
        np.testing.assert_array_equal(toeplitz_hash(key, seed), expected)

    def test_toeplitz_fft_path(self):
        """Produto grande (convolução por FFT) igual ao da matriz explícita"""
        rng = np.random.default_rng(43)
        key = rng.integers(0, 2, 3000, dtype=np.uint8)
        seed = ToeplitzSeed.generate(3000, 1500, rng)
        expected = seed.matrix().astype(np.int64) @ key.astype(np.int64) % 2
        np.testing.assert_array_equal(toeplitz_hash(key, seed), expected)

    def test_toeplitz_hand_example(self):
        """n = 3, m = 2, semente 10110: T = [[1,0,1],[1,1,0]] e chave 110 -> (1, 0)"""
        seed = ToeplitzSeed(np.array([1, 0, 1, 1, 0], dtype=np.uint8), 3, 2)
        np.testing.assert_array_equal(seed.matrix(), [[1, 0, 1], [1, 1, 0]])
        np.testing.assert_array_equal(toeplitz_hash(np.array([1, 1, 0], dtype=np.uint8), seed), [1, 0])

    def test_toeplitz_is_linear(self):
        rng = np.random.default_rng(44)
        seed = ToeplitzSeed.generate(256, 100, rng)
        x = rng.integers(0, 2, 256, dtype=np.uint8)
        y = rng.integers(0, 2, 256, dtype=np.uint8)
        np.testing.assert_array_equal(toeplitz_hash(x ^ y, seed), toeplitz_hash(x, seed) ^ toeplitz_hash(y, seed))
        self.assertFalse(toeplitz_hash(np.zeros(256, dtype=np.uint8), seed).any())

    def test_toeplitz_output_is_uniform(self):
        """Com chave fixa não nula, cada bit de saída vale 1 em ~metade das sementes"""
        rng = np.random.default_rng(45)
        key = rng.integers(0, 2, 64, dtype=np.uint8)
        key[0] = 1
        trials = 10_000
        outputs = np.array([toeplitz_hash(key, ToeplitzSeed.generate(64, 16, rng)) for _ in range(trials)])
        sigma = 0.5 / math.sqrt(trials)
        self.assertTrue(np.all(np.abs(outputs.mean(axis=0) - 0.5) < 5.0 * sigma))

    def test_toeplitz_seed_validation(self):
        with self.assertRaises(ValueError):
            ToeplitzSeed(np.zeros(10, dtype=np.uint8), 8, 4)
        seed = ToeplitzSeed.generate(8, 4, np.random.default_rng(0))
        with self.assertRaises(ValueError):
            toeplitz_hash(np.zeros(9, dtype=np.uint8), seed)

    def test_amplify(self):
        rng = np.random.default_rng(1)
        key = rng.integers(0, 2, 5000, dtype=np.uint8)
        seed = amplify(key, 0.02, 1000, rng)
        self.assertEqual(seed.n, 5000)
        self.assertEqual(seed.m, final_length(5000, 0.02, 1000))
        self.assertIsNone(amplify(key[:200], 0.1, 150, rng))

    def test_secret_key_text(self):
        key = SecretKey(np.array([1, 0, 1], dtype=np.uint8), 's', 10, 3, 5, 0.01)
        self.assertEqual(key.to_text(), '101')
        with self.assertRaises(ValueError):
            SecretKey(np.array([1], dtype=np.uint8), 's', 10, 3, 5, 0.01)


class TestSecurityAnalysis(unittest.TestCase):
    """Testes do alcance máximo e do limite PNS"""

    def test_max_range_as_built(self):
        self.assertAlmostEqual(solve_max_range(as_built_params()), 129.4, delta=0.5)

    def test_max_range_improved(self):
        self.assertAlmostEqual(solve_max_range(improved_params()), 164.9, delta=0.5)

    def test_range_residual(self):
        params = as_built_params()
        length = solve_max_range(params)
        self.assertLess(abs(qber_model_extended(params, length) - 0.11), 1e-4)

    def test_insecure_at_zero(self):
        with self.assertRaises(RangeError) as ctx:
            solve_max_range(as_built_params().with_changes(e_mod=0.12))
        self.assertEqual(ctx.exception.code, 'insecure_at_zero')

    def test_unbounded_range(self):
        params = LinkParams(p_err_cycle=0.0, p_dark_cycle=0.0, e_mod=0.0)
        self.assertEqual(solve_max_range(params), math.inf)

    def test_pns(self):
        self.assertAlmostEqual(p_multiphoton(0.1), 4.6788e-3, delta=1e-7)
        self.assertAlmostEqual(pns_range_limit(LinkParams(alpha_db_per_km=0.2)), 66.5, delta=0.5)
        self.assertEqual(pns_range_limit(LinkParams(alpha_db_per_km=0.0)), math.inf)
        with self.assertRaises(ValueError):
            pns_range_limit(LinkParams(mu=0.0))

    def test_tagged_fraction(self):
        short = multiphoton_tagged_fraction(as_built_params(10.0))
        long = multiphoton_tagged_fraction(as_built_params(122.0))
        self.assertLess(short, long)
        self.assertEqual(long, 1.0)

    def test_predicted_key_fraction(self):
        self.assertGreater(predicted_key_fraction(0.033), 0.5)
        self.assertEqual(predicted_key_fraction(0.12), 0.0)
        rates = predicted_final_rate(as_built_params(), np.array([4.4, 150.0]))
        self.assertGreater(rates[0], 1500.0)
        self.assertEqual(rates[1], 0.0)

    def test_verdict_records_pns_discrepancy(self):
        result = verdict(0.089, as_built_params(122.0, alpha_db_per_km=0.2))
        self.assertTrue(result.qber_ok)
        self.assertFalse(result.pns_ok)
        self.assertTrue(any('50' in note for note in result.notes))
        self.assertFalse(verdict(0.12, as_built_params()).qber_ok)


class TestConfig(unittest.TestCase):
    """Testes do arquivo INI e dos arquivos de execução"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_defaults_without_file(self):
        path = os.path.join(self.tmp.name, 'ausente.ini')
        cfg = Config(path)
        self.assertEqual(cfg.getfloat('LINK', 'mu'), 0.1)
        self.assertEqual(cfg.get('SIMULATION', 'noise_sifting'), 'two_output')
        self.assertEqual(cfg.getint('WIRE', 'max_payload'), 1 << 24)
        self.assertEqual(cfg.getfloat('LINK', 'inexistente', 1.5), 1.5)
        self.assertTrue(os.path.exists(path))
        self.assertEqual(Config(path).get_all_settings(), cfg.get_all_settings())
        self.assertEqual(cfg.get_all_settings()['CASCADE']['verify_bits'], '50')

    def test_save_and_reload(self):
        path = os.path.join(self.tmp.name, 'qkd.ini')
        cfg = Config(path)
        cfg.set('LINK', 'length_km', 80)
        cfg.save_config()
        self.assertEqual(Config(path).getfloat('LINK', 'length_km'), 80.0)

    def test_run_file(self):
        path = os.path.join(self.tmp.name, 'run.cfg')
        with open(path, 'w', encoding='utf-8') as f:
            f.write("# execução\nlength-km = 50\nseed=7\n")
        self.assertEqual(load_run_file(path), {'length_km': '50', 'seed': '7'})

    def test_run_file_errors(self):
        with self.assertRaises(ConfigError):
            load_run_file(os.path.join(self.tmp.name, 'nada.cfg'))
        path = os.path.join(self.tmp.name, 'ruim.cfg')
        with open(path, 'w', encoding='utf-8') as f:
            f.write("linha sem separador\n")
        with self.assertRaises(ConfigError):
            load_run_file(path)


if __name__ == '__main__':
    # Executar os testes
    unittest.main(verbosity=2)
