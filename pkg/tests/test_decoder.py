import numpy as np
import pytest

from seqsynth import autodiff as ad
from seqsynth.data import EventSequence, EventVocabulary, canonicalize, pad_batch
from seqsynth.decoder import (
    HawkesHeads,
    QuadratureConfig,
    hawkes_log_likelihood,
    intensity_at,
    mc_compensator,
    predict_next_time_expectation,
    type_probs,
)
from seqsynth.errors import ContractError, DomainError, HorizonError
from seqsynth.model import ModelConfig, SequenceVAE, make_decoder_inputs
from seqsynth.oracle import (
    default_scenario,
    exact_compensator,
    simulate_thinning,
)

SOFTPLUS_INV_1 = float(np.log(np.e - 1))  # softplus(x) = 1 at this x


def _const_heads(K=1, d=4, level_preact=SOFTPLUS_INV_1):
    """Heads producing a constant intensity: W = 0, alpha = 0, beta = 1."""
    heads = HawkesHeads(K, d, np.random.default_rng(0))
    heads.W.data[:] = 0.0
    heads.alpha.data[:] = 0.0
    heads.mu_base.data[:] = level_preact
    heads.log_beta.data[:] = 0.0
    return heads


def _vocab():
    return EventVocabulary(names=["a", "b", "c"])


def _model(max_len=8, **over):
    cfg = dict(n_types=3, max_len=max_len, d=16, d_z=4, n_layers=2, n_heads=2, d_ff=32)
    cfg.update(over)
    return SequenceVAE(ModelConfig(**cfg), _vocab(), seed=1)


class TestIntensityAt:
    def test_interpolation_vanishes_at_event(self):
        heads = HawkesHeads(3, 4, np.random.default_rng(1))
        h = np.random.default_rng(2).normal(size=4)
        lam = intensity_at(2.0, 2.0, h, heads)
        with ad.no_grad():
            beta = heads.beta().data
        pre = heads.W.data @ h + heads.mu_base.data
        np.testing.assert_allclose(lam, beta * np.logaddexp(0, pre / beta), rtol=1e-12)

    def test_zero_affine_gives_log2(self):
        heads = _const_heads(K=3, level_preact=0.0)
        lam = intensity_at(5.0, 5.0, np.zeros(4), heads)
        np.testing.assert_allclose(lam, np.log(2.0), rtol=1e-12)

    def test_interpolation_closed_form(self):
        heads = _const_heads(K=1, level_preact=0.0)
        heads.alpha.data[:] = 2.0
        lam = intensity_at(2.0, 1.0, np.zeros(4), heads)
        # alpha * (t - t_j)/t_j = 2, softplus(2) with beta 1
        assert lam[0] == pytest.approx(np.logaddexp(0, 2.0), rel=1e-12)
        assert lam[0] == pytest.approx(2.126928011042972, rel=1e-9)

    def test_before_interval_start_rejected(self):
        heads = _const_heads()
        with pytest.raises(DomainError):
            intensity_at(0.5, 1.0, np.zeros(4), heads)


class TestTypeProbs:
    def test_normalization(self):
        np.testing.assert_allclose(type_probs([1.0, 1.0, 2.0]), [0.25, 0.25, 0.5])

    def test_uniform_for_equal(self):
        np.testing.assert_allclose(type_probs([0.3, 0.3, 0.3, 0.3]), 0.25)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            lam = rng.uniform(0.01, 5.0, size=6)
            assert np.argmax(type_probs(lam)) == np.argmax(lam)

    def test_nonpositive_rejected(self):
        with pytest.raises(ContractError):
            type_probs([1.0, 0.0])


class TestHawkesLogLikelihood:
    def test_constant_intensity_closed_form(self):
        heads = _const_heads()
        hidden = ad.Tensor(np.zeros((3, 4)))
        ll = hawkes_log_likelihood(np.array([1.0, 2.0, 3.0]), hidden, heads,
                                   n_mc=17, rng=np.random.default_rng(0))
        assert float(ll.data) == pytest.approx(-2.0, abs=1e-12)

    def test_constant_intensity_mc_zero_variance(self):
        heads = _const_heads()
        hidden = ad.Tensor(np.zeros((4, 4)))
        times = np.array([1.0, 2.5, 3.0, 7.0])
        vals = [
            float(hawkes_log_likelihood(times, hidden, heads, n_mc=n,
                                        rng=np.random.default_rng(seed)).data)
            for n, seed in [(1, 0), (50, 1), (1000, 2)]
        ]
        assert vals[0] == vals[1] == vals[2]

    def test_unsorted_times_rejected(self):
        heads = _const_heads()
        with pytest.raises(ContractError):
            hawkes_log_likelihood(np.array([2.0, 1.0]), ad.Tensor(np.zeros((2, 4))),
                                  heads, n_mc=1, rng=np.random.default_rng(0))

    def test_single_event_has_no_integral(self):
        heads = _const_heads()
        ll = hawkes_log_likelihood(np.array([1.5]), ad.Tensor(np.zeros((1, 4))),
                                   heads, n_mc=5, rng=np.random.default_rng(0))
        assert float(ll.data) == pytest.approx(0.0, abs=1e-12)  # log(1) - 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        heads = HawkesHeads(3, 6, rng)
        times, _ = canonicalize(np.sort(rng.uniform(0, 8, 5)), np.zeros(5))
        hidden = ad.parameter(rng.normal(size=(5, 6)), "hidden")
        u = rng.uniform(size=(1, 4, 9))
        params = dict(heads.params())
        params["hidden"] = hidden
        fn = lambda: hawkes_log_likelihood(times, hidden, heads, n_mc=9, u_frac=u)
        report = ad.finite_diff_check(fn, params, h=1e-5)
        assert report.max_rel_err < 1e-6

    def test_mc_estimator_unbiased_for_piecewise_constant(self):
        # intensity constant in t (alpha = 0) but varying by interval through
        # the hidden state; any single draw already equals the closed form
        rng = np.random.default_rng(4)
        heads = _const_heads(K=1, level_preact=0.0)
        w = rng.normal(size=4)
        heads.W.data[0] = w
        hidden_rows = rng.normal(size=(4, 4))
        times = np.array([1.0, 1.7, 3.0, 3.5])
        pre = hidden_rows @ w
        lam = np.logaddexp(0, pre)
        expected = float(np.sum(np.log(lam)))
        for j in range(1, 4):
            expected -= (times[j] - times[j - 1]) * lam[j - 1]
        estimates = []
        for seed in range(40):
            ll = hawkes_log_likelihood(times, ad.Tensor(hidden_rows), heads, n_mc=3,
                                       rng=np.random.default_rng([7, seed]))
            estimates.append(float(ll.data))
        np.testing.assert_allclose(np.mean(estimates), expected, rtol=1e-12)
        assert np.std(estimates) < 1e-12


class TestMCCompensatorVsOracle:
    def test_oracle_sequences_within_one_percent(self):
        p = default_scenario()
        rng_pool = [np.random.default_rng([101, i]) for i in range(6)]
        checked = 0
        for i, rng in enumerate(rng_pool):
            seq = simulate_thinning(p, rng)
            if len(seq) < 3:
                continue

            def lam_total(ts):
                return np.array([
                    np.sum(np.maximum(
                        p.mu + np.sum(p.A[:, seq.types[seq.times < t]] *
                                      np.exp(-p.delta[:, seq.types[seq.times < t]] *
                                             (t - seq.times[seq.times < t])[None, :]), axis=1),
                        0.0))
                    for t in ts
                ])

            est = mc_compensator(lam_total, seq.times, n_mc=1000,
                                 rng=np.random.default_rng([55, i]))
            ref = exact_compensator(p, seq.times, seq.types,
                                    float(seq.times[0]), float(seq.times[-1]))
            assert abs(est - ref) / ref < 0.01
            checked += 1
        assert checked >= 4


class TestDecoderStructure:
    def _batch_and_z(self, model, seed=0, n=2):
        rng = np.random.default_rng(seed)
        seqs = []
        for i in range(n):
            L = int(rng.integers(2, 6))
            t, k = canonicalize(np.sort(rng.uniform(0, 10, L)), rng.integers(0, 3, L))
            seqs.append(EventSequence(f"s{i}", t, k, 0))
        batch = pad_batch(seqs, model.cfg.max_len, model.vocab)
        z = rng.normal(size=(n, model.cfg.max_len, model.cfg.d_z))
        return batch, z

    def test_bos_only_prefix(self):
        model = _model()
        dec = model.decoder
        z = np.random.default_rng(0).normal(size=(1, 1, 4))
        types_in = np.array([[dec.bos_index]])
        h = dec.decode_hidden(types_in, np.zeros((1, 1)), np.ones((1, 1), bool), z)
        assert h.shape == (1, 1, 16)
        h2 = dec.decode_hidden(types_in, np.zeros((1, 1)), np.ones((1, 1), bool), z + 1.0)
        assert not np.allclose(h.data, h2.data)

    def test_causality_exact(self):
        model = _model()
        batch, z = self._batch_and_z(model)
        types_in, times_in, real_in = make_decoder_inputs(batch, model.decoder.bos_index)
        h1 = model.decoder.decode_hidden(types_in, times_in, real_in, z).data.copy()
        j = 2
        types_in2 = types_in.copy()
        times_in2 = times_in.copy()
        types_in2[:, j + 1] = (types_in2[:, j + 1] + 1) % 3
        times_in2[:, j + 1] += 0.25
        z2 = z.copy()
        z2[:, j + 1] += 1.0
        h2 = model.decoder.decode_hidden(types_in2, times_in2, real_in, z2).data
        np.testing.assert_array_equal(h1[:, : j + 1], h2[:, : j + 1])
        assert not np.allclose(h1[:, j + 1], h2[:, j + 1])

    def test_teacher_forced_equals_incremental(self):
        model = _model()
        batch, z = self._batch_and_z(model, seed=5)
        types_in, times_in, real_in = make_decoder_inputs(batch, model.decoder.bos_index)
        full = model.decoder.decode_hidden(types_in, times_in, real_in, z).data
        i = 0
        P = int(batch.lengths[i]) + 1
        for p in range(1, P + 1):
            step = model.decoder.decode_hidden(
                types_in[i:i + 1, :p], times_in[i:i + 1, :p],
                real_in[i:i + 1, :p], z[i:i + 1, :p],
            ).data
            np.testing.assert_allclose(step[0, -1], full[i, p - 1], atol=1e-10)

    def test_prefix_longer_than_latent_grid_rejected(self):
        model = _model()
        dec = model.decoder
        z = np.zeros((1, 2, 4))
        types_in = np.full((1, 3), dec.bos_index)
        with pytest.raises(ContractError):
            dec.decode_hidden(types_in, np.zeros((1, 3)), np.ones((1, 3), bool), z)


class TestRegressionHeads:
    def test_zero_weights_give_log2_offset(self):
        model = _model()
        dec = model.decoder
        dec.time_w.data[:] = 0.0
        dec.time_b.data[:] = 0.0
        hidden = ad.Tensor(np.zeros((1, 3, 16)))
        times_in = np.array([[0.0, 1.0, 4.0]])
        pred, logits = dec.regression_heads(hidden, times_in)
        np.testing.assert_allclose(pred.data, times_in + np.log(2.0), rtol=1e-12)
        assert logits.shape == (1, 3, 4)  # K + 1 classes including END

    def test_strictly_later_than_current(self):
        model = _model()
        rng = np.random.default_rng(8)
        hidden = ad.Tensor(rng.normal(size=(2, 5, 16)))
        times_in = np.abs(rng.normal(size=(2, 5)))
        pred, _ = model.decoder.regression_heads(hidden, times_in)
        assert np.all(pred.data > times_in)


class TestNextTimeExpectation:
    def test_constant_half_rate(self):
        heads = _const_heads(K=1, level_preact=float(np.log(np.exp(0.5) - 1)))
        t_hat = predict_next_time_expectation(np.zeros(4), 2.0, heads)
        assert t_hat == pytest.approx(2.0 + 1 / 0.5, rel=1e-3)

    def test_constant_unit_rate(self):
        heads = _const_heads(K=1, level_preact=SOFTPLUS_INV_1)
        t_hat = predict_next_time_expectation(np.zeros(4), 1.0, heads)
        assert t_hat == pytest.approx(2.0, rel=1e-3)

    def test_horizon_error_when_intensity_dies(self):
        heads = _const_heads(K=1, level_preact=0.0)
        heads.alpha.data[:] = -50.0  # intensity decays to ~0: survival plateaus
        quad = QuadratureConfig(max_horizon=1e5)
        with pytest.raises(HorizonError):
            predict_next_time_expectation(np.zeros(4), 1.0, heads, quad)

    def test_decaying_intensity_vs_simulation(self):
        # one decaying component plus one constant keeps the tail integrable
        heads = _const_heads(K=2, level_preact=0.0)
        heads.mu_base.data[:] = [1.0, float(np.log(np.exp(0.3) - 1))]
        heads.alpha.data[:] = [-4.0, 0.0]
        t_last = 2.0
        t_hat = predict_next_time_expectation(np.zeros(4), t_last, heads)

        # inverse-CDF sampling oracle on a fine grid
        from scipy.integrate import cumulative_trapezoid

        ts = t_last + np.concatenate([[0.0], np.geomspace(1e-8, 400.0, 200_000)])
        arg = np.stack([heads.alpha.data[k] * (ts - t_last) / t_last + heads.mu_base.data[k]
                        for k in range(2)], axis=1)
        lam = np.logaddexp(0, arg).sum(axis=1)
        cum = cumulative_trapezoid(lam, ts, initial=0.0)
        u = np.random.default_rng(0).uniform(size=1_000_000)
        target = -np.log1p(-u)
        samples = np.interp(target, cum, ts)
        assert abs(t_hat - samples.mean()) / samples.mean() < 0.005
