import numpy as np
import pytest

from glyphforge.autodiff import ShapeMismatchError, Tensor
from glyphforge.network import (
    ArchConfig,
    BilstmParams,
    EmptySequenceError,
    LstmParams,
    bilstm,
    features_to_sequence,
    forward,
    init_model,
    lstm_step,
)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_step_oracle(x, h_prev, c_prev, p):
    """Straight-line transcription of the gated-cell update equations."""
    hx = np.concatenate([h_prev, x])
    f = sigmoid(p.W_f.data @ hx + p.b_f.data)
    i = sigmoid(p.W_i.data @ hx + p.b_i.data)
    cand = np.tanh(p.W_c.data @ hx + p.b_c.data)
    c = c_prev * f + cand * i
    o = sigmoid(p.W_o.data @ hx + p.b_o.data)
    h = o * np.tanh(c)
    return h, c


def make_cell(hidden, inp, rng=None, zero=False):
    if zero:
        w = lambda: Tensor(np.zeros((hidden, hidden + inp)))
        b = lambda: Tensor(np.zeros(hidden))
    else:
        w = lambda: Tensor(rng.normal(size=(hidden, hidden + inp)))
        b = lambda: Tensor(rng.normal(size=hidden))
    return LstmParams(
        W_f=w(), W_i=w(), W_c=w(), W_o=w(),
        b_f=b(), b_i=b(), b_c=b(), b_o=b(),
        hidden_size=hidden, input_size=inp,
    )


class TestLstmStep:
    def test_zero_params_zero_state(self):
        cell = make_cell(3, 2, zero=True)
        h, c = lstm_step(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), cell)
        assert np.array_equal(h.data, np.zeros((1, 3)))
        assert np.array_equal(c.data, np.zeros((1, 3)))

    def test_zero_params_carries_half_cell(self, rng):
        # Zero pre-activations: every gate is 1/2 and the candidate is 0, so
        # c_t = c_prev / 2 and h_t = tanh(c_prev / 2) / 2.
        cell = make_cell(4, 3, zero=True)
        c_prev = rng.normal(size=(1, 4))
        h, c = lstm_step(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))), Tensor(c_prev), cell)
        assert np.allclose(c.data, 0.5 * c_prev, atol=1e-15)
        assert np.allclose(h.data, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)

    def test_matches_oracle_on_random_draws(self, rng):
        for _ in range(100):
            hidden = int(rng.integers(1, 6))
            inp = int(rng.integers(1, 6))
            cell = make_cell(hidden, inp, rng)
            x = rng.normal(size=(1, inp))
            h_prev = rng.normal(size=(1, hidden))
            c_prev = rng.normal(size=(1, hidden))
            h, c = lstm_step(Tensor(x), Tensor(h_prev), Tensor(c_prev), cell)
            h_ref, c_ref = lstm_step_oracle(x[0], h_prev[0], c_prev[0], cell)
            assert np.abs(h.data[0] - h_ref).max() < 1e-12
            assert np.abs(c.data[0] - c_ref).max() < 1e-12

    def test_gate_ranges(self, rng):
        cell = make_cell(5, 4, rng)
        x, h0, c0 = (Tensor(rng.normal(size=(2, k)) * 3) for k in (4, 5, 5))
        h, c = lstm_step(x, h0, c0, cell)
        # h = o * tanh(c) with o in (0,1): |h| < |tanh(c)| <= 1
        assert np.all(np.abs(h.data) < 1.0)

    def test_shape_mismatch(self, rng):
        cell = make_cell(3, 2, rng)
        with pytest.raises(ShapeMismatchError):
            lstm_step(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), cell)

    def test_bad_gate_shape_rejected(self):
        with pytest.raises(ShapeMismatchError):
            LstmParams(
                W_f=Tensor(np.zeros((3, 4))), W_i=Tensor(np.zeros((3, 5))),
                W_c=Tensor(np.zeros((3, 5))), W_o=Tensor(np.zeros((3, 5))),
                b_f=Tensor(np.zeros(3)), b_i=Tensor(np.zeros(3)),
                b_c=Tensor(np.zeros(3)), b_o=Tensor(np.zeros(3)),
                hidden_size=3, input_size=2,
            )


class TestBilstm:
    def _params(self, rng, hidden=3, inp=2, mix=3):
        return BilstmParams(
            forward_cell=make_cell(hidden, inp, rng),
            backward_cell=make_cell(hidden, inp, rng),
            w_o1=Tensor(rng.normal(size=(mix, hidden))),
            w_o2=Tensor(rng.normal(size=(mix, hidden))),
        )

    def test_single_frame_equals_mixed_steps(self, rng):
        p = self._params(rng)
        x = rng.normal(size=(1, 1, 2))
        out = bilstm(Tensor(x), p)
        zeros = Tensor(np.zeros((1, 3)))
        hf, _ = lstm_step(Tensor(x[0]), zeros, zeros, p.forward_cell)
        hb, _ = lstm_step(Tensor(x[0]), zeros, zeros, p.backward_cell)
        ref = p.w_o1.data @ hf.data[0] + p.w_o2.data @ hb.data[0]
        assert np.allclose(out.data[0, 0], ref, atol=1e-12)

    def test_reversal_symmetry(self, rng):
        # Swapping the two cells (and their mixing matrices) while reversing
        # the input must reverse the output sequence.
        p = self._params(rng)
        swapped = BilstmParams(
            forward_cell=p.backward_cell,
            backward_cell=p.forward_cell,
            w_o1=p.w_o2,
            w_o2=p.w_o1,
        )
        xs = rng.normal(size=(5, 2, 2))
        out = bilstm(Tensor(xs), p).data
        out_sw = bilstm(Tensor(xs[::-1].copy()), swapped).data
        assert np.allclose(out, out_sw[::-1], atol=1e-12)

    def test_zero_params_zero_output(self):
        p = BilstmParams(
            forward_cell=make_cell(3, 2, zero=True),
            backward_cell=make_cell(3, 2, zero=True),
            w_o1=Tensor(np.zeros((3, 3))),
            w_o2=Tensor(np.zeros((3, 3))),
        )
        out = bilstm(Tensor(np.random.default_rng(0).normal(size=(4, 1, 2))), p)
        assert np.array_equal(out.data, np.zeros((4, 1, 3)))

    def test_empty_sequence(self, rng):
        p = self._params(rng)
        with pytest.raises(EmptySequenceError):
            bilstm(Tensor(np.zeros((0, 1, 2))), p)


class TestFeaturesToSequence:
    def test_single_channel_single_row(self, rng):
        fmap = rng.normal(size=(1, 1, 1, 7))
        seq = features_to_sequence(Tensor(fmap))
        assert seq.shape == (7, 1, 1)
        assert np.array_equal(seq.data[:, 0, 0], fmap[0, 0, 0])

    def test_length_is_width(self, rng):
        fmap = Tensor(rng.normal(size=(2, 3, 4, 9)))
        assert features_to_sequence(fmap).shape == (9, 2, 12)

    def test_round_trip(self, rng):
        fmap = rng.normal(size=(2, 3, 4, 5))
        seq = features_to_sequence(Tensor(fmap)).data
        # Invert the bookkeeping: (W, N, C*H) -> (N, C, H, W)
        back = seq.reshape(5, 2, 3, 4).transpose(1, 2, 3, 0)
        assert np.array_equal(back, fmap)


class TestForward:
    def small_arch(self, classes=5):
        return ArchConfig(
            num_classes=classes, input_h=8, input_w=16,
            conv_channels=(2, 3), pool_windows=((2, 2), (2, 1)),
            hidden_size=4, mix_size=4,
        )

    def test_frames_normalize(self, rng):
        model = init_model(self.small_arch(), seed=1)
        logp = forward(model, rng.random((2, 1, 8, 16)))
        sums = np.exp(logp.data).sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-9)

    def test_sequence_length_from_pool_strides(self, rng):
        arch = ArchConfig(num_classes=4)
        model = init_model(arch, seed=0)
        logp = forward(model, rng.random((1, 1, 32, 128)))
        # width 128 over pool width strides 2 and 1
        assert logp.shape == (1, 64, 4)
        assert arch.seq_len == 64

    def test_duplicate_inputs_identical_frames(self, rng):
        model = init_model(self.small_arch(), seed=2)
        img = rng.random((1, 8, 16))
        batch = np.stack([img, img])
        logp = forward(model, batch).data
        assert np.array_equal(logp[0], logp[1])

    def test_deterministic(self, rng):
        model = init_model(self.small_arch(), seed=3)
        batch = rng.random((2, 1, 8, 16))
        assert np.array_equal(forward(model, batch).data, forward(model, batch).data)

    def test_shape_contract_independent_of_pixels(self, rng):
        model = init_model(self.small_arch(), seed=4)
        a = forward(model, np.zeros((1, 1, 8, 16)))
        b = forward(model, rng.random((3, 1, 8, 16)))
        assert a.shape[1:] == b.shape[1:]

    def test_wrong_input_size_rejected(self, rng):
        model = init_model(self.small_arch(), seed=5)
        with pytest.raises(ShapeMismatchError):
            forward(model, rng.random((1, 1, 16, 16)))


class TestInit:
    def test_seeded_reproducible(self):
        arch = ArchConfig(num_classes=6)
        a = init_model(arch, seed=9)
        b = init_model(arch, seed=9)
        for (_, ta), (_, tb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(ta.data, tb.data)

    def test_weight_bounds(self):
        arch = ArchConfig(num_classes=6)
        model = init_model(arch, seed=10)
        d = arch.feature_size
        h = arch.hidden_size
        bound = 1.0 / np.sqrt(h + d)
        w = model.bilstm.forward_cell.W_f.data
        assert np.abs(w).max() <= bound

    def test_param_count_reference(self):
        arch = ArchConfig(num_classes=11)
        model = init_model(arch, seed=0)
        # conv(1->16) + conv(16->32) + 2 cells of 4 gates over (64, 64+256)
        # + 2 mixing matrices + projection
        expected = (16 * 9 + 16) + (32 * 16 * 9 + 32)
        expected += 2 * (4 * 64 * (64 + 256) + 4 * 64)
        expected += 2 * 64 * 64
        expected += 11 * 64 + 11
        assert model.num_parameters() == expected

    def test_projection_rows_match_classes(self):
        model = init_model(ArchConfig(num_classes=7), seed=0)
        assert model.proj_w.shape[0] == 7
