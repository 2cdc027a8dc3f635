import math

import numpy as np
import pytest
from common import TripleTestCase, rand

from tripleprior.constants import GRAD_FD_MIN
from tripleprior.exceptions import LabelError, ParameterError, ScheduleError, ShapeError, UnknownKindError, ZeroNormError
from tripleprior.priors.attention import CrossAttention, scaled_dot_attention
from tripleprior.priors.degradation import (
    DegradationEncoder, TimeModulator, classification_accuracy, deg_class_loss, extract_degradation,
    modulate_time, sinusoidal_embedding
)
from tripleprior.priors.semantic import (
    SemanticCrossAttention, SemanticEncoder, deep_cross_attention, distill_loss, extract_semantic, mean_cosine
)
from tripleprior.priors.structural import (
    StructuralAdapter, StructuralCues, StructuralEncoder, StructuralPrior, TokenAggregator, compute_dog, dog_kernel,
    encode_modality, extract_structural, film_modulate, gaussian_kernel1d, resolve_modality, sta_aggregate
)
from tripleprior.tensor import ops
from tripleprior.tensor.core import Tensor, no_grad
from tripleprior.tensor.gradcheck import grad_check


def cues(batch=2, size=16, seed=0) -> StructuralCues:
    rng = np.random.default_rng(seed)
    depth = rng.uniform(0.2, 1.0, size=(batch, 1, size, size))
    seg = rng.integers(0, 9, size=(batch, 1, size, size)) / 8.0
    dog = compute_dog(rng.uniform(size=(size, size)))
    return StructuralCues(depth=depth, seg=seg, dog=np.broadcast_to(dog, (batch, 1, size, size)).copy())


def gaussian_2d(sigma, radius):
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    g = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    return g / g.sum()


def dog_oracle(image, sigma1, sigma2):
    radius = int(math.ceil(3.0 * sigma2))
    kernel = gaussian_2d(sigma1, radius) - gaussian_2d(sigma2, radius)
    padded = np.pad(image, radius, mode="reflect")
    out = np.zeros(image.shape)
    for y in range(image.shape[0]):
        for x in range(image.shape[1]):
            for u in range(2 * radius + 1):
                for v in range(2 * radius + 1):
                    out[y, x] += kernel[u, v] * padded[y + u, x + v]
    return out


def dense_attention(q, k, v):
    scores = np.zeros((q.shape[0], k.shape[0]))
    for i in range(q.shape[0]):
        for j in range(k.shape[0]):
            scores[i, j] = sum(q[i, d] * k[j, d] for d in range(q.shape[1])) / math.sqrt(q.shape[1])
    weights = np.zeros_like(scores)
    for i in range(scores.shape[0]):
        e = [math.exp(s - scores[i].max()) for s in scores[i]]
        weights[i] = np.array(e) / sum(e)
    return weights @ v


class TestAttention(TripleTestCase):

    def test_two_key_closed_form(self):
        out = scaled_dot_attention(Tensor([[1.0]]), Tensor([[1.0], [-1.0]]), Tensor([[1.0], [0.0]]))
        self.assertAlmostEqual(out.item(), 0.8808, places=4)

    def test_single_key_returns_value(self):
        v = Tensor([[2.0, -3.0]])
        out = scaled_dot_attention(rand(5, 4), rand(1, 4, seed=1), v)
        np.testing.assert_allclose(out.data, np.repeat(v.data, 5, axis=0))

    def test_heads_shape(self):
        out = scaled_dot_attention(rand(2, 3, 8), rand(2, 5, 8, seed=1), rand(2, 5, 4, seed=2), heads=2)
        self.assertEqual(out.shape, (2, 3, 4))

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            scaled_dot_attention(rand(3, 4), rand(5, 3), rand(5, 2))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        attn = CrossAttention(4, 6, 8, rng, heads=2)
        x, ctx = Tensor(rand(2, 3, 4)), Tensor(rand(2, 5, 6, seed=1))
        mask = rand(2, 3, 8, seed=2)
        err = grad_check(lambda: ops.sum(attn(x, ctx) * mask), attn.parameters(),
                         min_magnitude=GRAD_FD_MIN)
        self.assertLess(err, 1e-4)


class TestSemantic(TripleTestCase):

    def test_distill_loss_values(self):
        self.assertAlmostEqual(distill_loss(Tensor([[1.0, 0.0]]), [[2.0, 0.0]]).item(), 0.0)
        self.assertAlmostEqual(distill_loss(Tensor([[1.0, 0.0]]), [[-1.0, 0.0]]).item(), 2.0)
        self.assertAlmostEqual(distill_loss(Tensor([[1.0, 0.0]]), [[0.0, 3.0]]).item(), 1.0)
        self.assertAlmostEqual(distill_loss(Tensor([[1.0, 0.0]]), [[1.0, 1.0]]).item(), 1 - 1 / math.sqrt(2))

    def test_distill_loss_zero_norm(self):
        with pytest.raises(ZeroNormError) as e:
            distill_loss(Tensor([[1.0, 0.0], [0.0, 0.0]]), [[1.0, 0.0], [1.0, 0.0]])
        self.assertEqual(e.value.index, 1)

    def test_distill_loss_is_scale_free(self):
        z_s, z_t = rand(3, 4), rand(3, 4, seed=1)
        base = distill_loss(Tensor(z_s), z_t).item()
        self.assertAlmostEqual(distill_loss(Tensor(3.5 * z_s), 0.2 * z_t).item(), base, places=12)

    def test_deep_cross_attention_ignores_context_order(self):
        x, context = rand(2, 5, 4), rand(2, 3, 6, seed=1)
        w_q, w_k, w_v = Tensor(rand(4, 8, seed=2)), Tensor(rand(6, 8, seed=3)), Tensor(rand(6, 4, seed=4))
        out = deep_cross_attention(x, context, w_q, w_k, w_v).data
        shuffled = deep_cross_attention(x, context[:, [2, 0, 1]], w_q, w_k, w_v).data
        np.testing.assert_allclose(shuffled, out, atol=1e-12)

    def test_distill_gradient(self):
        z_s = Tensor(rand(3, 4), requires_grad=True)
        z_t = rand(3, 4, seed=1)
        self.assertLess(grad_check(lambda: distill_loss(z_s, z_t), [z_s]), 1e-6)

    def test_distill_target_is_constant(self):
        z_s = Tensor(rand(3, 4), requires_grad=True)
        z_t = Tensor(rand(3, 4, seed=1), requires_grad=True)
        distill_loss(z_s, z_t).backward()
        self.assertIsNotNone(z_s.grad)
        self.assertIsNone(z_t.grad)

    def test_teacher_is_frozen_and_pinned(self):
        a, b = SemanticEncoder.teacher(3, dim=8), SemanticEncoder.teacher(3, dim=8)
        self.assertTrue(a.frozen)
        x = rand(2, 3, 8, 8)
        with no_grad():
            np.testing.assert_array_equal(a(x).data, b(x).data)

    def test_context_tokens(self):
        student = SemanticEncoder(3, np.random.default_rng(0), dim=8, context_tokens=2, context_dim=6)
        ctx = extract_semantic(student, rand(3, 8, 8))
        self.assertEqual(ctx.tokens.shape, (1, 2, 6))
        self.assertEqual((ctx.count, ctx.width), (2, 6))

    def test_freeze_trunk_keeps_context_trainable(self):
        student = SemanticEncoder(3, np.random.default_rng(0), dim=8, context_tokens=2, context_dim=6)
        student.freeze_trunk()
        self.assertEqual(student.trainable_parameters(), student.context.parameters())

    def test_cross_attention_starts_as_identity(self):
        block = SemanticCrossAttention(4, 6, 8, np.random.default_rng(0))
        features = Tensor(rand(2, 4, 3, 3))
        out = block(features, Tensor(rand(2, 2, 6, seed=1)))
        np.testing.assert_array_equal(out.data, features.data)

    def test_mean_cosine(self):
        z = rand(4, 5)
        self.assertAlmostEqual(mean_cosine(z, 3 * z), 1.0)


class TestStructural(TripleTestCase):

    def test_gaussian_normalized(self):
        k = gaussian_kernel1d(1.5, 5)
        self.assertAlmostEqual(k.sum(), 1.0)
        np.testing.assert_allclose(k, k[::-1])

    def test_dog_kernel_sums_to_zero(self):
        self.assertAlmostEqual(dog_kernel(1.0, 2.0).sum(), 0.0, places=12)
        with pytest.raises(ValueError):
            dog_kernel(2.0, 1.0)

    def test_dog_of_constant_is_zero(self):
        for padding in ("reflect", "wrap"):
            out = compute_dog(np.full((1, 12, 12), 0.4), padding=padding)
            self.assertEqual(out.shape, (1, 12, 12))
            np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_dog_vanishes_on_affine_interior(self):
        i, j = np.mgrid[0:16, 0:16]
        out = compute_dog(0.03 * i + 0.01 * j)
        r = dog_kernel(1.0, 2.0).shape[0] // 2
        np.testing.assert_allclose(out[r:-r, r:-r], 0.0, atol=1e-13)

    def test_dog_wrap_mean_is_zero(self):
        i, j = np.mgrid[0:16, 0:16]
        ramp = (i * i + j * j) / 450.0
        ramp = ramp / np.ptp(ramp)
        for image in (ramp, np.random.default_rng(0).uniform(size=(16, 16))):
            span = np.ptp(image)
            self.assertLess(abs(compute_dog(image, padding="wrap").mean()), 1e-8 * span)
        with pytest.raises(ParameterError):
            compute_dog(ramp, padding="zeros")

    def test_dog_impulse(self):
        image = np.zeros((9, 9))
        image[4, 4] = 1.0
        out = compute_dog(image)
        np.testing.assert_allclose(out, dog_oracle(image, 1.0, 2.0), atol=1e-14)
        # reflected copies of the impulse sit 8 pixels away, beyond the kernel radius from the centre block
        diff = gaussian_2d(1.0, 6) - gaussian_2d(2.0, 6)
        np.testing.assert_allclose(out[3:6, 3:6], diff[5:8, 5:8], atol=1e-14)


    def test_dog_responds_to_edges(self):
        img = np.zeros((16, 16))
        img[:, 8:] = 1.0
        out = compute_dog(img)
        self.assertGreater(np.abs(out[:, 6:10]).max(), np.abs(out[:, :3]).max())

    def test_unknown_modality(self):
        with pytest.raises(UnknownKindError):
            resolve_modality("normals")

    def test_cue_shapes_must_agree(self):
        with pytest.raises(ShapeError):
            StructuralCues(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)), np.zeros((1, 5, 4)))

    def test_prior_output_shape(self):
        prior = StructuralPrior(np.random.default_rng(0), dim=8, latents=4)
        z = extract_structural(prior, cues())
        self.assertEqual(z.shape, (2, 4, 8))
        self.assertEqual(prior.tokens(cues()).shape, (2, 3 * 4, 8))

    def test_modality_embedding_separates_tokens(self):
        encoder = StructuralEncoder(4, np.random.default_rng(0))
        depth, dog = encoder.adapters[0], encoder.adapters[2]
        dog.weight.data, dog.bias.data = depth.weight.data.copy(), depth.bias.data.copy()
        cue = np.random.default_rng(1).uniform(size=(1, 1, 16, 16))
        with no_grad():
            a, b = encode_modality(cue, "depth", encoder).data, encode_modality(cue, "dog", encoder).data
            self.assertFalse(np.array_equal(a, b))
            encoder.embeddings.data[2] = encoder.embeddings.data[0]
            np.testing.assert_array_equal(encode_modality(cue, "dog", encoder).data, a)

    def test_token_count(self):
        encoder = StructuralEncoder(4, np.random.default_rng(0))
        for height, width in ((16, 16), (24, 32)):
            with no_grad():
                tokens = encode_modality(np.zeros((1, height, width)), "seg", encoder)
            self.assertEqual(tokens.shape, (1, (height // 8) * (width // 8), 4))
            self.assertEqual(encoder.tokens_per_modality(height, width), tokens.shape[1])

    def test_aggregate_ignores_token_order(self):
        aggregator = TokenAggregator(6, np.random.default_rng(0), latents=3, heads=2)
        tokens = rand(2, 7, 6)
        perm = np.random.default_rng(1).permutation(7)
        with no_grad():
            out = sta_aggregate(aggregator, Tensor(tokens)).data
            shuffled = sta_aggregate(aggregator, Tensor(tokens[:, perm])).data
        np.testing.assert_allclose(shuffled, out, atol=1e-10)

    def test_aggregate_matches_dense_attention(self):
        aggregator = TokenAggregator(4, np.random.default_rng(0), latents=2, heads=1)
        tokens = rand(3, 4)
        cross, refine = aggregator.cross, aggregator.refine
        latent = dense_attention(aggregator.latents.data @ cross.to_q.weight.data, tokens @ cross.to_k.weight.data,
                                 tokens @ cross.to_v.weight.data)
        p = latent @ aggregator.proj.weight.data + aggregator.proj.bias.data
        expected = dense_attention(p @ refine.to_q.weight.data, p @ refine.to_k.weight.data, p @ refine.to_v.weight.data)
        with no_grad():
            out = sta_aggregate(aggregator, Tensor(tokens[None])).data
        self.assertEqual(out.shape, (1, 2, 4))
        np.testing.assert_allclose(out[0], expected, atol=1e-12)

    def test_onehot_seg(self):
        prior = StructuralPrior(np.random.default_rng(0), dim=8, latents=4, onehot_seg=True)
        self.assertEqual(prior(cues(batch=1)).shape, (1, 4, 8))

    def test_film_values(self):
        out = film_modulate(Tensor([[[[2.0]]]]), Tensor([[[[0.5]]]]), Tensor([[[[-1.0]]]]))
        self.assertEqual(out.item(), 2.0)

    def test_adapter_starts_as_identity(self):
        adapter = StructuralAdapter(4, 8, np.random.default_rng(0))
        features = Tensor(rand(2, 4, 3, 3))
        out = adapter(features, Tensor(rand(2, 4, 8, seed=1)))
        np.testing.assert_array_equal(out.data, features.data)

    def test_prior_gradient(self):
        prior = StructuralPrior(np.random.default_rng(0), dim=4, latents=2)
        c = cues(batch=1, size=8)
        mask = rand(1, 2, 4, seed=3)
        err = grad_check(lambda: ops.sum(prior(c) * mask), prior.parameters(), samples=40,
                         rng=np.random.default_rng(1), min_magnitude=GRAD_FD_MIN)
        self.assertLess(err, 1e-4)


class TestDegradation(TripleTestCase):

    def test_class_loss_values(self):
        self.assertAlmostEqual(deg_class_loss(Tensor([[1.0, 0.0]]), [0], eps=0.01).item(), 0.318263, places=5)
        self.assertAlmostEqual(deg_class_loss(Tensor([[0.0, 0.0]]), [1]).item(), math.log(2.0))

    def test_class_loss_minimized_at_smoothed_target(self):
        eps = 0.01
        q = np.array([1.0 - eps + eps / 2, eps / 2])
        best = math.log(q[0] / q[1])
        offsets = np.linspace(-3.0, 3.0, 601)
        losses = [deg_class_loss(Tensor([[best + d, 0.0]]), [0], eps=eps).item() for d in offsets]
        self.assertEqual(int(np.argmin(losses)), 300)
        self.assertAlmostEqual(min(losses), float(-(q * np.log(q)).sum()), places=12)

    def test_class_loss_without_smoothing_is_cross_entropy(self):
        logits, labels = rand(4, 5), [0, 3, 1, 4]
        log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        expected = -np.mean(log_p[np.arange(4), labels])
        self.assertAlmostEqual(deg_class_loss(Tensor(logits), labels, eps=0.0).item(), expected, places=12)
        with pytest.raises(ParameterError):
            deg_class_loss(Tensor(logits), labels, eps=1.0)

    def test_class_loss_labels(self):
        with pytest.raises(LabelError):
            deg_class_loss(Tensor(rand(2, 5)), [0, 5])
        with pytest.raises(ShapeError):
            deg_class_loss(Tensor(rand(2, 5)), [0])

    def test_encoder_shapes(self):
        encoder = DegradationEncoder(3, np.random.default_rng(0), dim=8)
        x = rand(2, 3, 8, 8)
        self.assertEqual(extract_degradation(encoder, x).shape, (2, 8))
        self.assertEqual(encoder.logits(x).shape, (2, 5))
        self.assertEqual(len(encoder.encoder_parameters()), len(encoder.parameters()) - 2)

    def test_accuracy_range(self):
        encoder = DegradationEncoder(3, np.random.default_rng(0), dim=8)
        acc = classification_accuracy(encoder, rand(4, 3, 8, 8), [0, 1, 2, 3])
        self.assertIn(acc, (0.0, 0.25, 0.5, 0.75, 1.0))

    def test_sinusoidal_embedding(self):
        emb = sinusoidal_embedding([0, 3], dim=8)
        self.assertEqual(emb.shape, (2, 8))
        np.testing.assert_array_equal(emb[0], [0, 0, 0, 0, 1, 1, 1, 1])

    def test_modulation_starts_as_identity(self):
        modulator = TimeModulator(np.random.default_rng(0), time_dim=8, deg_dim=6, slots=3)
        z = Tensor(rand(6))
        out = modulate_time(5, z, modulator)
        np.testing.assert_array_equal(out.data, sinusoidal_embedding(5, 8))

    def test_two_slot_mixture(self):
        modulator = TimeModulator(np.random.default_rng(0), time_dim=4, deg_dim=3, slots=2)
        modulator.select.weight.data[:] = 0.0
        modulator.select.bias.data = np.array([1.0, -1.0])
        p1, p2 = modulator.prompts.data
        w1 = math.e / (math.e + 1.0 / math.e)
        with no_grad():
            mix = modulator.mixture(Tensor(rand(1, 3))).data[0]
        self.assertAlmostEqual(w1, 0.8808, places=4)
        np.testing.assert_allclose(mix, w1 * p1 + (1.0 - w1) * p2, atol=1e-12)

    def test_timestep_range(self):
        modulator = TimeModulator(np.random.default_rng(0), time_dim=8, deg_dim=6, slots=3)
        z = Tensor(rand(6))
        self.assertEqual(modulate_time([0, 10], z, modulator, T=10).shape, (2, 8))
        for tau in (-1, 11, [3, 12]):
            with pytest.raises(ScheduleError):
                modulate_time(tau, z, modulator, T=10)

    def test_prompt_weights_sum_to_one(self):
        modulator = TimeModulator(np.random.default_rng(0), time_dim=8, deg_dim=6, slots=3)
        w = modulator.weights(Tensor(rand(4, 6))).data
        np.testing.assert_allclose(w.sum(axis=1), 1.0)
