"""Loss tests against scalar loop oracles written from the formulas."""
import math

import numpy as np
import pytest
import torch

from roadex.errors import DataError, ParameterError, ShapeError
from roadex.losses import (EPS, LossTargets, LossWeights, bce_loss,
                           direction_loss, hybrid_loss, structure_loss)
from roadex.network import LogitsBundle, RefinedOutput


def bce_oracle(prob, target):
    total, n = 0.0, 0
    for p, t in zip(prob.flatten().tolist(), target.flatten().tolist()):
        p = min(max(p, EPS), 1.0 - EPS)
        total += -(t * math.log(p) + (1.0 - t) * math.log(1.0 - p))
        n += 1
    return total / n


def l1_oracle(pred, target):
    total, n = 0.0, 0
    for a, b in zip(pred.flatten().tolist(), target.flatten().tolist()):
        total += abs(a - b)
        n += 1
    return total / n


def ce_oracle(logits, target):
    # mean over pixels with class < 4 of -logit[c] + log sum_j exp(logit[j])
    _, h, w = logits.shape
    total, n = 0.0, 0
    for i in range(h):
        for j in range(w):
            c = int(target[i, j])
            if c >= 4:
                continue
            z = [float(logits[k, i, j]) for k in range(4)]
            m = max(z)
            lse = m + math.log(sum(math.exp(v - m) for v in z))
            total += -z[c] + lse
            n += 1
    return total / n if n else 0.0


def rand_prob(rng, shape):
    return torch.from_numpy(rng.uniform(0, 1, size=shape))


class TestBCE:
    def test_perfect_prediction(self):
        t = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
        assert bce_loss(t, t).item() < 1e-6

    def test_uniform_half(self):
        p = torch.full((4, 4), 0.5, dtype=torch.float64)
        t = torch.from_numpy((np.arange(16).reshape(4, 4) % 2).astype(np.float64))
        assert abs(bce_loss(p, t).item() - math.log(2)) < 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = rand_prob(rng, (8, 8))
        t = torch.from_numpy((rng.random((8, 8)) < 0.5).astype(np.float64))
        got = bce_loss(p, t).item()
        want = bce_oracle(p, t)
        assert abs(got - want) <= 1e-6 * max(1.0, abs(want))

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 2\).*\(3, 3\)"):
            bce_loss(torch.rand(2, 2), torch.rand(3, 3))

    def test_extreme_probs_finite(self):
        p = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
        t = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        v = bce_loss(p, t).item()
        assert math.isfinite(v) and v > 0


class TestStructure:
    def test_identical(self):
        x = torch.rand(5, 5, dtype=torch.float64)
        assert structure_loss(x, x).item() == 0.0

    def test_single_cell(self):
        a = torch.tensor([[0.2]], dtype=torch.float64)
        b = torch.tensor([[0.7]], dtype=torch.float64)
        assert abs(structure_loss(a, b).item() - 0.5) < 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_loop_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        a, b = rand_prob(rng, (5, 5)), rand_prob(rng, (5, 5))
        want = l1_oracle(a, b)
        assert abs(structure_loss(a, b).item() - want) <= 1e-6 * max(1.0, want)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            structure_loss(torch.rand(2, 2), torch.rand(2, 3))


class TestDirection:
    def test_saturated_correct(self):
        tgt = torch.from_numpy(np.random.default_rng(0).integers(0, 4, (6, 6)))
        logits = torch.full((4, 6, 6), -10.0, dtype=torch.float64)
        logits.scatter_(0, tgt.unsqueeze(0), 10.0)
        assert direction_loss(logits, tgt).item() < 1e-4

    def test_uniform_logits(self):
        tgt = torch.zeros(4, 4, dtype=torch.long)
        logits = torch.zeros(4, 4, 4, dtype=torch.float64)
        assert abs(direction_loss(logits, tgt).item() - math.log(4)) < 1e-12

    def test_all_non_road_gives_zero(self):
        tgt = torch.full((4, 4), 4, dtype=torch.long)
        assert direction_loss(torch.randn(4, 4, 4, dtype=torch.float64),
                              tgt).item() == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_loop_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        logits = torch.from_numpy(rng.normal(size=(4, 6, 6)))
        tgt = torch.from_numpy(rng.integers(0, 5, (6, 6)))
        got = direction_loss(logits, tgt).item()
        want = ce_oracle(logits, tgt)
        assert abs(got - want) <= 1e-6 * max(1.0, abs(want))

    def test_shift_invariance_per_pixel(self):
        rng = np.random.default_rng(5)
        logits = torch.from_numpy(rng.normal(size=(4, 6, 6)))
        tgt = torch.from_numpy(rng.integers(0, 5, (6, 6)))
        shift = torch.from_numpy(rng.normal(size=(1, 6, 6)))
        a = direction_loss(logits, tgt).item()
        b = direction_loss(logits + shift, tgt).item()
        assert abs(a - b) < 1e-9

    def test_bad_class_raises(self):
        with pytest.raises(DataError):
            direction_loss(torch.randn(4, 2, 2), torch.full((2, 2), 5))

    def test_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            direction_loss(torch.randn(5, 2, 2), torch.zeros(2, 2).long())


def random_bundle_and_targets(seed, b=2, size=16, scale=8):
    rng = np.random.default_rng(seed)
    bundle = LogitsBundle(
        torch.from_numpy(rng.normal(size=(b, 1, size, size))),
        torch.from_numpy(rng.normal(size=(b, 4, size, size))),
        torch.from_numpy(rng.uniform(0, 1, size=(b, 1, size // scale,
                                                 size // scale))))
    logits = torch.from_numpy(rng.normal(size=(b, 1, size, size)))
    refined = RefinedOutput(logits * 0, torch.sigmoid(logits))
    targets = LossTargets(
        torch.from_numpy((rng.random((b, 1, size, size)) < 0.3)
                         .astype(np.float64)),
        torch.from_numpy(rng.integers(0, 5, (b, size, size))),
        torch.from_numpy(rng.uniform(0, 1, size=(b, 1, size // scale,
                                                 size // scale))))
    return bundle, refined, targets


class TestHybrid:
    def test_total_is_weighted_sum(self):
        bundle, refined, targets = random_bundle_and_targets(0)
        w = LossWeights()
        r = hybrid_loss(bundle, refined, targets, w)
        want = (w.alpha * r.l_seg + w.beta * r.l_struct + w.gamma * r.l_direct
                + w.theta_w * r.l_ref).item()
        assert abs(r.total.item() - want) <= 1e-6 * max(1.0, abs(want))

    def test_default_weights(self):
        w = LossWeights()
        assert (w.alpha, w.beta, w.gamma, w.theta_w) == (1.0, 0.5, 0.2, 1.0)

    def test_all_components_zero(self):
        size = 16
        mask = torch.ones(1, 1, size, size, dtype=torch.float64)
        seg_logits = torch.full((1, 1, size, size), 30.0, dtype=torch.float64)
        dir_logits = torch.full((4, size, size), -10.0, dtype=torch.float64)
        dir_logits[1] = 10.0
        struct = torch.full((1, 1, 2, 2), 0.4, dtype=torch.float64)
        bundle = LogitsBundle(seg_logits, dir_logits.unsqueeze(0),
                              struct.clone())
        refined = RefinedOutput(seg_logits * 0, torch.sigmoid(seg_logits))
        targets = LossTargets(mask, torch.ones(1, size, size).long(), struct)
        r = hybrid_loss(bundle, refined, targets)
        assert r.total.item() < 1e-4

    def test_doubling_gamma_doubles_direction_term(self):
        bundle, refined, targets = random_bundle_and_targets(1)
        base = hybrid_loss(bundle, refined, targets,
                           LossWeights(gamma=0.0)).total.item()
        one = hybrid_loss(bundle, refined, targets,
                          LossWeights(gamma=0.2)).total.item()
        two = hybrid_loss(bundle, refined, targets,
                          LossWeights(gamma=0.4)).total.item()
        assert abs((two - base) - 2 * (one - base)) <= 1e-9 * max(1.0, abs(one))

    def test_absent_refiner_and_heads_contribute_zero(self):
        bundle, refined, targets = random_bundle_and_targets(2)
        bundle.dir_logits = None
        bundle.struct_pred = None
        r = hybrid_loss(bundle, None, targets)
        assert r.l_direct.item() == 0.0 and r.l_struct.item() == 0.0
        assert r.l_ref.item() == 0.0
        assert abs(r.total.item() - r.l_seg.item()) < 1e-12

    def test_non_negative_and_finite(self):
        for seed in range(5):
            bundle, refined, targets = random_bundle_and_targets(10 + seed)
            r = hybrid_loss(bundle, refined, targets)
            for k, v in r.detached().items():
                assert math.isfinite(v) and v >= 0.0, k

    def test_bad_weights(self):
        with pytest.raises(ParameterError):
            LossWeights(alpha=-0.1)
        with pytest.raises(ParameterError):
            LossWeights(gamma=float("nan"))


class TestGradientDescentSanity:
    def test_fixed_batch_losses_decrease(self):
        # optimize free prediction tensors on a 4-image synthetic batch:
        # 50 steps must cut the hybrid total by at least half
        from roadex.labels import direction_map_reference, structure_target
        from roadex.synth import SynthConfig, synth_generate

        samples = synth_generate(SynthConfig(image_size=64, n_images=4, seed=8))
        mask = torch.stack([torch.from_numpy(s.mask.astype(np.float64))
                            for s in samples]).unsqueeze(1)
        direction = torch.stack(
            [torch.from_numpy(direction_map_reference(s.mask).astype(np.int64))
             for s in samples])
        structure = torch.stack(
            [torch.from_numpy(structure_target(s.mask, 8)) for s in samples]
        ).unsqueeze(1)
        targets = LossTargets(mask, direction, structure)

        torch.manual_seed(0)
        seg = torch.randn(4, 1, 64, 64, dtype=torch.float64, requires_grad=True)
        direc = torch.randn(4, 4, 64, 64, dtype=torch.float64, requires_grad=True)
        struct_logit = torch.randn(4, 1, 8, 8, dtype=torch.float64,
                                   requires_grad=True)
        ref = torch.randn(4, 1, 64, 64, dtype=torch.float64, requires_grad=True)
        opt = torch.optim.Adam([seg, direc, struct_logit, ref], lr=0.05)
        first = None
        for step in range(50):
            opt.zero_grad()
            bundle = LogitsBundle(seg, direc, torch.sigmoid(struct_logit))
            refined = RefinedOutput(ref, torch.sigmoid(seg.detach() + ref))
            report = hybrid_loss(bundle, refined, targets)
            report.total.backward()
            opt.step()
            if first is None:
                first = report.total.item()
        assert report.total.item() <= 0.5 * first
