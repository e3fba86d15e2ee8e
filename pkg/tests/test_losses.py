"""Tests for the loss terms and the weighted objective."""

from __future__ import annotations

import math
from types import SimpleNamespace

import pytest
import torch


def _full_mask() -> torch.Tensor:
    mask = torch.zeros(6, 6, dtype=torch.long)
    mask[1:3, 1:3] = 1
    mask[3:5, 1:3] = 2
    mask[1:5, 4] = 3
    return mask


def test_rec_loss_examples():
    from sdaug.losses import rec_loss

    image = torch.zeros(1, 1, 4, 4)
    assert float(rec_loss(image, image)) == 0.0
    assert float(rec_loss(image, torch.full_like(image, 0.5))) == pytest.approx(0.5)


def test_rec_loss_matches_elementwise_sum():
    from sdaug.losses import rec_loss

    gen = torch.Generator().manual_seed(0)
    a, b = torch.rand(2, 1, 5, 7, generator=gen, dtype=torch.float64), torch.rand(2, 1, 5, 7, generator=gen, dtype=torch.float64)
    expected = sum(abs(x - y) for x, y in zip(a.flatten().tolist(), b.flatten().tolist())) / a.numel()
    assert float(rec_loss(a, b)) == pytest.approx(expected, abs=1e-7)


def test_rec_loss_shape_mismatch():
    from sdaug.errors import ShapeError
    from sdaug.losses import rec_loss

    with pytest.raises(ShapeError):
        rec_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


def test_latent_regression_identity_and_offset():
    from sdaug.losses import latent_regression_loss

    anatomy = torch.zeros(1, 8, 4, 4)
    echo = SimpleNamespace(decoder=lambda a, z: z, modality_encoder=lambda image: image)
    assert float(latent_regression_loss(echo, anatomy, torch.randn(8))) == 0.0
    blank = SimpleNamespace(decoder=lambda a, z: z, modality_encoder=lambda image: torch.zeros_like(image))
    assert float(latent_regression_loss(blank, anatomy, torch.ones(1, 8))) == pytest.approx(1.0)


def test_latent_regression_gradient_matches_finite_differences(tiny_arch):
    from torch.func import functional_call

    from sdaug.losses import latent_regression_loss
    from sdaug.sdnet import SDNet

    torch.manual_seed(0)
    model = SDNet(tiny_arch).double().eval()
    anatomy = (torch.rand(1, 8, 8, 8) > 0.5).double()
    z = torch.randn(1, 8, dtype=torch.float64)
    weight = model.decoder.out.weight.detach().clone().requires_grad_(True)
    bias = model.decoder.out.bias.detach().clone().requires_grad_(True)

    def objective(w, b):
        stub = SimpleNamespace(
            decoder=lambda a, code: functional_call(model.decoder, {"out.weight": w, "out.bias": b}, (a, code)),
            modality_encoder=model.modality_encoder,
        )
        return latent_regression_loss(stub, anatomy, z)

    assert torch.autograd.gradcheck(objective, (weight, bias), eps=1e-4, atol=1e-5, rtol=1e-3)


def test_sample_modality_prior_is_seeded():
    from sdaug.losses import sample_modality_prior

    first = sample_modality_prior(3, 8, torch.Generator().manual_seed(1))
    second = sample_modality_prior(3, 8, torch.Generator().manual_seed(1))
    assert first.shape == (3, 8)
    assert torch.equal(first, second)


def test_dice_perfect_overlap():
    from sdaug.losses import dice_loss

    mask = _full_mask()
    probs = torch.nn.functional.one_hot(mask, 4).permute(2, 0, 1).float()
    assert float(dice_loss(probs, mask)) <= 1e-6


def test_dice_disjoint():
    from sdaug.losses import dice_loss

    mask = _full_mask()
    probs = torch.zeros(1, 4, 6, 6)
    probs[:, 0] = 1.0
    assert float(dice_loss(probs, mask[None])) == pytest.approx(1.0, abs=1e-6)


def test_dice_two_by_two_toy():
    from sdaug.losses import dice_loss

    probs = torch.zeros(4, 2, 2, dtype=torch.float64)
    probs[1, 0, :] = 1.0
    probs[0, 1, :] = 1.0
    mask = torch.tensor([[1, 0], [0, 0]])
    eps = 1e-6
    class_one = (2 * 1 + eps) / (2 + 1 + eps)
    expected = 1.0 - (class_one + 1.0 + 1.0) / 3.0
    assert float(dice_loss(probs, mask)) == pytest.approx(expected, abs=1e-6)


def test_dice_shape_mismatch():
    from sdaug.errors import ShapeError
    from sdaug.losses import dice_loss

    with pytest.raises(ShapeError, match="do not match"):
        dice_loss(torch.zeros(1, 4, 5, 5), torch.zeros(5, 6, dtype=torch.long))


def test_focal_single_pixel():
    from sdaug.losses import focal_loss

    probs = torch.tensor([0.5, 0.5, 0.0, 0.0]).view(1, 4, 1, 1)
    value = float(focal_loss(probs, torch.zeros(1, 1, dtype=torch.long)))
    assert value == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-6)
    assert value == pytest.approx(0.04332, abs=1e-5)


def test_focal_perfect_confidence_is_zero():
    from sdaug.losses import focal_loss

    mask = _full_mask()
    probs = torch.nn.functional.one_hot(mask, 4).permute(2, 0, 1).float()
    assert float(focal_loss(probs, mask)) == 0.0


def test_focal_reduces_to_cross_entropy():
    from sdaug.losses import focal_loss

    torch.manual_seed(0)
    logits = torch.randn(2, 4, 6, 6, dtype=torch.float64)
    mask = torch.randint(0, 4, (2, 6, 6))
    expected = torch.nn.functional.cross_entropy(logits, mask)
    value = focal_loss(torch.softmax(logits, dim=1), mask, gamma=0.0, alpha=1.0)
    assert float(value) == pytest.approx(float(expected), abs=1e-9)


def test_focal_is_monotone_in_true_class_probability():
    from sdaug.losses import focal_loss

    values = []
    for p in (0.1, 0.3, 0.5, 0.7, 0.9):
        probs = torch.tensor([p, 1 - p, 0.0, 0.0]).view(1, 4, 1, 1)
        values.append(float(focal_loss(probs, torch.zeros(1, 1, dtype=torch.long))))
    assert values == sorted(values, reverse=True)


@pytest.mark.parametrize("gamma,alpha", [(-1.0, 0.25), (2.0, 0.0), (2.0, 1.5)])
def test_focal_parameter_validation(gamma, alpha):
    from sdaug.losses import focal_loss

    with pytest.raises(ValueError, match="focal"):
        focal_loss(torch.full((1, 4, 2, 2), 0.25), torch.zeros(2, 2, dtype=torch.long), gamma=gamma, alpha=alpha)


@pytest.mark.parametrize("name", ["dice", "focal"])
def test_segmentation_loss_gradients(name):
    from sdaug.losses import dice_loss, focal_loss

    loss = {"dice": dice_loss, "focal": focal_loss}[name]
    gen = torch.Generator().manual_seed(3)
    logits = torch.randn(2, 4, 3, 3, generator=gen, dtype=torch.float64, requires_grad=True)
    mask = torch.randint(0, 4, (2, 3, 3), generator=gen)
    assert torch.autograd.gradcheck(
        lambda x: loss(torch.softmax(x, dim=1), mask), (logits,), eps=1e-4, atol=1e-5, rtol=1e-3
    )


def test_rec_loss_gradient():
    from sdaug.losses import rec_loss

    gen = torch.Generator().manual_seed(5)
    image = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
    recon = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda r: rec_loss(image, r), (recon,), eps=1e-4, atol=1e-5, rtol=1e-3)


def _terms(rec=0.2, zrec=0.1, dice=0.3, focal=0.05):
    from sdaug.losses import LossTerms

    return LossTerms(*(torch.tensor(v) for v in (rec, zrec, dice, focal)))


def test_total_loss_presets():
    from sdaug.losses import LossWeights, total_loss

    assert float(total_loss(_terms(), LossWeights.labeled())) == pytest.approx(0.65)
    assert float(total_loss(_terms(), LossWeights.unlabeled())) == pytest.approx(0.3)
    assert float(total_loss(_terms(0.0, 0.0, 0.0, 0.0), LossWeights.labeled())) == 0.0
    assert float(total_loss(_terms(), LossWeights(0, 0, 0, 0))) == 0.0


def test_total_loss_unlabeled_ignores_segmentation_terms():
    from sdaug.losses import LossWeights, total_loss

    weights = LossWeights.unlabeled()
    assert float(total_loss(_terms(dice=0.9, focal=5.0), weights)) == float(total_loss(_terms(), weights))


def test_total_loss_divergence_names_term():
    from sdaug.errors import TrainingDivergenceError
    from sdaug.losses import LossWeights, total_loss

    with pytest.raises(TrainingDivergenceError, match="'zrec'") as info:
        total_loss(_terms(zrec=float("nan")), LossWeights.labeled())
    assert info.value.term == "zrec"


def test_total_loss_requires_weighted_terms():
    from sdaug.losses import LossTerms, LossWeights, total_loss

    with pytest.raises(ValueError, match="'dice'"):
        total_loss(LossTerms(rec=torch.tensor(0.1), zrec=torch.tensor(0.1)), LossWeights.labeled())
    assert float(total_loss(LossTerms(rec=torch.tensor(0.1), zrec=torch.tensor(0.2)), LossWeights.unlabeled())) == pytest.approx(0.3)


def test_loss_weights_validation():
    from sdaug.losses import LossWeights

    with pytest.raises(ValueError, match="'focal'"):
        LossWeights(focal=-1.0)
    with pytest.raises(ValueError, match="'rec'"):
        LossWeights(rec=float("inf"))
    assert LossWeights.segmentation_only() == LossWeights(0.0, 0.0, 1.0, 1.0)


def test_loss_terms_as_floats():
    from sdaug.losses import LossTerms

    values = LossTerms(rec=torch.tensor(0.5)).as_floats()
    assert values["rec"] == 0.5
    assert math.isnan(values["dice"])


def test_unlabeled_objective_leaves_segmentor_without_gradient(tiny_arch):
    from sdaug.losses import LossTerms, LossWeights, dice_loss, focal_loss, latent_regression_loss, rec_loss, total_loss
    from sdaug.sdnet import SDNet

    torch.manual_seed(0)
    model = SDNet(tiny_arch)
    images = torch.rand(2, 1, 32, 32) * 2 - 1
    out = model(images)
    mask = torch.zeros(2, 32, 32, dtype=torch.long)
    terms = LossTerms(
        rec=rec_loss(images, out.reconstruction),
        zrec=latent_regression_loss(model, out.anatomy.channels, torch.randn(2, 8)),
        dice=dice_loss(out.probs, mask),
        focal=focal_loss(out.probs, mask),
    )
    total_loss(terms, LossWeights.unlabeled()).backward()
    assert all(p.grad is None or not p.grad.any() for p in model.segmentor.parameters())
    assert any(p.grad is not None and p.grad.any() for p in model.decoder.parameters())
