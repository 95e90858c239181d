"""Relevance propagation: single-layer hand oracles plus map-level checks.

The per-layer rule is checked against closed-form matrix math on isolated
layers (linear, batch norm, max pool), then the full map is exercised for
shape, determinism, conditioning, and the constant-output stub case.
"""

import numpy as np
import pytest
import torch
from torch import nn

from serexport.crp import (EPSILON, UnsupportedLayerError, _eps_backward,
                           check_supported, epsilon_lrp)
from serexport.model import ModelBundle, init_bundle

from .conftest import SMALL_H, SMALL_LABELS, SMALL_W


def stabilize(z):
    return z + np.where(z >= 0, EPSILON, -EPSILON)


class TestLayerRule:
    def test_linear_matches_hand_formula(self):
        torch.manual_seed(0)
        layer = nn.Linear(4, 3).double()
        a = torch.randn(1, 4, dtype=torch.float64)
        rel = torch.randn(1, 3, dtype=torch.float64)

        got = _eps_backward(layer, a, rel).numpy()

        w = layer.weight.detach().numpy()
        b = layer.bias.detach().numpy()
        av = a.numpy()
        z = av @ w.T + b
        s = rel.numpy() / stabilize(z)
        expected = av * (s @ w)
        assert np.allclose(got, expected, rtol=0, atol=1e-12)

    def test_batchnorm_matches_hand_formula(self):
        torch.manual_seed(1)
        bn = nn.BatchNorm2d(3).double().eval()
        with torch.no_grad():
            bn.weight.copy_(torch.tensor([1.5, -0.5, 2.0]))
            bn.bias.copy_(torch.tensor([0.1, 0.2, -0.3]))
            bn.running_mean.copy_(torch.tensor([0.5, -1.0, 0.0]))
            bn.running_var.copy_(torch.tensor([1.0, 4.0, 0.25]))
        a = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        rel = torch.randn(1, 3, 2, 2, dtype=torch.float64)

        got = _eps_backward(bn, a, rel).numpy()

        shape = (1, 3, 1, 1)
        scale = (bn.weight.detach() /
                 torch.sqrt(bn.running_var + bn.eps)).numpy().reshape(shape)
        shift = (bn.bias.detach().numpy().reshape(shape)
                 - bn.running_mean.numpy().reshape(shape) * scale)
        z = a.numpy() * scale + shift
        expected = a.numpy() * scale * (rel.numpy() / stabilize(z))
        assert np.allclose(got, expected, rtol=0, atol=1e-12)

    def test_maxpool_routes_to_winners_only(self):
        pool = nn.MaxPool2d(2)
        rng = np.random.default_rng(2)
        a = torch.as_tensor(rng.uniform(0.5, 2.0, size=(1, 1, 4, 4)))
        rel = torch.ones(1, 1, 2, 2, dtype=torch.float64)

        got = _eps_backward(pool, a, rel).numpy()[0, 0]

        av = a.numpy()[0, 0]
        for bi in range(2):
            for bj in range(2):
                cell = av[2 * bi:2 * bi + 2, 2 * bj:2 * bj + 2]
                out = got[2 * bi:2 * bi + 2, 2 * bj:2 * bj + 2]
                winner = np.unravel_index(np.argmax(cell), (2, 2))
                for i in range(2):
                    for j in range(2):
                        if (i, j) == winner:
                            z = cell[winner]
                            assert out[i, j] == pytest.approx(z / (z + EPSILON))
                        else:
                            assert out[i, j] == 0.0

    def test_relevance_conserved_through_unbiased_linear(self):
        torch.manual_seed(3)
        layer = nn.Linear(6, 4, bias=False).double()
        a = torch.randn(1, 6, dtype=torch.float64)
        rel = torch.randn(1, 4, dtype=torch.float64)
        got = _eps_backward(layer, a, rel)
        z = layer(a).detach()
        expected_total = float((rel * z / (z + torch.sign(z) * EPSILON)).sum())
        assert float(got.sum()) == pytest.approx(expected_total, abs=1e-10)


class TestSupportCheck:
    def test_accepts_the_stock_architecture(self, small_bundle):
        check_supported(small_bundle.model)

    def test_names_the_offending_layer(self):
        bundle = init_bundle(SMALL_LABELS, SMALL_H, SMALL_W, seed=0)
        bundle.model.stem_relu = nn.Sigmoid()
        with pytest.raises(UnsupportedLayerError, match="stem_relu"):
            check_supported(bundle.model)
        with pytest.raises(UnsupportedLayerError, match="Sigmoid"):
            epsilon_lrp(bundle, np.zeros((SMALL_H, SMALL_W)), "sad")


class TestFullMap:
    def test_shape_and_dtype(self, small_bundle, small_matrix):
        r = epsilon_lrp(small_bundle, small_matrix, "angry")
        assert r.shape == (SMALL_H, SMALL_W)
        assert r.dtype == np.float64
        assert np.all(np.isfinite(r))

    def test_deterministic(self, small_bundle, small_matrix):
        a = epsilon_lrp(small_bundle, small_matrix, "sad")
        b = epsilon_lrp(small_bundle, small_matrix, "sad")
        assert np.array_equal(a, b)

    def test_targets_condition_the_map(self, small_bundle, small_matrix):
        a = epsilon_lrp(small_bundle, small_matrix, "angry")
        b = epsilon_lrp(small_bundle, small_matrix, "sad")
        assert not np.array_equal(a, b)

    def test_unknown_target_rejected(self, small_bundle, small_matrix):
        with pytest.raises(ValueError, match="unknown target"):
            epsilon_lrp(small_bundle, small_matrix, "bored")

    def test_zero_input_gives_zero_map(self, small_bundle):
        r = epsilon_lrp(small_bundle, np.zeros((SMALL_H, SMALL_W)), "happy")
        assert np.abs(r).max() == 0.0

    def test_constant_output_stub_gives_near_zero_map(self, small_matrix):
        bundle = init_bundle(SMALL_LABELS, SMALL_H, SMALL_W, seed=9)
        with torch.no_grad():
            for name, p in bundle.model.named_parameters():
                if "weight" in name and p.dim() > 1:
                    p.zero_()
            bundle.model.head.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))

        other = np.random.default_rng(8).normal(size=(SMALL_H, SMALL_W))
        p1 = bundle.probabilities(torch.as_tensor(small_matrix,
                                                  dtype=torch.float32))
        p2 = bundle.probabilities(torch.as_tensor(other, dtype=torch.float32))
        assert torch.equal(p1, p2), "stub should ignore its input"

        r = epsilon_lrp(bundle, small_matrix, "sad")
        assert np.abs(r).max() < 1e-6
