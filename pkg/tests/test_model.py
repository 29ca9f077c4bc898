import math

import numpy as np
import pytest

from ifedrec.exceptions import DimensionError
from ifedrec.model import (
    ClientModel,
    MetaAttributeNetwork,
    attribute_representation,
    init_client_model,
    init_meta_network,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from ifedrec.nn import Layer, MlpParams


def _manual_ncf(model, rows):
    out = []
    for v in rows:
        h = np.concatenate([model.user_embedding, v])
        for layer in model.predictor.layers:
            z = np.array([sum(h[i] * layer.weight[i, j] for i in range(len(h))) + layer.bias[j]
                          for j in range(layer.out_dim)])
            h = np.maximum(z, 0) if layer.activation == "relu" else z
        out.append(1 / (1 + math.exp(-h[0])))
    return np.array(out)


class TestPredict:
    def test_zero_predictor_gives_half(self, rng):
        model = init_client_model("ncf", 4, rng)
        zero = model.predictor.with_parameters(
            {k: np.zeros_like(v) for k, v in model.predictor.parameters().items()})
        model = ClientModel("ncf", zero, model.user_embedding)
        np.testing.assert_array_equal(predict(model, rng.normal(size=(3, 4))), 0.5)

    def test_deterministic(self, rng):
        model = init_client_model("pfedrec", 6, rng)
        row = rng.normal(size=(1, 6))
        assert predict(model, np.vstack([row, row])).tolist()[0] == predict(model, row)[0]

    def test_ncf_matches_manual(self, rng):
        model = init_client_model("ncf", 6, rng)
        model.predictor = model.predictor.with_parameters(
            {"layers.0.bias": rng.normal(size=6), "layers.2.bias": rng.normal(size=1)})
        rows = rng.normal(size=(5, 6))
        np.testing.assert_allclose(predict(model, rows), _manual_ncf(model, rows), atol=1e-12, rtol=0)

    def test_ncf_wiring(self, rng):
        model = init_client_model("ncf", 8, rng)
        assert [l.weight.shape for l in model.predictor.layers] == [(16, 8), (8, 4), (4, 1)]
        assert init_client_model("pfedrec", 8, rng).user_embedding is None

    def test_strictly_inside_unit_interval(self, rng):
        model = init_client_model("pfedrec", 3, rng)
        model.predictor = model.predictor.with_parameters({"layers.0.bias": np.array([500.0])})
        p = predict(model, np.zeros((2, 3)))
        assert np.all((p > 0) & (p < 1))

    def test_pfedrec_shared_predictor_identical(self, rng):
        a = init_client_model("pfedrec", 5, rng)
        b = ClientModel("pfedrec", a.predictor.copy())
        rows = rng.normal(size=(7, 5))
        np.testing.assert_array_equal(predict(a, rows), predict(b, rows))

    def test_dimension_error(self, rng):
        with pytest.raises(DimensionError):
            predict(init_client_model("ncf", 4, rng), np.zeros((2, 5)))


class TestMetaNetwork:
    def test_identity(self, rng):
        net = MetaAttributeNetwork(MlpParams((Layer(np.eye(3), np.zeros(3)),)))
        x = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(attribute_representation(net, x), x)

    def test_row_permutation(self, rng):
        net = init_meta_network(5, 3, rng)
        x = rng.normal(size=(6, 5))
        perm = rng.permutation(6)
        np.testing.assert_array_equal(attribute_representation(net, x[perm]),
                                      attribute_representation(net, x)[perm])

    def test_matches_affine_map(self, rng):
        net = init_meta_network(5, 3, rng)
        net = MetaAttributeNetwork(net.params.with_parameters({"layers.0.bias": rng.normal(size=3)}))
        x = rng.normal(size=(6, 5))
        W, b = net.params.layers[0].weight, net.params.layers[0].bias
        manual = np.array([[sum(x[r, i] * W[i, j] for i in range(5)) + b[j] for j in range(3)]
                           for r in range(6)])
        np.testing.assert_allclose(attribute_representation(net, x), manual, atol=1e-12, rtol=0)

    def test_dimension_error(self, rng):
        with pytest.raises(DimensionError):
            attribute_representation(init_meta_network(5, 3, rng), np.zeros((2, 4)))

    def test_init_bounds(self, rng):
        w = init_meta_network(16, 4, rng).params.layers[0].weight
        assert np.all(np.abs(w) <= 0.25)


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    tensors = {"a": rng.normal(size=(3, 4)), "b": np.array([np.pi, -0.0, 1e-310])}
    save_checkpoint(tmp_path / "c.npz", tensors, {"k": [1, 2]})
    back, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta == {"k": [1, 2]}
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
