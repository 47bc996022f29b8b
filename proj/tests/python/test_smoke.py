import json

import numpy as np
import pytest

import blindspot


@pytest.fixture(scope="module")
def blobs_model():
    pixels, labels = blindspot.synthetic_blobs(200, seed=3)
    net = blindspot.train("fc8-2", pixels, labels, 8, 8, max_iterations=100)
    return net, pixels, labels


def test_training_fits_blobs(blobs_model):
    net, pixels, labels = blobs_model
    assert net.input_dim == 64
    assert net.output_dim == 2
    preds = np.argmax(net.forward_batch(pixels), axis=0)
    assert np.mean(preds != np.array(labels)) < 0.05
    probs = net.forward(pixels[:, 0])
    assert probs.sum() == pytest.approx(1.0)


def test_attack_reaches_target_inside_box(blobs_model):
    net, pixels, labels = blobs_model
    x = pixels[:, 0]
    target = 1 - net.predict(x)
    res = blindspot.minimal_perturbation(net, x, target, bisection_steps=10, inner_iterations=100)
    assert res.achieved
    assert net.predict(res.perturbed) == target
    assert res.perturbed.min() >= 0.0 and res.perturbed.max() <= 1.0
    assert res.distortion == pytest.approx(blindspot.distortion(x, res.perturbed))


def test_model_round_trip(tmp_path, blobs_model):
    net = blobs_model[0]
    path = tmp_path / "m.json"
    blindspot.save_model(net, path)
    again = blindspot.load_model(path)
    for a, b in zip(net.layers, again.layers):
        assert np.array_equal(a.weights, b.weights)
    assert json.loads(path.read_text())


def test_bounds(blobs_model):
    net = blobs_model[0]
    product, layers = blindspot.network_bound(net)
    assert product == pytest.approx(np.prod(layers))
    plain, _ = blindspot.network_bound(net, tightened=False)
    assert plain >= product
    delta = np.zeros((3, 3))
    delta[1, 1] = 1.0
    assert blindspot.conv_bound([delta], 1, 1, grid_points=8) == pytest.approx(1.0)


def test_errors_map_to_python(tmp_path):
    with pytest.raises(ValueError):
        blindspot.train("cnn2", np.zeros((4, 2)), [0, 1], 2, 2)
    code, _, err = blindspot.run_cli(["--out", str(tmp_path), "train"])
    assert code == 1
    assert "spec" in err
