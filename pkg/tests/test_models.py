import json

import numpy as np
import pytest
import torch

from vamce.errors import FormatError, ShapeError
from vamce.models import SpeechVAE, load_model, reparam_sample, save_model
from vamce.numerics import LOGVAR_CLAMP, RngStream


def _numpy_forward(vae, power, z):
    p = {k: v.numpy() for k, v in vae.state_dict().items()}
    h = np.tanh(power @ p["enc_hidden.weight"].T + p["enc_hidden.bias"])
    mean = h @ p["enc_mean.weight"].T + p["enc_mean.bias"]
    var = np.exp(h @ p["enc_logvar.weight"].T + p["enc_logvar.bias"])
    h2 = np.tanh(z @ p["dec_hidden.weight"].T + p["dec_hidden.bias"])
    sigma2 = np.exp(h2 @ p["dec_logvar.weight"].T + p["dec_logvar.bias"])
    return mean, var, sigma2


def test_zero_network():
    vae = SpeechVAE(10, 3, 5).zero_()
    mean, var = vae.encode(torch.rand(10, dtype=torch.float64))
    assert torch.equal(mean, torch.zeros(3, dtype=torch.float64))
    assert torch.equal(var, torch.ones(3, dtype=torch.float64))
    assert torch.equal(vae.decode(torch.randn(3, dtype=torch.float64)), torch.ones(10, dtype=torch.float64))


def test_forward_matches_layer_by_layer_oracle(tiny_vae):
    rng = np.random.default_rng(0)
    power = rng.gamma(2.0, 0.5, (6, 33))
    z = rng.standard_normal((6, 4))
    mean, var = tiny_vae.encode(torch.from_numpy(power))
    sigma2 = tiny_vae.decode(torch.from_numpy(z))
    mean_ref, var_ref, sigma2_ref = _numpy_forward(tiny_vae, power, z)
    assert np.allclose(mean.numpy(), mean_ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(var.numpy(), var_ref, rtol=1e-12)
    assert np.allclose(sigma2.numpy(), sigma2_ref, rtol=1e-12)
    assert bool((var > 0).all())


def test_decode_clamps_adversarial_inputs():
    vae = SpeechVAE(8, 2, 4).glorot_init_(0)
    with torch.no_grad():
        vae.dec_logvar.weight.mul_(1e3)
    z = torch.tensor([[1e6, -1e6], [-1e6, 1e6], [0.0, 0.0]], dtype=torch.float64)
    sigma2 = vae.decode(z)
    assert bool((sigma2 >= np.exp(-LOGVAR_CLAMP) * (1 - 1e-12)).all())
    assert bool((sigma2 <= np.exp(LOGVAR_CLAMP) * (1 + 1e-12)).all())


def test_encode_decode_guards(tiny_vae):
    with pytest.raises(ShapeError):
        tiny_vae.encode(torch.ones(32, dtype=torch.float64))
    with pytest.raises(ShapeError):
        tiny_vae.decode(torch.ones(5, dtype=torch.float64))
    with pytest.raises(ArithmeticError):
        tiny_vae.decode(torch.tensor([0.0, float("nan"), 0.0, 0.0], dtype=torch.float64))
    with pytest.raises(ValueError):
        SpeechVAE(8, 8, 4)


def test_glorot_init_is_seeded_and_uniform():
    a = SpeechVAE(33, 4, 16).glorot_init_(3)
    b = SpeechVAE(33, 4, 16).glorot_init_(3)
    for (name, pa), pb in zip(a.named_parameters(), b.parameters()):
        assert torch.equal(pa, pb), name
    bound = np.sqrt(6.0 / (33 + 16))
    assert float(a.enc_hidden.weight.abs().max()) <= bound
    assert torch.equal(a.enc_hidden.bias, torch.zeros(16, dtype=torch.float64))


def test_reparam_sample():
    mean = torch.tensor([1.0, -2.0], dtype=torch.float64)
    assert torch.equal(reparam_sample(mean, torch.zeros(2, dtype=torch.float64), RngStream(0)), mean)

    z = reparam_sample(torch.ones(100_000, dtype=torch.float64), torch.full((100_000,), 4.0, dtype=torch.float64), RngStream(1))
    assert 0.97 <= float(z.mean()) <= 1.03
    assert 3.8 <= float(z.var()) <= 4.2

    a = reparam_sample(mean, torch.ones(2, dtype=torch.float64), RngStream(9))
    b = reparam_sample(mean, torch.ones(2, dtype=torch.float64), RngStream(9))
    assert torch.equal(a, b)


def test_model_round_trip_is_exact(tmp_path, tiny_vae):
    path = str(tmp_path / "vae.json")
    save_model(tiny_vae, path)
    loaded = load_model(path)
    assert (loaded.n_freqs, loaded.latent_dim, loaded.hidden_dim) == (33, 4, 16)
    for (name, a), b in zip(tiny_vae.state_dict().items(), loaded.state_dict().values()):
        assert torch.equal(a, b), name


def test_load_model_errors(tmp_path, tiny_vae):
    with pytest.raises(FileNotFoundError):
        load_model(str(tmp_path / "missing.json"))

    path = tmp_path / "vae.json"
    save_model(tiny_vae, str(path))
    text = path.read_text()

    truncated = tmp_path / "truncated.json"
    truncated.write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_model(str(truncated))

    container = json.loads(text)
    container["schema"] = "vamce-vae-0"
    old = tmp_path / "old.json"
    old.write_text(json.dumps(container))
    with pytest.raises(FormatError, match="schema"):
        load_model(str(old))

    container = json.loads(text)
    container["params"]["dec_logvar.weight"]["data"] = container["params"]["dec_logvar.weight"]["data"][:-1]
    bad_shape = tmp_path / "bad_shape.json"
    bad_shape.write_text(json.dumps(container))
    with pytest.raises(FormatError):
        load_model(str(bad_shape))


def test_wrong_frequency_count_is_a_shape_error(tiny_vae):
    with pytest.raises(ShapeError, match="F=513"):
        tiny_vae.check_n_freqs(513, "mixture")
