"""Generative model: exact likelihood, mixture head, latents, persistence."""

import math

import numpy as np
import pytest
import torch

from conftest import bimodal_exemplars, constant_mean_model, make_exemplar
from trafficweave.dynamics import HumanAction, RobotAction
from trafficweave.features import HORIZON, Normalizer
from trafficweave.model import (
    BehaviorModel,
    GmmParams,
    LatentSpec,
    ModelConfig,
    ModelIOError,
)

LOG_2PI = math.log(2.0 * math.pi)


def test_latent_spec_indexing():
    spec = LatentSpec(n_z=2, k_z=4)
    assert spec.cardinality == 16
    assert spec.onehot_width == 8
    # Big-endian mixed radix: class 7 -> digits (1, 3); class 13 -> (3, 1).
    assert spec.class_digits(7) == (1, 3)
    assert spec.class_digits(13) == (3, 1)
    assert spec.class_digits(0) == (0, 0)
    assert spec.class_digits(15) == (3, 3)
    with pytest.raises(ValueError):
        spec.class_digits(16)
    with pytest.raises(ValueError):
        LatentSpec(n_z=7, k_z=2)  # 128 classes exceed the budget


def test_class_onehot_rows(tiny_model):
    onehot = tiny_model.class_onehot.numpy()
    spec = tiny_model.config.latent
    assert onehot.shape == (spec.cardinality, spec.onehot_width)
    assert (onehot.sum(axis=1) == spec.n_z).all()
    for z in range(spec.cardinality):
        digits = spec.class_digits(z)
        for j, d in enumerate(digits):
            assert onehot[z, j * spec.k_z + d] == 1.0


def test_config_json_round_trip():
    cfg = ModelConfig(latent=LatentSpec(3, 3), m_gmm=4, hidden=24)
    assert ModelConfig.from_json(cfg.to_json()) == cfg


def standard_normal_model() -> BehaviorModel:
    """Single-component head emitting an exact standard bivariate normal."""
    model = constant_mean_model(0.0, 0.0)
    raw_scale = math.log(math.expm1(1.0 - 1e-4))  # softplus(raw) = 1 - 1e-4
    with torch.no_grad():
        bias = model.gmm_head.bias.view(model.config.m_gmm, 6)
        bias[:, 3] = raw_scale
        bias[:, 4] = raw_scale
    return model


def test_log_likelihood_standard_normal_oracle():
    """With unit scales, zero means and zero correlation, the sequence
    log-likelihood of an all-zero future is exactly 15 * -log(2 pi)."""
    model = standard_normal_model()
    x, y = make_exemplar(np.zeros((HORIZON, 2)))
    ll = model.log_likelihood(x, y)
    assert ll == pytest.approx(HORIZON * -LOG_2PI, rel=1e-9)


def test_log_likelihood_off_mean_quadratic_penalty():
    model = standard_normal_model()
    acts = np.zeros((HORIZON, 2))
    acts[0] = [1.0, 2.0]
    x, y = make_exemplar(acts)
    ll = model.log_likelihood(x, y)
    assert ll == pytest.approx(HORIZON * -LOG_2PI - 0.5 * (1 + 4), rel=1e-9)


def test_identical_components_collapse():
    """A mixture whose components coincide scores exactly like a single
    component, whatever the weights."""
    cfg = ModelConfig(latent=LatentSpec(1, 1), m_gmm=3, hidden=8)
    model = constant_mean_model(0.3, -0.2, cfg)
    raw_scale = math.log(math.expm1(0.5))
    with torch.no_grad():
        bias = model.gmm_head.bias.view(3, 6)
        bias[:, 3] = raw_scale
        bias[:, 4] = raw_scale
        bias[:, 0] = torch.tensor([2.0, -1.0, 0.5])  # uneven weights
    single = constant_mean_model(0.3, -0.2,
                                 ModelConfig(latent=LatentSpec(1, 1), m_gmm=1,
                                             hidden=8))
    with torch.no_grad():
        sbias = single.gmm_head.bias.view(1, 6)
        sbias[:, 3] = raw_scale
        sbias[:, 4] = raw_scale
    x, y = make_exemplar(np.full((HORIZON, 2), 0.1))
    assert model.log_likelihood(x, y) == pytest.approx(
        single.log_likelihood(x, y), rel=1e-12)


def test_marginal_matches_per_class_enumeration(tiny_model):
    """Exact marginalization oracle: enumerating classes through the public
    single-step decoder reproduces batch_log_likelihood."""
    model = tiny_model
    x, y = make_exemplar(np.random.default_rng(5).normal(0, 1, (HORIZON, 2)))
    h_x, prior = model.encode(x)
    per_class = []
    for z in range(model.config.latent.cardinality):
        state = None
        prev = x.history_actions[-1][0]
        logp = 0.0
        for i in range(HORIZON):
            params, state = model.decode_step(h_x, z, prev, x.robot_future[i],
                                              state)
            a = np.array([y.actions[i].s_ddot, y.actions[i].tau_ddot])
            logp += math.log(gmm_density(params, a))
            prev = y.actions[i]
        per_class.append(math.log(prior[z]) + logp)
    expected = torch.logsumexp(torch.tensor(per_class), dim=0).item()
    assert model.log_likelihood(x, y) == pytest.approx(expected, rel=1e-7)


def gmm_density(params: GmmParams, a: np.ndarray) -> float:
    total = 0.0
    for w, m, s, r in zip(params.weights, params.means, params.scales,
                          params.corrs):
        z1 = (a[0] - m[0]) / s[0]
        z2 = (a[1] - m[1]) / s[1]
        q = (z1 * z1 - 2 * r * z1 * z2 + z2 * z2) / (1 - r * r)
        total += w * math.exp(-0.5 * q) / (2 * math.pi * s[0] * s[1]
                                           * math.sqrt(1 - r * r))
    return total


def test_single_step_density_normalizes(tiny_model):
    """2-D quadrature of one decode step's mixture density integrates to 1."""
    x, _ = make_exemplar(np.zeros((HORIZON, 2)))
    h_x, _ = tiny_model.encode(x)
    params, _ = tiny_model.decode_step(h_x, 0, HumanAction(0, 0),
                                       RobotAction(0, 0))
    lo, hi, n = -12.0, 12.0, 400
    grid = np.linspace(lo, hi, n)
    h = grid[1] - grid[0]
    total = 0.0
    for a1 in grid:
        for a2 in grid:
            total += gmm_density(params, np.array([a1, a2]))
    total *= h * h
    assert total == pytest.approx(1.0, abs=1e-2)


def test_prior_is_simplex(tiny_model):
    x, _ = make_exemplar(np.zeros((HORIZON, 2)))
    _, prior = tiny_model.encode(x)
    assert prior.shape == (tiny_model.config.latent.cardinality,)
    assert prior.sum() == pytest.approx(1.0, rel=1e-9)
    assert (prior > 0).all()


def test_scale_floor_is_exact():
    model = constant_mean_model(0.0, 0.0)
    x, _ = make_exemplar(np.zeros((HORIZON, 2)))
    h_x, _ = model.encode(x)
    params, _ = model.decode_step(h_x, 0, HumanAction(0, 0), RobotAction(0, 0))
    assert (params.scales == 1e-4).all()


def test_gmm_params_validation():
    with pytest.raises(ValueError):
        GmmParams(np.array([0.5, 0.4]), np.zeros((2, 2)),
                  np.full((2, 2), 0.1), np.zeros(2))
    with pytest.raises(ValueError):
        GmmParams(np.array([1.0]), np.zeros((1, 2)),
                  np.full((1, 2), 1e-6), np.zeros(1))
    with pytest.raises(ValueError):
        GmmParams(np.array([1.0]), np.zeros((1, 2)),
                  np.full((1, 2), 0.1), np.array([0.999]))


def test_decode_step_rejects_bad_class(tiny_model):
    x, _ = make_exemplar(np.zeros((HORIZON, 2)))
    h_x, _ = tiny_model.encode(x)
    with pytest.raises(ValueError):
        tiny_model.decode_step(h_x, 99, HumanAction(0, 0), RobotAction(0, 0))


def test_seeded_init_is_deterministic():
    cfg = ModelConfig(latent=LatentSpec(2, 2), m_gmm=2, hidden=8)
    a = BehaviorModel(cfg, seed=3)
    b = BehaviorModel(cfg, seed=3)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb
        assert torch.equal(va, vb)


def test_save_load_round_trip(tiny_model, tmp_path):
    path = str(tmp_path / "model.npz")
    tiny_model.save(path)
    loaded = BehaviorModel.load(path)
    assert loaded.config == tiny_model.config
    for k, v in tiny_model.state_dict().items():
        assert torch.equal(loaded.state_dict()[k], v), k
    # Behavior preserved bit-for-bit.
    x, y = make_exemplar(np.full((HORIZON, 2), 0.2))
    assert loaded.log_likelihood(x, y) == tiny_model.log_likelihood(x, y)


def test_load_rejects_corrupt_and_foreign_files(tmp_path):
    garbage = tmp_path / "garbage.npz"
    garbage.write_bytes(b"not a zip archive")
    with pytest.raises(ModelIOError):
        BehaviorModel.load(str(garbage))
    foreign = str(tmp_path / "foreign.npz")
    np.savez(open(foreign, "wb"), weights=np.zeros(3))
    with pytest.raises(ModelIOError):
        BehaviorModel.load(foreign)


def test_load_rejects_wrong_schema_version(tiny_model, tmp_path):
    import json
    path = str(tmp_path / "model.npz")
    tiny_model.save(path)
    data = dict(np.load(path, allow_pickle=False))
    meta = json.loads(bytes(data["__meta__"]).decode())
    meta["schema_version"] = 999
    data["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **data)
    with pytest.raises(ModelIOError):
        BehaviorModel.load(path)


def test_nonfinite_likelihood_raises():
    model = standard_normal_model()
    with torch.no_grad():
        model.gmm_head.bias.fill_(torch.nan)
    x, y = make_exemplar(np.zeros((HORIZON, 2)))
    with pytest.raises(FloatingPointError):
        model.log_likelihood(x, y)
