"""Defaults, validation, JSON round trip, and variant projection."""

import os

import pytest

from scaledig.config import (ConfigError, PhaseOpt, TrainConfig, from_dict,
                             load_config, project_variant, save_config,
                             to_dict)


def test_defaults_are_published_settings():
    cfg = TrainConfig()
    assert (cfg.n1, cfg.n2, cfg.v) == (500, 1500, 160)
    assert (cfg.k, cfg.f_mic, cfg.f_mac, cfg.m) == (64, 10, 22, 50)
    assert cfg.f_total == 32
    assert (cfg.lambda_latent, cfg.lambda_rgb, cfg.lambda_ae) == (1.0, 1.0, 0.1)
    assert (cfg.warmup_epochs, cfg.stage1_epochs) == (50, 50)
    assert (cfg.ls_epochs, cfg.ra_epochs) == (30, 50)

    assert cfg.warmup.batch_size == 512
    assert cfg.warmup.lr == {r: 1e-2 for r in
                             ("micro", "renderer", "coeffs", "basis")}
    assert cfg.warmup.scheduler == "multistep"
    assert (cfg.warmup.decay_factor, cfg.warmup.milestones) == (0.3, (20, 40))

    assert cfg.stage1.batch_size == 32
    assert cfg.stage1.lr["encoder"] == cfg.stage1.lr["micro"] == 1e-4
    assert cfg.stage1.lr["coeffs"] == cfg.stage1.lr["basis"] == 1e-2

    assert cfg.latent_supervision.scheduler == "exponential"
    assert cfg.latent_supervision.decay_factor == 0.941
    assert all(v == 1e-2 for v in cfg.latent_supervision.lr.values())

    assert cfg.rgb_alignment.lr["decoder"] == 1e-4
    assert cfg.rgb_alignment.lr["micro"] == 1e-3
    assert cfg.rgb_alignment.lr["basis"] == 1e-2


def test_derived_properties():
    cfg = TrainConfig()
    assert cfg.ae_factor == 4
    assert cfg.latent_mode and cfg.has_basis
    assert cfg.c_out == cfg.c_lat == 4
    rgb = TrainConfig(variant="rgb-baseline", f_mic=32, f_mac=0)
    assert not rgb.latent_mode and not rgb.has_basis
    assert rgb.c_out == 3


def test_validation_errors():
    with pytest.raises(ConfigError):
        TrainConfig(variant="nope")
    with pytest.raises(ConfigError):
        TrainConfig(n1=0)
    with pytest.raises(ConfigError):
        TrainConfig(n1=10, n2=5)
    with pytest.raises(ConfigError):
        TrainConfig(v=1)
    with pytest.raises(ConfigError):
        TrainConfig(f_mic=0, f_mac=0)
    with pytest.raises(ConfigError):
        TrainConfig(k=1)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_ae=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(n_samples=0)
    with pytest.raises(ConfigError):
        TrainConfig(image_size=30)  # not divisible by the latent factor
    with pytest.raises(ConfigError):
        TrainConfig(variant="ours-macro", f_mic=4)
    with pytest.raises(ConfigError):
        TrainConfig(variant="ours-micro", f_mac=8)
    with pytest.raises(ConfigError):
        TrainConfig(variant="ours-m1", m=50)


def test_phase_opt_validation():
    with pytest.raises(ValueError):
        PhaseOpt(batch_size=0, lr={"micro": 1e-2})
    with pytest.raises(ValueError):
        PhaseOpt(batch_size=4, lr={"discriminator": 1e-2})
    with pytest.raises(ValueError):
        PhaseOpt(batch_size=4, lr={"micro": 1e-2}, decay_factor=0.0)
    with pytest.raises(ValueError):
        PhaseOpt(batch_size=4, lr={"micro": 1e-2}, scheduler="multistep",
                 decay_factor=0.3, milestones=(9, 3))
    with pytest.raises(ValueError):
        PhaseOpt(batch_size=4, lr={"micro": 1e-2}, scheduler="cosine")


def test_roundtrip_through_json(tmp_path):
    cfg = TrainConfig(n1=4, n2=4, v=10, image_size=32, k=16, f_mic=4,
                      f_mac=8, m=8, seed=3)
    path = os.path.join(tmp_path, "cfg.json")
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg
    assert to_dict(back) == to_dict(cfg)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        from_dict({"n1": 4, "momentum": 0.9})


def test_load_config_rejects_invalid_json(tmp_path):
    path = os.path.join(tmp_path, "broken.json")
    with open(path, "w") as f:
        f.write("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)


def test_project_variant_preserves_feature_budget():
    base = TrainConfig(n1=2, n2=2, v=4, k=8, f_mic=4, f_mac=8, m=6)
    micro = project_variant(base, "ours-micro")
    assert (micro.f_mic, micro.f_mac) == (12, 0)
    macro = project_variant(base, "ours-macro")
    assert (macro.f_mic, macro.f_mac) == (0, 12)
    m1 = project_variant(base, "ours-m1")
    assert m1.m == 1 and (m1.f_mic, m1.f_mac) == (4, 8)
    rgb = project_variant(base, "rgb-baseline")
    assert (rgb.f_mic, rgb.f_mac) == (12, 0)
    assert not rgb.latent_mode
    same = project_variant(base, "ours")
    assert (same.f_mic, same.f_mac, same.m) == (4, 8, 6)
    with pytest.raises(ConfigError):
        project_variant(base, "bigger")
    # base is untouched
    assert (base.f_mic, base.f_mac, base.m) == (4, 8, 6)
