import pytest

from pseudovc.config import ConfigError, config_hash, dump_config, load_config


def test_toy_defaults_validate():
    cfg = load_config()
    assert cfg.profile == "toy"
    assert cfg.train.perturbation == "pseudo"
    assert cfg.teacher.speaker_sampling is False


def test_paper_profile_defaults(tmp_path):
    (tmp_path / "empty.yaml").write_text("")
    cfg = load_config(tmp_path / "empty.yaml", profile="paper")
    t = cfg.train
    assert (t.alpha, t.n_pseudo, t.batch_size, t.segment_frames, t.total_steps) == (0.01, 25, 64, 128, 200_000)
    assert cfg.model.d_content == 1024
    assert cfg.model.d_z == 192 and cfg.model.d_spk == 256
    assert (t.lr, t.betas, t.lr_decay) == (2e-4, (0.8, 0.99), 0.999875)


def test_paper_profile_invariants_enforced():
    with pytest.raises(ConfigError, match="segment_frames"):
        load_config(profile="paper", overrides=["train.segment_frames=64"])


def test_alpha_range():
    with pytest.raises(ConfigError, match="alpha"):
        load_config(overrides=["train.alpha=1.5"])


def test_alpha_zero_accepted():
    assert load_config(overrides=["train.alpha=0"]).train.alpha == 0.0


def test_all_problems_reported_at_once():
    with pytest.raises(ConfigError) as info:
        load_config(overrides=["train.alpha=-1", "train.n_pseudo=-2", "train.bogus=1", "nonsense=3"])
    text = " ".join(info.value.problems)
    for needle in ("alpha", "n_pseudo", "bogus", "nonsense"):
        assert needle in text


def test_type_errors_reported():
    with pytest.raises(ConfigError, match="batch_size"):
        load_config(overrides=["train.batch_size=many"])


def test_seed_propagates_to_sections():
    cfg = load_config(seed=7)
    assert cfg.teacher.seed == cfg.train.seed == 7
    assert load_config(seed=7, overrides=["train.seed=3"]).train.seed == 3


def test_hop_product_checked():
    with pytest.raises(ConfigError, match="upsample"):
        load_config(overrides=["model.upsample_rates=[8, 8, 4]"])


def test_snapshot_roundtrip(tmp_path):
    cfg = load_config(overrides=["train.alpha=0.1", "corpus.root=/data"], seed=5)
    dump_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_non_mapping_file(tmp_path):
    (tmp_path / "bad.yaml").write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
