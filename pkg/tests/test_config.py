import json

import pytest

from hazediff.config import ConfigError, ExperimentConfig, load_config


def test_defaults():
    cfg = load_config(None)
    assert cfg.schedule.T == 2000 and cfg.schedule.beta_start == 1e-6 and cfg.schedule.beta_end == 1e-2
    assert cfg.fcb.ks == (3, 5, 7) and cfg.fcb.sigmas == (1.0, 2.0, 4.0)
    assert cfg.train.use_fcb and cfg.aug_seed is None


def test_round_trip(tmp_path):
    doc = {
        "schedule": {"T": 100},
        "train": {"iters": 7, "widths": [4, 8]},
        "aug": {"seed": 5},
        "fcb": {"gamma_sigma": 0.5},
        "synth": {"beta_min": 0.0, "beta_max": 0.0},
        "io": {"dataset": "d"},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.train.iters == 7 and cfg.train.widths == (4, 8) and cfg.aug_seed == 5
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_use_fcb_merging():
    assert not ExperimentConfig.from_dict({"fcb": {"use_fcb": False}}).train.use_fcb
    assert not ExperimentConfig.from_dict({"train": {"use_fcb": False}}).fcb.use_fcb
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"fcb": {"use_fcb": False}, "train": {"use_fcb": True}})


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {"extra": {}},
        {"train": {"bogus": 1}},
        {"train": []},
        {"schedule": {"T": 0}},
        {"fcb": {"ks": [4]}},
        {"synth": {"a_min": 0.9, "a_max": 0.8}},
        {"train": {"lr": -1}},
    ],
)
def test_rejects_bad_documents(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)
