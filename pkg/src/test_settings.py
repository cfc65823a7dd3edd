"""
Pipeline settings: defaults, config files, overrides and fingerprints.

Usage:
    cd src
    pytest test_settings.py
"""

from __future__ import annotations

import math
from dataclasses import replace

import pytest

from core import ChannelKind, ConfigError, InputError
from feature_selection import Measure
from learn import ModelKind
from lib.settings import STAGE_SETTINGS, PipelineSettings, load_settings, parse_value


def _write(tmp_path, text):
    path = tmp_path / "pipeline.env"
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def test_defaults():
    settings = load_settings()
    assert settings == PipelineSettings()
    assert settings.pencil().order_p == 6
    assert settings.features().dimension == 378
    assert settings.selection().measure is Measure.M
    assert settings.model_kind is ModelKind.SVM_RBF
    assert settings.synth_counts == (400, 400)


def test_enum_overrides_pass_through():
    settings = load_settings(None, {"measure": Measure.S, "model_kind": ModelKind.LR})
    assert settings.measure is Measure.S
    assert settings.selection().measure is Measure.S
    assert settings.model_kind is ModelKind.LR


def test_file_then_overrides(tmp_path):
    path = _write(tmp_path, "# stage settings\nPENCIL_ORDER=8\nMEASURE=f\n"
                            "CHANNELS=F, VPM\nSYNTH_SNR_DB=none\n")
    settings = load_settings(path, {"pencil_order": "10", "seed": None, "D_PRIME": 4})
    assert settings.pencil_order == 10
    assert settings.measure is Measure.F
    assert settings.channels == (ChannelKind.VPM, ChannelKind.F)
    assert settings.synth_snr_db is None
    assert settings.d_prime == 4
    assert settings.seed == 0


@pytest.mark.parametrize("text", [
    "PENCIL_ORDRE=6\n",
    "D_PRIME=ten\n",
    "D_PRIME\n",
    "FOLDS=1\n",
    "D_PRIME=0\n",
    "CHANNELS=VPM,XYZ\n",
    "BASELINE_AGGREGATE=median\n",
    "SYNTH_COUNTS=1,2,3\n",
    "PERCENTILE=nan\n",
])
def test_bad_config_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_settings(_write(tmp_path, text))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "absent.env")


def test_config_error_is_an_input_error():
    with pytest.raises(InputError):
        parse_value("NOT_A_KEY", "1")


def test_parse_value_spellings():
    assert parse_value("PENCIL_L", "AUTO") == "auto"
    assert parse_value("pencil_l", "40") == 40
    assert parse_value("SVM_GAMMA", "0.5") == 0.5
    assert parse_value("SYNTH_SNR_DB", "inf") == math.inf
    assert parse_value("MODEL_KIND", "lr") is ModelKind.LR
    assert parse_value("seed", 7) == 7


def test_as_env_round_trips(tmp_path):
    custom = replace(PipelineSettings(), pencil_l=40, error_threshold=0.005,
                     channels=(ChannelKind.IPM, ChannelKind.F), measure=Measure.S,
                     svm_gamma=0.25, synth_snr_db=35.5, synth_counts=(3, 0),
                     model_kind=ModelKind.LR)
    assert load_settings(_write(tmp_path, custom.as_env())) == custom
    assert load_settings(_write(tmp_path, PipelineSettings().as_env())) == PipelineSettings()


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------

def test_fingerprint_is_stable_hex():
    fp = PipelineSettings().fingerprint()
    assert fp == PipelineSettings().fingerprint()
    assert len(fp) == 16
    int(fp, 16)


def test_stage_fingerprints_follow_their_settings():
    base = PipelineSettings()
    tuned = replace(base, svm_c=10.0)
    assert tuned.stage_fingerprint("features") == base.stage_fingerprint("features")
    assert tuned.stage_fingerprint("train") != base.stage_fingerprint("train")
    assert replace(base, m_prime=5).stage_fingerprint("select") != base.stage_fingerprint("select")


def test_every_stage_names_real_settings():
    names = set(PipelineSettings.__dataclass_fields__)
    for stage, keys in STAGE_SETTINGS.items():
        assert set(keys) <= names, stage
