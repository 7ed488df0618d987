import json
import pytest
from vtubes.config import PipelineConfig, ScoringConfig, TrackingConfig
from vtubes.error import DataError, UsageError

def test_defaults():
    cfg = PipelineConfig()
    assert cfg.tracking.gate_threshold == pytest.approx(11.3449, abs=1e-4)
    assert cfg.tracking.window == 15
    assert cfg.scoring.area_gp == 4000.0
    assert cfg.select.batch_len == 100

def test_save_load_round_trip(tmp_path):
    cfg = PipelineConfig().replace(scoring={ 'alpha': 7.5 }, seed=3)
    path = str(tmp_path / 'cfg.json')
    cfg.save(path)
    assert PipelineConfig.load(path) == cfg
    assert PipelineConfig.load(path).scoring.alpha == 7.5

def test_partial_config_fills_defaults(tmp_path):
    path = tmp_path / 'cfg.json'
    path.write_text(json.dumps({ 'select': { 'eps2': 4.0 } }))
    cfg = PipelineConfig.load(str(path))
    assert cfg.select.eps2 == 4.0
    assert cfg.select.eps1 == 100.0
    assert cfg.tracking == TrackingConfig()

def test_unknown_keys():
    with pytest.raises(DataError):
        PipelineConfig.from_dict({ 'tracker': {} })
    with pytest.raises(DataError):
        PipelineConfig.from_dict({ 'scoring': { 'gamma': 1.0 } })

def test_invalid_values():
    with pytest.raises(DataError):
        ScoringConfig(w1=0.0, w2=0.0, w3=0.0)
    with pytest.raises(DataError):
        ScoringConfig(alpha=1.0)
    with pytest.raises(DataError):
        TrackingConfig(min_length=0)

def test_missing_or_bad_file(tmp_path):
    with pytest.raises(UsageError):
        PipelineConfig.load(str(tmp_path / 'nope.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('{')
    with pytest.raises(DataError):
        PipelineConfig.load(str(bad))
