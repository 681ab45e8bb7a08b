import json

import numpy as np
import pytest

from uxcascade.errors import ConfigError
from uxcascade.flowsheet import (FlowSheet, flowsheet_to_dict, load_flowsheet,
                                 reference_config_path, reference_flowsheet,
                                 stage_flows)


def test_reference_flowsheet_loads():
    fs = reference_flowsheet()
    assert fs.n_stages == 16
    assert fs.n_states == 96
    assert 1 <= fs.feed_stage < fs.n_stages


def _config_dict(**overrides):
    d = flowsheet_to_dict(reference_flowsheet())
    d.update(overrides)
    return d


def _write(tmp_path, d):
    path = tmp_path / "fs.json"
    path.write_text(json.dumps(d))
    return path


def test_load_rejects_feed_stage_zero(tmp_path):
    with pytest.raises(ConfigError, match="feed_stage"):
        load_flowsheet(_write(tmp_path, _config_dict(feed_stage=0)))


def test_load_rejects_inverted_bounds(tmp_path):
    with pytest.raises(ConfigError, match="u_min"):
        load_flowsheet(_write(tmp_path, _config_dict(u_min=90.0)))


def test_load_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_flowsheet(_write(tmp_path, _config_dict(extra_knob=1.0)))


def test_load_rejects_missing_keys(tmp_path):
    d = _config_dict()
    del d["K_U"]
    with pytest.raises(ConfigError, match="missing"):
        load_flowsheet(_write(tmp_path, d))


def test_load_rejects_malformed_json(tmp_path):
    path = tmp_path / "fs.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        load_flowsheet(path)


@pytest.mark.parametrize("field,value", [
    ("A_E", -1.0), ("O_E_nominal", 0.0), ("TBP_total", 0.0),
    ("K_U", -2.0), ("V_mixer_total", 0.0), ("raffinate_tol", 0.0),
    ("U_feed", -0.1), ("du_max", -1.0),
])
def test_validation_names_offending_field(field, value):
    d = _config_dict()
    d[field] = value
    with pytest.raises(ConfigError, match=field.split("_")[0]):
        FlowSheet(**d)


def test_zero_inlet_concentrations_allowed():
    fs = FlowSheet(**_config_dict(U_feed=0.0, H_scrub=0.0, H_solvent_in=0.0))
    assert fs.U_feed == 0.0


def test_no_feed_gives_uniform_aqueous_flow(fs):
    sf = stage_flows(fs, 0.0, fs.O_E_nominal)
    assert np.all(sf.A == fs.A_E)


def test_feed_splits_aqueous_flow(fs):
    sf = stage_flows(fs, fs.A_F_nominal, fs.O_E_nominal)
    # extraction section carries scrub + feed, scrub section only scrub
    assert sf.A[fs.feed_stage - 1] == pytest.approx(fs.A_E + fs.A_F_nominal)
    assert sf.A[fs.feed_stage] == pytest.approx(fs.A_E)
    assert np.all(sf.O == fs.O_E_nominal)


def test_mixer_volumes_sum_constant(fs):
    sf = stage_flows(fs, fs.A_F_nominal, fs.O_E_nominal)
    assert np.allclose(sf.VM + sf.WM, fs.V_mixer_total, rtol=1e-14)
    assert np.allclose(sf.VM / sf.WM, sf.A / sf.O, rtol=1e-14)


def test_mixer_volume_monotone_in_feed(fs):
    low = stage_flows(fs, 10.0, fs.O_E_nominal)
    high = stage_flows(fs, 50.0, fs.O_E_nominal)
    extraction = slice(0, fs.feed_stage)
    assert np.all(high.VM[extraction] > low.VM[extraction])
    assert np.all(high.WM[extraction] < low.WM[extraction])
    # scrub stages do not see the feed
    assert np.allclose(high.VM[fs.feed_stage:], low.VM[fs.feed_stage:])


def test_routing_is_a_chain(fs):
    sf = stage_flows(fs, fs.A_F_nominal, fs.O_E_nominal)
    # each stage has exactly one aqueous and one organic upstream source
    assert sf.aq_in_stage[-1] == -1          # scrub enters the last stage
    assert sf.og_in_stage[0] == -1           # solvent enters the first stage
    assert list(sf.aq_in_stage[:-1]) == list(range(1, fs.n_stages))
    assert list(sf.og_in_stage[1:]) == list(range(fs.n_stages - 1))
    # aqueous inflow of the feed stage comes from the scrub-side neighbor
    assert sf.A_in[fs.feed_stage - 1] == pytest.approx(fs.A_E)


def test_stage_flows_preconditions(fs):
    with pytest.raises(ValueError):
        stage_flows(fs, -1.0, fs.O_E_nominal)
    with pytest.raises(ValueError):
        stage_flows(fs, 10.0, 0.0)


def test_reference_config_is_packaged():
    assert reference_config_path().exists()
