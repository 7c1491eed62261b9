import json

import numpy as np
import pytest

from twoscale.model import (GeneticSwitchParams, HillRate, ModelError, frozen_fast_chain, load_model,
                            ModelSpec, model_from_config, preset_model,
                            stationary_weights, validate_model)


def test_preset_parameters(params):
    assert params.b == 0.25 and params.gamma == 1.0
    assert params.f == HillRate(0.2, 10.0, 0.7)
    assert params.g == HillRate(3.0)


def test_switch_rates_shape_and_generator(switch, rng):
    z = rng.random((5, 2)) * 4
    lam = switch.rates(z)
    assert lam.shape == (5, 2, 4)
    Q = switch.generator(z)
    np.testing.assert_allclose(Q.sum(axis=-1), 0.0, atol=1e-14)
    # transcription only in the active state
    assert np.all(lam[:, 0, 0] == 0) and np.allclose(lam[:, 1, 0], 4.0)


def test_stationary_weights_two_state(switch, params, rng):
    z = rng.random((20, 2)) * 5
    w = stationary_weights(switch, z)
    f, g = params.f(z[:, 1]), params.g(z[:, 1])
    np.testing.assert_allclose(w[:, 1], f / (f + g), rtol=1e-13)


def test_stationary_weights_solve_balance(three_state):
    z = np.array([[0.3], [2.0]])
    w = stationary_weights(three_state, z)
    res = np.einsum("ni,nij->nj", w, three_state.generator(z))
    np.testing.assert_allclose(res, 0.0, atol=1e-13)
    np.testing.assert_allclose(w.sum(-1), 1.0)


def test_config_round_trip_matches_builder(switch, rng):
    rebuilt = model_from_config(switch.config)
    z = rng.random((10, 2)) * 3
    np.testing.assert_allclose(rebuilt.rates(z), switch.rates(z), rtol=1e-14)
    np.testing.assert_allclose(rebuilt.switch_matrix(z), switch.switch_matrix(z), rtol=1e-14)


def test_load_model_from_file(tmp_path, switch):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(switch.config))
    m = load_model(str(path))
    assert m.d == 2 and m.D == 2 and m.S == 4
    assert load_model("genetic-switch").params == switch.params


@pytest.mark.parametrize("config, match", [
    ({"d": 1, "D": 1, "stoichiometry": [[1]]}, "propensities"),
    ({"d": 1, "D": 1, "stoichiometry": [[0.5]], "propensities": ["1"]}, "integer"),
    ({"d": 1, "D": 1, "stoichiometry": [[1], [-1]], "propensities": ["1"]}, "reaction count"),
    ({"d": 1, "D": 2, "stoichiometry": [[1]], "propensities": ["1"],
      "switch_rates": [[None, "1"], [None, None]]}, "missing"),
])
def test_bad_configs(config, match):
    with pytest.raises(ModelError, match=match):
        model_from_config(config)


def test_bad_parameters():
    with pytest.raises(ModelError, match="b must be positive"):
        preset_model(overrides={"b": -1.0})
    with pytest.raises(ModelError):
        load_model("no-such-model")


def test_params_accept_plain_numbers():
    p = GeneticSwitchParams(b=1.0, gamma=1.0, f=2.0, g={"c0": 1.0})
    assert p.f == HillRate(2.0) and p.g == HillRate(1.0)


def test_validate_preset(switch):
    rep = validate_model(switch, [[0, 5], [0, 5]], samples=100)
    assert rep.ok
    assert rep.log_q_bounds[0] > -np.inf
    # translation/transcription gating is reported as a note, not a violation
    assert rep.notes


def test_validate_flags_negative_propensity():
    # the expression grammar cannot produce negative rates, so use a callable
    m = ModelSpec(1, 1, [[1]], lambda z: (1.0 - 2.0 * z[..., :1])[..., None, :],
                  lambda z: np.zeros(np.shape(z)[:-1] + (1, 1)))
    rep = validate_model(m, [[0, 2]], samples=50)
    assert not rep.ok


def test_frozen_chain_keeps_switch_only(switch):
    z = np.array([1.0, 0.3])
    fz = frozen_fast_chain(switch, z)
    assert np.all(fz.rates(np.zeros((3, 2))) == 0)
    np.testing.assert_allclose(fz.switch_matrix(np.array([4.0, 4.0])), switch.switch_matrix(z))
