import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsmdp.fixtures import ladder_model, random_model
from rsmdp.model import (
    ModelError,
    Mdp,
    ModelParseError,
    ModelValidationError,
    StationaryPolicy,
    check_policy,
    dump_model,
    enumerate_stationary_policies,
    load_model,
    max_cost_norm,
    model_to_dict,
    policy_count,
)


def ladder_doc():
    return model_to_dict(ladder_model(0.5))


def test_round_trip_preserves_model():
    m = ladder_model(0.5)
    back = load_model(dump_model(m))
    assert back == m
    assert back.metadata == {"fixture": "example22", "rho": 0.5}


def test_arrays_are_read_only():
    m = ladder_model(0.5)
    with pytest.raises(ValueError):
        m.kernel[0, 0, 0] = 0.5


def test_cost_norm_and_counts():
    m = ladder_model(0.5)
    assert max_cost_norm(m) == 2.0
    assert policy_count(m) == 2
    assert [f.choice for f in enumerate_stationary_policies(m)] == [(0, 0, 0), (0, 1, 0)]


def test_malformed_json():
    with pytest.raises(ModelParseError):
        load_model("{not json")


@pytest.mark.parametrize(
    "mutate, state, action",
    [
        (lambda d: d["transitions"]["1"]["0"].update({"1": 0.6}), "1", "0"),
        (lambda d: d["cost"]["1"].pop("1"), "1", "1"),
        (lambda d: d["admissible"].update({"2": []}), "2", None),
        (lambda d: d["transitions"]["0"]["0"].update({"9": 0.0}), "0", "0"),
        (lambda d: d["cost"]["0"].update({"0": "cheap"}), "0", "0"),
        (lambda d: d["transitions"]["2"]["0"].update({"2": -0.25, "0": 1.25}), "2", "0"),
    ],
)
def test_validation_names_the_offender(mutate, state, action):
    doc = ladder_doc()
    mutate(doc)
    with pytest.raises(ModelValidationError) as err:
        load_model(json.dumps(doc))
    assert err.value.state == state
    if action is not None:
        assert err.value.action == action


def test_rows_are_not_renormalized():
    doc = ladder_doc()
    doc["transitions"]["1"]["0"]["1"] = 0.5 + 1e-6
    with pytest.raises(ModelValidationError):
        load_model(json.dumps(doc))
    doc["transitions"]["1"]["0"]["1"] = 0.5 + 1e-12
    assert load_model(json.dumps(doc)).kernel[1, 0, 1] == 0.5 + 1e-12


def test_missing_key():
    doc = ladder_doc()
    del doc["cost"]
    with pytest.raises(ModelError):
        load_model(json.dumps(doc))


def test_policy_checks():
    m = ladder_model(0.5)
    assert StationaryPolicy.from_names(m, {"0": "0", "1": "1", "2": "0"}).choice == (0, 1, 0)
    with pytest.raises(ValueError):
        check_policy(m, StationaryPolicy((1, 0, 0)))
    with pytest.raises(ValueError):
        check_policy(m, StationaryPolicy((0, 0)))


def test_from_arrays_defaults():
    m = Mdp.from_arrays([[1.0]], [[[1.0]]])
    assert m.states == ("0",) and m.actions == ("0",) and m.admissible == ((0,),)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), k=st.integers(1, 3))
def test_random_models_round_trip(seed, n, k):
    m = random_model(np.random.default_rng(seed), n, k)
    assert load_model(dump_model(m)) == m
    assert policy_count(m) == k**n
