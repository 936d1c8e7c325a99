import numpy as np
import pytest

from ctckit.encoder import EncoderConfig, encode, init_params
from ctckit.errors import ConfigurationError, ContractError
from ctckit.objectives import (combine_reports, ctc_objective,
                               hc_ctc_objective, para_ctc_objective,
                               run_objective, sc_ctc_objective)
from ctckit.tensor import backward, zero_grads


def make_model(levels=2, sizes=(5, 7), objective="hc-ctc", conditioning=False,
               layers=2, seed=0):
    config = EncoderConfig(layers=layers, levels=levels, d_model=8, n_heads=2,
                           d_ff=16, level_vocab_sizes=sizes,
                           conditioning=conditioning)
    params = init_params(config, feature_dim=6, objective=objective, seed=seed)
    return config, params


def test_total_is_mean_of_levels(rng):
    config, params = make_model()
    enc = encode(rng.normal(size=(9, 6)), config, params)
    report = hc_ctc_objective(enc, [[1, 2, 3], [1, 4]])
    assert report.n_levels == 2
    assert all(np.isfinite(v) for v in report.per_level)
    assert report.total_value == sum(report.per_level) / 2


def test_plain_objective_uses_final_head_only(rng):
    config, params = make_model()
    enc = encode(rng.normal(size=(9, 6)), config, params)
    report = ctc_objective(enc, [1, 2])
    assert report.n_levels == 1
    # same value as the final level of the tapped objective
    tapped = hc_ctc_objective(enc, [[1], [1, 2]])
    assert report.per_level[0] == tapped.per_level[1]


def test_sc_equals_hc_with_identical_vocabularies(rng):
    config, params = make_model(sizes=(6, 6))
    features = rng.normal(size=(8, 6))
    target = [2, 5, 1]

    enc_a = encode(features, config, params)
    sc = sc_ctc_objective(enc_a, target)
    backward(sc.total, leaves=params.values())
    sc_grads = {k: p.grad_view().copy() for k, p in params.items()}
    zero_grads(params.values())

    enc_b = encode(features, config, params)
    hc = hc_ctc_objective(enc_b, [target, target])
    backward(hc.total, leaves=params.values())

    assert sc.total_value == hc.total_value
    assert sc.per_level == hc.per_level
    for name, p in params.items():
        assert np.array_equal(sc_grads[name], p.grad_view()), name


def test_para_final_level_matches_plain_ctc(rng):
    config, params = make_model(objective="para-ctc")
    enc = encode(rng.normal(size=(9, 6)), config, params, interior_taps=False)
    para = para_ctc_objective(enc, [[1, 2], [3]])
    plain = ctc_objective(enc, [3])
    assert para.per_level[1] == plain.per_level[0]


def test_para_identity_adapter_reuses_final_states(rng):
    # identity adapter plus a head copied from the final level must give
    # exactly the final level's loss
    config, params = make_model(objective="para-ctc", sizes=(7, 7))
    params["head1.w"].data[...] = params["head2.w"].data
    params["head1.b"].data[...] = params["head2.b"].data
    enc = encode(rng.normal(size=(9, 6)), config, params, interior_taps=False)
    report = para_ctc_objective(enc, [[1, 2], [1, 2]])
    assert report.per_level[0] == report.per_level[1]


def test_infeasible_level_excluded_from_mean(rng):
    config, params = make_model()
    enc = encode(rng.normal(size=(3, 6)), config, params)
    # level 1 target needs 5 frames, level 2 fits in 3
    report = hc_ctc_objective(enc, [[1, 1, 2], [2]])
    assert report.per_level[0] == np.inf
    assert report.infeasible == [1, 0]
    assert report.total_value == report.per_level[1]


def test_all_levels_infeasible_gives_none_total(rng):
    config, params = make_model()
    enc = encode(rng.normal(size=(1, 6)), config, params)
    report = hc_ctc_objective(enc, [[1, 1], [2, 2]])
    assert report.total is None
    assert report.total_value == np.inf


def test_combine_reports_skips_infeasible_utterance(rng):
    config, params = make_model()
    enc_long = encode(rng.normal(size=(9, 6)), config, params)
    enc_short = encode(rng.normal(size=(2, 6)), config, params)
    good = hc_ctc_objective(enc_long, [[1, 2], [3]])
    bad = hc_ctc_objective(enc_short, [[1, 1, 2], [2, 2, 2]])
    batch = combine_reports([good, bad])
    assert batch.per_level == good.per_level
    assert batch.total_value == good.total_value
    assert batch.infeasible == [1, 1]


def test_combine_reports_validates_input():
    with pytest.raises(ContractError):
        combine_reports([])


def test_every_level_feeds_the_total(rng):
    # gradients reach each tap head and, with conditioning, the injections
    config, params = make_model(levels=2, conditioning=True, layers=3)
    enc = encode(rng.normal(size=(9, 6)), config, params)
    report = hc_ctc_objective(enc, [[1, 2], [3]])
    backward(report.total, leaves=params.values())
    for name in ("head1.w", "head2.w", "cond1.w"):
        assert np.abs(params[name].grad_view()).max() > 0, name


def test_run_objective_dispatch(rng):
    config, params = make_model(sizes=(6, 6))
    enc = encode(rng.normal(size=(8, 6)), config, params)
    report = run_objective("sc-ctc", enc, [[1, 2], [1, 2]])
    assert report.n_levels == 2
    with pytest.raises(ConfigurationError):
        run_objective("nope", enc, [[1]])


def test_tapped_objective_requires_tapped_encoder(rng):
    config, params = make_model()
    enc = encode(rng.normal(size=(6, 6)), config, params, interior_taps=False)
    with pytest.raises(ContractError):
        hc_ctc_objective(enc, [[1], [2]])


def test_level_target_count_must_match(rng):
    config, params = make_model()
    enc = encode(rng.normal(size=(6, 6)), config, params)
    with pytest.raises(ConfigurationError):
        hc_ctc_objective(enc, [[1]])
