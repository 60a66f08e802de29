import numpy as np
import pytest

from ikrnet.errors import ConfigError, InvalidArgumentError
from ikrnet.model import (
    IKrNetConfig,
    build,
    classify_scores,
    count_parameters,
    forward,
    predict_scores,
    toy_config,
)
from ikrnet.nn import Tensor, bce_loss
from ikrnet.nn.gradcheck import gradcheck
from ikrnet.nn.module import Linear


def closed_form_count(cfg: IKrNetConfig) -> int:
    """Parameter count written out from the layer list, independent of the model code."""
    bn = 2 if cfg.use_batchnorm else 0
    total = 0
    for lk, k in cfg.branches:
        f0 = cfg.initial_filters
        total += lk * f0 + (bn * f0 if cfg.use_batchnorm else f0)
        cin = f0
        for i in range(cfg.n_blocks):
            cout = f0 * cfg.filter_growth_factor ** (i // cfg.filter_growth_every)
            def conv(ci, co, kk, groups=1):
                return co * (ci // groups) * kk + (bn * co if cfg.use_batchnorm else co)
            if cfg.block_type == "inverted":
                hid = cin * cfg.expansion_factor
                if cfg.expansion_factor != 1:
                    total += conv(cin, hid, 1)
                total += conv(hid, hid, k, groups=hid)
                sq = max(1, hid // cfg.se_reduction)
                total += hid * sq + sq + sq * hid + hid
                total += conv(hid, cout, 1)
            else:
                total += conv(cin, cout, k) + conv(cout, cout, k)
            cin = cout
        if cin != cfg.branch_out_channels:
            total += cin * cfg.branch_out_channels + cfg.branch_out_channels
    C = cfg.branch_out_channels * len(cfg.branches)
    H = cfg.bilstm_hidden
    flat = C * cfg.branch_out_len
    if cfg.bilstm_layers:
        fin = C
        for _ in range(cfg.bilstm_layers):
            total += 2 * (4 * H * fin + 4 * H * H + 4 * H)
            fin = 2 * H
        if cfg.use_skip_link:
            total += flat * 2 * H + 2 * H
        head_in = 2 * H
    else:
        head_in = flat
    total += head_in * 2 * H + 2 * H + 2 * H + 1
    return total


def test_toy_count_by_hand():
    # front 120+16, two blocks of 532, bilstm 1088, skip fc 528, head 272+17
    model = build(toy_config())
    assert count_parameters(model) == 3105 == closed_form_count(toy_config())


def test_single_linear_count():
    assert count_parameters(Linear(np.random.default_rng(0), 4, 2)) == 10


@pytest.mark.parametrize("overrides", [
    {}, {"branches": ((15, 3), (31, 7))}, {"bilstm_layers": 0}, {"bilstm_layers": 2},
    {"use_skip_link": False}, {"block_type": "basic"}, {"use_batchnorm": False},
    {"expansion_factor": 1}, {"branch_out_channels": 12}, {"n_blocks": 3, "strides": (1, 2, 2), "filter_growth_every": 1},
])
def test_count_matches_closed_form(overrides):
    cfg = toy_config(**overrides)
    model = build(cfg)
    assert count_parameters(model) == closed_form_count(cfg)
    scores = forward(model, np.random.default_rng(0).standard_normal((2, 1, 500)).astype(np.float32)).data
    assert scores.shape == (2,) and np.all((scores >= 0) & (scores <= 1))


def test_default_config_recipe_and_parameter_band():
    cfg = IKrNetConfig()
    assert cfg.branches == ((125, 25), (75, 15), (31, 7), (15, 3))
    assert cfg.strides == (1, 5, 1, 5, 1, 4, 1, 4, 1, 3)
    assert (cfg.initial_filters, cfg.n_blocks, cfg.branch_out_channels, cfg.bilstm_layers) == (64, 10, 256, 2)
    n = closed_form_count(cfg)
    assert 17_000_000 <= n <= 31_000_000
    assert count_parameters(build(cfg)) == n


def test_toy_forward_contract():
    model = build(toy_config(), seed=3)
    x = np.random.default_rng(1).standard_normal((2, 1, 500)).astype(np.float32)
    s = forward(model, x).data
    assert s.shape == (2,) and np.all((0 <= s) & (s <= 1))


def test_build_is_deterministic_in_seed():
    a, b, c = build(toy_config(), seed=5), build(toy_config(), seed=5), build(toy_config(), seed=6)
    for (na, pa), (nb, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    assert any(pa.data.tobytes() != pc.data.tobytes() for pa, pc in zip(a.parameters(), c.parameters()))


def test_duplicated_rows_score_identically_in_eval():
    model = build(toy_config(), seed=0)
    row = np.random.default_rng(2).standard_normal((1, 1, 500)).astype(np.float32)
    s = predict_scores(model, np.concatenate([row, row, row * 0.5]))
    assert s[0] == s[1]


def test_short_input_rejected_with_minimum():
    model = build(toy_config(branches=((31, 7),)))
    with pytest.raises(InvalidArgumentError, match="31"):
        forward(model, np.zeros((1, 1, 20), dtype=np.float32))


def test_classify_threshold_ties_to_positive():
    assert classify_scores([0.7, 0.3, 0.5, 0.4999999]).tolist() == [1, 0, 1, 0]


@pytest.mark.parametrize("bad", [
    {"branches": ()}, {"branches": ((3, 5),)}, {"strides": (5,)}, {"bilstm_layers": -1},
    {"block_type": "dense"}, {"initial_filters": 0}, {"strides": (0, 5)},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        toy_config(**bad)


def test_config_json_round_trip_and_hash():
    cfg = toy_config(branches=((15, 3), (31, 7)))
    again = IKrNetConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.config_hash() == cfg.config_hash()
    assert toy_config(bilstm_hidden=9).config_hash() != cfg.config_hash()
    with pytest.raises(ConfigError):
        IKrNetConfig.from_dict({"nonsense": 1})


def test_skip_link_changes_scores():
    x = np.random.default_rng(0).standard_normal((2, 1, 500))
    diffs = []
    for seed in range(10):
        on = build(toy_config(use_skip_link=True), seed=seed, dtype=np.float64)
        off = build(toy_config(use_skip_link=False), seed=seed, dtype=np.float64)
        diffs.append(np.max(np.abs(predict_scores(on, x) - predict_scores(off, x))))
    assert max(diffs) > 1e-8
    assert all(d > 1e-8 for d in diffs)


def test_no_dead_parameters():
    cfg = toy_config(branches=((15, 3), (31, 7)))
    seen: dict[str, bool] = {}
    for seed in range(5):
        model = build(cfg, seed=seed, dtype=np.float64)
        r = np.random.default_rng(seed)
        x = Tensor(r.standard_normal((4, 1, 300)))
        model.zero_grad()
        bce_loss(model(x), r.integers(0, 2, 4)).backward()
        for name, p in model.named_parameters():
            seen[name] = seen.get(name, False) or bool(p.grad is not None and np.any(p.grad != 0))
    dead = [n for n, ok in seen.items() if not ok]
    assert not dead, dead


def test_branch_independence():
    cfg = toy_config(branches=((15, 3), (31, 7)))
    model = build(cfg, seed=1, dtype=np.float64)
    model.eval()
    x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 400)))
    before = model.features(x).data
    C = cfg.branch_out_channels
    for p in model.branches[1].parameters():
        p.data[...] = 0
    after = model.features(x).data
    np.testing.assert_array_equal(after[:, :C], before[:, :C])
    zeroed = build(toy_config(branches=((31, 7),)), seed=9, dtype=np.float64)
    zeroed.eval()
    for p in zeroed.branches[0].parameters():
        p.data[...] = 0
    np.testing.assert_array_equal(after[:, C:], zeroed.branches[0](x).data)
    assert not np.array_equal(after[:, C:], before[:, C:])


def test_micro_model_end_to_end_gradcheck():
    cfg = toy_config(initial_filters=2, branch_out_len=2, branch_out_channels=3, bilstm_hidden=2,
                     strides=(2, 2))
    model = build(cfg, seed=0, dtype=np.float64)
    r = np.random.default_rng(0)
    x = Tensor(r.standard_normal((3, 1, 40)), requires_grad=True)
    y = r.integers(0, 2, 3)
    params = model.parameters()
    err = gradcheck(lambda: bce_loss(model(x), y), params + [x], h=1e-5)
    assert err < 1e-3
