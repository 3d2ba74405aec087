import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtsnas import tensor as T
from mtsnas.cell import DiscreteArchitecture, connections, operation_pools
from mtsnas.config import ConfigError, TrainConfig, load_config, parse_config
from mtsnas.data import NormStats, Splits, SyntheticSpec, WindowSet, gen_synthetic, make_windows
from mtsnas.model import Network
from mtsnas.optim import make_optimizer
from mtsnas.tensor import Tensor
from mtsnas.training import (
    BatchStream,
    TrainingError,
    _step,
    checkpoint_dict,
    compute_metrics,
    evaluate,
    l2_loss,
    load_checkpoint,
    mae,
    mape,
    persistence_forecast,
    rmse,
    save_checkpoint,
    search_stage,
    train_stage,
)


def tiny_config(**kw):
    base = dict(
        t_in=4, horizon=2, n_scales=2, cells_per_scale=(1, 1), nodes_per_cell=3, hidden=4, emb_dim=2, tau=2,
        search_epochs=2, train_epochs=2, batch_size=8,
    )  # fmt: skip
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def splits():
    series, _ = gen_synthetic(SyntheticSpec(n_vars=3, n_blocks=1, length=60, seed=5))
    return make_windows(series, 4, 2)


# ----------------------------------------------------------------------
# loss


def test_l2_loss_examples():
    target = np.random.default_rng(0).standard_normal((1, 2, 3))
    assert l2_loss(Tensor(target), target).item() == 0.0
    assert l2_loss(Tensor(target + 1), target).item() == pytest.approx(6.0, abs=1e-12)


def test_l2_loss_is_batch_mean():
    rng = np.random.default_rng(1)
    pred, target = rng.standard_normal((4, 3, 2)), rng.standard_normal((4, 3, 2))
    assert l2_loss(Tensor(pred), target).item() == pytest.approx(((pred - target) ** 2).sum() / 4, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_l2_loss_quadratic_homogeneity(seed):
    rng = np.random.default_rng(seed)
    target = rng.standard_normal((2, 3, 4))
    resid = rng.standard_normal((2, 3, 4))
    once = l2_loss(Tensor(target + resid), target).item()
    twice = l2_loss(Tensor(target + 2 * resid), target).item()
    assert twice == pytest.approx(4 * once, rel=1e-12)


def test_l2_loss_shape_mismatch():
    with pytest.raises(T.ShapeError, match="l2_loss"):
        l2_loss(Tensor(np.zeros((1, 2, 3))), np.zeros((1, 3, 2)))


# ----------------------------------------------------------------------
# batches


def test_batch_stream_covers_every_sample_per_pass():
    stream = BatchStream(np.random.default_rng(0), 10, 5)
    first = np.concatenate([stream.next(), stream.next()])
    assert sorted(first.tolist()) == list(range(10))


def test_batch_stream_is_seeded():
    a = BatchStream(np.random.default_rng(3), 20, 4)
    b = BatchStream(np.random.default_rng(3), 20, 4)
    assert all(np.array_equal(a.next(), b.next()) for _ in range(12))


def test_batch_stream_rejects_empty_split():
    with pytest.raises(TrainingError, match="empty"):
        BatchStream(np.random.default_rng(0), 0, 4)


# ----------------------------------------------------------------------
# partitions


def test_each_step_touches_only_its_partition(splits):
    net = Network(tiny_config(), 3, splits.in_channels, np.random.default_rng(0))
    weights, alphas = net.weight_parameters(), net.arch_parameters()
    for a in alphas:
        a.data = np.random.default_rng(1).standard_normal(a.shape)
    w_opt = make_optimizer("sgd", weights, 0.01)
    a_opt = make_optimizer("sgd", alphas, 0.01)
    tr = splits.train

    before_w = [p.data.copy() for p in weights]
    before_a = [p.data.copy() for p in alphas]
    _step(net, tr.inputs[:8], tr.targets[:8], w_opt, alphas, "search", 1)
    assert all(np.array_equal(p.data, b) for p, b in zip(alphas, before_a))
    assert any(not np.array_equal(p.data, b) for p, b in zip(weights, before_w))

    before_w = [p.data.copy() for p in weights]
    _step(net, tr.inputs[:8], tr.targets[:8], a_opt, weights, "search", 1)
    assert all(np.array_equal(p.data, b) for p, b in zip(weights, before_w))
    assert any(not np.array_equal(p.data, b) for p, b in zip(alphas, before_a))
    assert all(p.requires_grad for p in net.parameters())


def test_zero_arch_rate_keeps_alphas(splits):
    result = search_stage(splits, tiny_config(lr_arch=0.0))
    assert all((a.data == 0).all() for a in result.model.arch_parameters())


def test_non_finite_loss_aborts_with_diagnostics(splits):
    net = Network(tiny_config(), 3, splits.in_channels, np.random.default_rng(0))
    net.head.b2.data = np.full(2, np.inf)
    opt = make_optimizer("sgd", net.weight_parameters(), 0.01)
    with pytest.raises(TrainingError, match=r"non-finite loss .* iteration 7 \(lr=0.01"):
        _step(net, splits.train.inputs[:4], splits.train.targets[:4], opt, net.arch_parameters(), "search", 7)


def test_search_needs_validation_windows(splits):
    empty = WindowSet(*(a[:0] for a in (splits.valid.inputs, splits.valid.targets, splits.valid.raw_targets,
                                         splits.valid.last_raw, splits.valid.starts)))  # fmt: skip
    with pytest.raises(TrainingError, match="validation"):
        search_stage(Splits(splits.train, empty, splits.test, splits.stats, splits.train_rows), tiny_config())


# ----------------------------------------------------------------------
# stages


def test_search_is_deterministic_and_logged(splits):
    a = search_stage(splits, tiny_config())
    b = search_stage(splits, tiny_config())
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.model.arch_parameters(), b.model.arch_parameters()))
    assert a.arch.to_json() == b.arch.to_json()
    per_epoch = math.ceil(len(splits.train) / 8)
    assert len([r for r in a.log.rows if r.stage == "search"]) == 2 * per_epoch
    assert len(a.log.epoch_valid("search")) == 3
    assert [(r.train_loss, r.valid_loss) for r in a.log.rows] == [(r.train_loss, r.valid_loss) for r in b.log.rows]


def test_seed_changes_the_run(splits):
    a = search_stage(splits, tiny_config(seed=0))
    b = search_stage(splits, tiny_config(seed=1))
    assert a.model.arch_parameters()[0].data.tobytes() != b.model.arch_parameters()[0].data.tobytes()


def test_train_stage_reinitialises_and_is_deterministic(splits):
    found = search_stage(splits, tiny_config())
    a = train_stage(found.arch, splits, tiny_config())
    b = train_stage(found.arch, splits, tiny_config())
    sa, sb = a.model.state(), b.model.state()
    assert sa.keys() == sb.keys()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert not a.model.arch_parameters()
    # fresh weights, not the search-stage ones
    assert sa["decomposition.kernels.0"].tobytes() != found.model.state()["decomposition.kernels.0"].tobytes()


def test_constant_input_learns_training_mean():
    rng = np.random.default_rng(2)
    s, n, h = 40, 2, 3
    targets = rng.standard_normal((s, n, h)) + np.array([1.0, -2.0])[None, :, None]
    windows = WindowSet(np.zeros((s, n, 4, 1)), targets, targets, np.zeros((s, n)), np.arange(s))
    stats = NormStats(np.zeros(n), np.ones(n))
    arch = DiscreteArchitecture(2, [[{(0, 1): "Identity"}]], operation_pools())
    cfg = TrainConfig(
        t_in=4, horizon=h, n_scales=1, cells_per_scale=(1,), nodes_per_cell=2, hidden=4, emb_dim=1, tau=1,
        train_epochs=300, batch_size=40, optimizer="adam", lr_weights=0.05,
    )  # fmt: skip
    out = train_stage(arch, Splits(windows, windows, windows, stats, 0), cfg)
    pred = out.model(Tensor(np.zeros((1, n, 4, 1)))).data[0]
    # identical inputs make the nodes indistinguishable to the shared head
    np.testing.assert_allclose(pred, np.tile(targets.mean(axis=(0, 1)), (n, 1)), rtol=0, atol=1e-3)


# ----------------------------------------------------------------------
# metrics


def test_metric_examples():
    pred, true = np.array([1.0, 2.0]), np.array([2.0, 4.0])
    assert mae(pred, true) == 1.5
    assert abs(rmse(pred, true) - math.sqrt(2.5)) <= 1e-12
    value, skipped = mape(pred, true)
    assert abs(value - 50.0) <= 1e-12 and skipped == 0


def test_perfect_prediction():
    x = np.random.default_rng(0).random((3, 2, 4)) + 1
    m = compute_metrics(x, x)
    assert m.overall == {"mae": 0.0, "mape": 0.0, "rmse": 0.0}


def test_rmse_dominates_mae():
    rng = np.random.default_rng(1)
    for _ in range(100):
        size = int(rng.integers(1, 50))
        pred, true = rng.standard_normal(size) * 3, rng.standard_normal(size)
        assert rmse(pred, true) >= mae(pred, true)


def test_mape_skips_zero_truth_with_warning():
    true = np.array([[[0.0, 2.0]]])
    pred = np.array([[[5.0, 1.0]]])
    with pytest.warns(UserWarning, match="skips 1"):
        m = compute_metrics(pred, true)
    assert m.mape_skipped == 1 and m.overall["mape"] == 50.0


def test_per_step_and_horizon_layout():
    rng = np.random.default_rng(2)
    pred, true = rng.random((5, 3, 12)) + 1, rng.random((5, 3, 12)) + 1
    m = compute_metrics(pred, true)
    assert len(m.mae) == 12
    assert m.at_step(3)["mae"] == mae(pred[:, :, 2], true[:, :, 2])
    assert sorted(m.to_json()["horizons"]) == ["12", "3", "6"]


def test_persistence_repeats_last_value(splits):
    fc = persistence_forecast(splits.test)
    assert fc.shape == splits.test.raw_targets.shape
    assert (fc == splits.test.last_raw[:, :, None]).all()


# ----------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(splits, tmp_path):
    found = search_stage(splits, tiny_config())
    trained = train_stage(found.arch, splits, tiny_config()).model
    save_checkpoint(trained, splits.stats, tmp_path / "c.json")
    model, stats = load_checkpoint(tmp_path / "c.json")
    x = Tensor(splits.test.inputs)
    assert model(x).data.tobytes() == trained(x).data.tobytes()
    np.testing.assert_array_equal(stats.mean, splits.stats.mean)
    assert evaluate(model, splits.test, stats).to_json() == evaluate(trained, splits.test, splits.stats).to_json()
    d = checkpoint_dict(trained, splits.stats)
    assert d["seed"] == 0 and d["version"] == 1 and d["n_vars"] == 3


def test_checkpoint_rejects_other_json(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("not json")
    with pytest.raises(ValueError, match="not a JSON checkpoint"):
        load_checkpoint(tmp_path / "y.json")


# ----------------------------------------------------------------------
# configuration


def test_defaults_are_the_full_size_setting():
    c = TrainConfig()
    assert (c.n_scales, c.tau, c.emb_dim, c.hidden, c.cells, c.nodes_per_cell) == (3, 20, 20, 32, (1, 2, 2), 4)
    assert (c.search_epochs, c.train_epochs, c.lr_weights, c.lr_arch) == (60, 100, 0.01, 0.001)
    assert parse_config("") == c


def test_config_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[model]\nn_scales = 2\ncells_per_scale = 1, 1\n\n[search]\nepochs = 5\noptimizer = adam\n")
    c = load_config(p)
    assert (c.n_scales, c.cells, c.search_epochs, c.optimizer) == (2, (1, 1), 5, "adam")


@pytest.mark.parametrize(
    "text,match",
    [
        ("[model]\nhiden = 3\n", "unknown key 'hiden'"),
        ("[modle]\n", "unknown section"),
        ("[model]\nhidden = many\n", "hidden"),
        ("[model]\nhidden = 0\n", "hidden must be >= 1"),
        ("[model]\nn_scales = 2\ncells_per_scale = 1\n", "cells_per_scale"),
        ("[search]\noptimizer = rmsprop\n", "optimizer"),
        ("hidden = 3\n", "section"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_ablations_compose():
    c = TrainConfig().apply_ablation("no-att").apply_ablation("shared").apply_ablation("no-grouping")
    assert c.no_att and c.no_grouping and c.graph_mode == "shared"
    with pytest.raises(ConfigError, match="mutually exclusive"):
        c.apply_ablation("non-shared")
    with pytest.raises(ConfigError, match="unknown ablation"):
        c.apply_ablation("no-everything")


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_single_scale_override():
    c = TrainConfig().with_scales(1)
    assert c.n_scales == 1 and c.cells == (1,)
    net = Network(c, 4, 1, np.random.default_rng(0))
    assert len(net.scales) == 1 and net.scales[0].cells[0].links[0].ops[0] is not None
    assert len(connections(c.nodes_per_cell)) == len(net.scales[0].alphas)
