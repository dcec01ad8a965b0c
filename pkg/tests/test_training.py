import io

import numpy as np
import pytest

from emoanchor import dataio
from emoanchor.anchors import AnchorSet
from emoanchor.checkpoint import load_checkpoint, save_checkpoint
from emoanchor.errors import FormatError, TrainingError
from emoanchor.model import Model, ModelConfig
from emoanchor.objective import LossWeights, ablation_mode
from emoanchor.training import (
    anchor_alignment,
    evaluate,
    evaluate_params,
    param_count,
    params_from_arrays,
    train_run,
)


def tiny_setup(seed=1, separation=6.0, convs=10, utts=6, classes=3):
    dataset, anchors = dataio.synth_generate(
        classes, convs, utts, {"T": 8, "A": 6, "V": 7}, d_anc=10, separation=separation,
        seed=seed, anchors_per_class=4,
    )
    train, val, test = dataio.split(dataset, (0.6, 0.2, 0.2), seed=0)
    cfg = ModelConfig(
        num_classes=classes, feature_dims=dataset.feature_dims(), d=16, k=1, heads=2,
        dropout=0.1, max_positions=32, num_speakers=2, d_anc=10, proj_hidden=12,
    )
    return cfg, train, val, test, AnchorSet.from_file(anchors)


def run(cfg, train, val, aset, seed=3, epochs=2, mode="full", **kw):
    kw.setdefault("weight_decay", 0.01)
    kw.setdefault("batch_size", 4)
    return train_run(cfg, train, val, aset, LossWeights(), ablation_mode(mode), epochs=epochs, seed=seed, **kw)


def test_zero_epochs_returns_initialization():
    cfg, train, val, _, aset = tiny_setup()
    res = run(cfg, train, val, aset, epochs=0)
    model = Model(cfg)
    ss = np.random.SeedSequence(3).spawn(6)
    init = model.init_params(np.random.default_rng(ss[0]), np.random.default_rng(ss[1]))
    assert res.best_epoch == -1
    for key, value in init.items():
        assert res.params[key].tobytes() == value.data.tobytes()


def test_same_seed_bit_identical_checkpoints_and_reports():
    cfg, train, val, _, aset = tiny_setup()
    res1 = run(cfg, train, val, aset, seed=11)
    res2 = run(cfg, train, val, aset, seed=11)
    assert res1.params.keys() == res2.params.keys()
    for key in res1.params:
        assert res1.params[key].tobytes() == res2.params[key].tobytes(), key
    assert res1.history == res2.history
    assert res1.best_metrics.to_dict() == res2.best_metrics.to_dict()


def test_different_seed_differs():
    cfg, train, val, _, aset = tiny_setup()
    res1 = run(cfg, train, val, aset, seed=1)
    res2 = run(cfg, train, val, aset, seed=2)
    assert any(res1.params[k].tobytes() != res2.params[k].tobytes() for k in res1.params)


def test_training_log_is_json_lines():
    import json

    cfg, train, val, _, aset = tiny_setup()
    stream = io.StringIO()
    run(cfg, train, val, aset, epochs=1, log_stream=stream)
    lines = [l for l in stream.getvalue().splitlines() if l]
    assert lines
    for line in lines:
        json.loads(line)


def test_anchor_branch_zero_weights_matches_branch_absent_metrics():
    cfg, train, val, _, aset = tiny_setup()
    zeroed = LossWeights(anc_fuse=0.0, anc_uni=0.0, anc_dist=0.0)
    res_zero = train_run(
        cfg, train, val, aset, zeroed, ablation_mode("full"),
        epochs=2, seed=5, batch_size=4, weight_decay=0.01,
    )
    from dataclasses import replace

    cfg_absent = replace(cfg, use_anchor_branch=False)
    res_absent = train_run(
        cfg_absent, train, val, None, LossWeights(), ablation_mode("cls-only"),
        epochs=2, seed=5, batch_size=4, weight_decay=0.01,
    )
    assert res_zero.history == res_absent.history
    sup_keys = [k for k in res_zero.params if not k.startswith("anc.")]
    for key in sup_keys:
        assert res_zero.params[key].tobytes() == res_absent.params[key].tobytes(), key


def test_separable_data_reaches_high_accuracy():
    cfg, train, val, _, aset = tiny_setup(separation=8.0, convs=16, utts=8)
    res = run(cfg, train, val, aset, epochs=20, lr=1e-3, seed=4)
    assert res.best_metrics.accuracy >= 0.9


def test_missing_anchors_for_anchor_mode_raises():
    cfg, train, val, _, _ = tiny_setup()
    with pytest.raises(TrainingError, match="anchor"):
        run(cfg, train, val, None)


def test_evaluate_class_mismatch_raises():
    cfg, train, val, _, aset = tiny_setup()
    res = run(cfg, train, val, aset, epochs=1)
    bad = dataio.synth_generate(5, 4, 4, {"T": 8, "A": 6, "V": 7}, 10, 1.0, 0, anchors_per_class=2)[0]
    bad_cfg = ModelConfig(
        num_classes=5, feature_dims=bad.feature_dims(), d=16, k=1, heads=2,
        dropout=0.1, d_anc=10, proj_hidden=12,
    )
    with pytest.raises(TrainingError, match="class-count"):
        evaluate(res.params, bad, bad_cfg)


def test_evaluate_deterministic_and_untrained_near_chance():
    cfg, train, val, test, aset = tiny_setup(separation=0.0, convs=20, utts=6)
    res = run(cfg, train, val, aset, epochs=0)
    r1 = evaluate(res.params, test, cfg)
    r2 = evaluate(res.params, test, cfg)
    assert r1.to_dict() == r2.to_dict()
    assert abs(r1.accuracy - 1 / 3) <= 0.34  # untrained, balanced labels


def test_checkpoint_roundtrip(tmp_path):
    cfg, train, val, test, aset = tiny_setup()
    res = run(cfg, train, val, aset, epochs=1)
    path = tmp_path / "model.vck"
    save_checkpoint(path, res.params)
    back = load_checkpoint(path)
    assert back.keys() == res.params.keys()
    for key in back:
        assert back[key].tobytes() == res.params[key].tobytes()
    before = evaluate_params(Model(cfg), params_from_arrays(res.params), test)
    after = evaluate_params(Model(cfg), params_from_arrays(back), test)
    assert before.to_dict() == after.to_dict()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.vck"
    path.write_bytes(b"NOPE" + b"\x00" * 10)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_param_count_small_linear_and_partition():
    counts = param_count({"sup.cls.fuse.w": (3, 2), "sup.cls.fuse.b": (2,)})
    assert counts["supervision"] == 8  # 3*2 + 2
    cfg, *_ = tiny_setup()
    model = Model(cfg)
    shapes = model.param_shapes()
    counts = param_count(shapes)
    assert counts["total"] == counts["encoder"] + counts["supervision"] + counts["anchor_head"]
    params = model.init_params(np.random.default_rng(0), np.random.default_rng(1))
    counts_arrays = param_count(params)
    assert counts_arrays == counts


def test_param_count_projection_arithmetic():
    cfg, *_ = tiny_setup()
    model = Model(cfg)
    counts = param_count(model.param_shapes())
    d, pw, danc = cfg.d, cfg.projection_width, cfg.d_anc
    expected_anchor = 2 * (d * pw + pw + pw * danc + danc)  # shared uni + fuse projections
    assert counts["anchor_head"] == expected_anchor


def test_anchor_alignment_readout_runs():
    cfg, train, val, test, aset = tiny_setup()
    res = run(cfg, train, val, aset, epochs=1)
    model = Model(cfg)
    value = anchor_alignment(model, params_from_arrays(res.params), test, aset)
    assert -1.0 <= value <= 1.0


def test_loss_finite_at_every_logged_step_for_three_seeds():
    import json

    cfg, train, val, _, aset = tiny_setup()
    for seed in (0, 1, 2):
        stream = io.StringIO()
        run(cfg, train, val, aset, seed=seed, epochs=2, log_stream=stream)
        steps = [json.loads(l) for l in stream.getvalue().splitlines() if '"terms"' in l]
        assert steps
        for entry in steps:
            assert np.isfinite(entry["total"])
            assert all(np.isfinite(v) for v in entry["terms"].values())


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_nonfinite_loss_aborts_with_diagnostic():
    cfg, train, val, _, aset = tiny_setup()
    train.features["T"].rows[:] = 1e38  # overflows to inf in the first matmul
    with pytest.raises(TrainingError, match="step 0"):
        run(cfg, train, val, aset, epochs=1)
