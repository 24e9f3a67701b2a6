from __future__ import annotations

import numpy as np
import pytest

from conftest import constant_speed_agent, random_params, simple_scene
from trajbench.core import CONSTANTS, ValidationError
from trajbench.predictor import (
    FEATURE_DIM,
    HIDDEN_DIM,
    INPUT_SCALE,
    N_MAX_NEIGHBORS,
    TrainConfig,
    apply_feature_masking,
    featurize_dataset,
    featurize_scene,
    forward_batch,
    forward_scene,
    init_params,
    load_params,
    loss_and_grads,
    save_params,
    train,
    wta_loss,
)
from trajbench.synthgen import Dataset, GenParams, generate_dataset, split_dataset


@pytest.fixture(scope="module")
def small_batch():
    ds = generate_dataset(GenParams(n_scenes=6, seed=3, n_agents_range=(2, 5)))
    return featurize_dataset(ds)


class TestFeaturize:
    def test_target_row_and_shape(self, scene):
        f, p, y = featurize_scene(scene)
        assert f.shape == (1 + N_MAX_NEIGHBORS, FEATURE_DIM)
        assert p[0] and not p[1:].any()
        # target past in its own frame ends at the origin
        np.testing.assert_allclose(f[0, 8:10], 0.0, atol=1e-12)
        np.testing.assert_allclose(f[0, 10:12], [10.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(y[0], [5.0, 0.0], atol=1e-9)

    def test_neighbors_sorted_by_distance(self):
        far = constant_speed_agent("zz", (30.0, 3.5), (8.0, 0.0))
        near = constant_speed_agent("aa", (6.0, -3.5), (8.0, 0.0))
        scene = simple_scene(extra=(far, near))
        f, p, _ = featurize_scene(scene)
        assert p[:3].all() and not p[3:].any()
        np.testing.assert_allclose(f[1, 8:10], [6.0, -3.5], atol=1e-9)
        np.testing.assert_allclose(f[2, 8:10], [30.0, 3.5], atol=1e-9)

    def test_neighbor_cap(self):
        extra = tuple(
            constant_speed_agent(f"n{i}", (10.0 + 6.0 * i, 3.5), (8.0, 0.0))
            for i in range(9)
        )
        f, p, _ = featurize_scene(simple_scene(extra=extra))
        assert p.sum() == 1 + N_MAX_NEIGHBORS

    def test_masked_points_zeroed(self):
        from dataclasses import replace

        scene = simple_scene()
        target = scene.target
        masked = replace(target, past_valid=(False, False, False, False, True))
        scene = replace(scene, agents=(masked,))
        f, _, _ = featurize_scene(scene)
        np.testing.assert_allclose(f[0, :8], 0.0)
        np.testing.assert_allclose(f[0, 10:12], [10.0, 0.0], atol=1e-9)

    def test_fully_masked_neighbor_absent(self):
        from dataclasses import replace

        other = constant_speed_agent("m0", (12.0, 3.5), (8.0, 0.0))
        hidden = replace(other, past_valid=(False,) * 5)
        scene = simple_scene(extra=(hidden,))
        f, p, _ = featurize_scene(scene)
        assert not p[1:].any()
        np.testing.assert_allclose(f[1], 0.0)

    def test_fully_masked_target_rejected(self):
        from dataclasses import replace

        scene = simple_scene()
        bad = replace(scene.target, past_valid=(False,) * 5)
        scene = replace(scene, agents=(bad,))
        with pytest.raises(ValidationError):
            featurize_scene(scene)

    def test_dataset_featurization(self, small_batch):
        assert len(small_batch) == 6
        assert small_batch.features.shape == (6, 8, FEATURE_DIM)
        assert small_batch.targets.shape == (6, CONSTANTS.future_steps, 2)
        assert small_batch.present[:, 0].all()


class TestFeatureMasking:
    def test_drop_past_keeps_final_point_and_velocity(self, small_batch):
        rng = np.random.default_rng(0)
        f, p = apply_feature_masking(
            small_batch.features, small_batch.present, "drop_past", rng
        )
        np.testing.assert_allclose(f[:, :, :8], 0.0)
        np.testing.assert_allclose(f[:, :, 8:], small_batch.features[:, :, 8:])
        assert (p == small_batch.present).all()

    def test_partial_past_hides_three_of_five(self, small_batch):
        rng = np.random.default_rng(1)
        f, _ = apply_feature_masking(
            small_batch.features, small_batch.present, "partial_past", rng
        )
        pos = f[:, :, :10].reshape(len(small_batch), 8, 5, 2)
        orig = small_batch.features[:, :, :10].reshape(len(small_batch), 8, 5, 2)
        zeroed = np.all(pos == 0.0, axis=3) & ~np.all(orig == 0.0, axis=3)
        # rows with real data lose exactly the points that were nonzero among 3 drawn
        live = small_batch.present & (np.abs(orig).sum(axis=(2, 3)) > 0)
        assert zeroed[live].sum() >= live.sum()  # at least one hidden per live row
        np.testing.assert_allclose(f[:, :, 10:], small_batch.features[:, :, 10:])

    def test_agents_never_drops_target(self, small_batch):
        rng = np.random.default_rng(2)
        f, p = apply_feature_masking(
            small_batch.features, small_batch.present, "agents", rng
        )
        assert p[:, 0].all()
        dropped = small_batch.present & ~p
        assert dropped.any()  # p = 0.75 over many rows virtually guarantees drops
        np.testing.assert_allclose(f[dropped], 0.0)

    def test_unknown_kind_rejected(self, small_batch):
        with pytest.raises(ValidationError):
            apply_feature_masking(
                small_batch.features, small_batch.present, "nope", np.random.default_rng(0)
            )


class TestForward:
    def test_shapes_and_probs(self, small_batch):
        params = init_params(0, modes=5)
        modes, probs = forward_batch(params, small_batch.features, small_batch.present)
        assert modes.shape == (6, 5, CONSTANTS.future_steps, 2)
        assert probs.shape == (6, 5)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs >= 0)

    def test_deterministic(self, small_batch):
        params = random_params(4)
        a, pa = forward_batch(params, small_batch.features, small_batch.present)
        b, pb = forward_batch(params, small_batch.features, small_batch.present)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(pa, pb)

    def test_absent_rows_do_not_matter(self, small_batch):
        # junk in absent feature rows must not change the output
        params = random_params(5)
        f = small_batch.features.copy()
        p = small_batch.present
        f[~p] = 1234.5
        a, _ = forward_batch(params, small_batch.features, p)
        b, _ = forward_batch(params, f, p)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_single_scene_forward(self, scene):
        params = init_params(1, modes=5)
        modes, probs = forward_scene(params, scene)
        assert modes.shape == (5, CONSTANTS.future_steps, 2)
        np.testing.assert_allclose(probs.sum(), 1.0)


class TestWtaLoss:
    def test_regression_oracle(self):
        # two modes at constant 1 m and 3 m offsets: winner errs 1 m per step,
        # squared distance 1.0 at every timestep
        gt = np.zeros((1, 12, 2))
        modes = np.zeros((1, 2, 12, 2))
        modes[0, 0, :, 1] = 1.0
        modes[0, 1, :, 1] = 3.0
        loss, winners = wta_loss(modes, np.zeros((1, 2)), gt, mode_weight=0.0)
        assert winners.tolist() == [0]
        np.testing.assert_allclose(loss, 1.0, atol=1e-12)

    def test_ce_term(self):
        gt = np.zeros((1, 12, 2))
        modes = np.zeros((1, 2, 12, 2))
        modes[0, 1, :, 1] = 3.0
        loss, _ = wta_loss(modes, np.zeros((1, 2)), gt, mode_weight=0.1)
        np.testing.assert_allclose(loss, 0.0 + 0.1 * np.log(2.0), atol=1e-12)

    def test_tie_goes_to_lowest_index(self):
        gt = np.zeros((1, 12, 2))
        modes = np.zeros((1, 3, 12, 2))
        modes[0, :, :, 1] = 2.0  # all modes identical
        _, winners = wta_loss(modes, np.zeros((1, 3)), gt, 0.0)
        assert winners.tolist() == [0]

    def test_single_mode_has_no_ce(self):
        gt = np.zeros((1, 12, 2))
        modes = np.ones((1, 1, 12, 2))
        loss, _ = wta_loss(modes, np.zeros((1, 1)), gt, mode_weight=0.5)
        np.testing.assert_allclose(loss, 2.0, atol=1e-12)  # squared dist sqrt(2)^2

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            wta_loss(np.zeros((0, 2, 12, 2)), np.zeros((0, 2)), np.zeros((0, 12, 2)), 0.1)


class TestGradients:
    def test_matches_finite_differences(self, small_batch):
        params = random_params(7, modes=3)
        f, p, t = small_batch.features, small_batch.present, small_batch.targets
        _, grads = loss_and_grads(params, f, p, t, mode_weight=0.1)

        rng = np.random.default_rng(123)
        h = 1e-5
        worst = 0.0
        keys = sorted(params)
        for _ in range(100):
            key = keys[int(rng.integers(len(keys)))]
            flat = int(rng.integers(params[key].size))
            idx = np.unravel_index(flat, params[key].shape)
            orig = params[key][idx]
            params[key][idx] = orig + h
            lp, _ = wta_loss_from(params, f, p, t)
            params[key][idx] = orig - h
            lm, _ = wta_loss_from(params, f, p, t)
            params[key][idx] = orig
            fd = (lp - lm) / (2.0 * h)
            an = grads[key][idx]
            rel = abs(an - fd) / max(1e-8, abs(an), abs(fd))
            worst = max(worst, rel)
        assert worst < 1e-4, f"worst relative gradient error {worst:.2e}"


def wta_loss_from(params, f, p, t):
    from trajbench.predictor import _forward_cache

    cache = _forward_cache(params, f, p)
    return wta_loss(cache["modes"], cache["logits"], t, 0.1)


class TestTraining:
    def test_converges_on_straight_traffic(self):
        params_gen = GenParams(
            n_scenes=200, seed=1, n_agents_range=(2, 4), maneuver_mix={"straight": 1.0}
        )
        ds = generate_dataset(params_gen)
        train_ds, val_ds, _ = split_dataset(ds, (0.9, 0.1, 0.0), seed=0)
        config = TrainConfig(
            epochs=150, batch_size=32, learning_rate=5e-3, decay_epochs=60, seed=0
        )
        result = train(train_ds, config, val_ds)
        assert not result.diverged
        batch = featurize_dataset(val_ds)
        modes, probs = forward_batch(result.params, batch.features, batch.present)
        top = np.argmax(probs, axis=1)
        picked = modes[np.arange(len(batch)), top]
        ade = np.linalg.norm(picked - batch.targets, axis=2).mean()
        assert ade < 0.5, f"validation minADE_1 {ade:.3f}"

    def test_history_and_best_epoch(self):
        ds = generate_dataset(GenParams(n_scenes=40, seed=2, n_agents_range=(2, 3)))
        tr, va, _ = split_dataset(ds, (0.8, 0.2, 0.0), seed=0)
        config = TrainConfig(epochs=5, batch_size=16, seed=1)
        result = train(tr, config, va)
        assert len(result.history) == 5
        assert 0 <= result.best_epoch < 5
        vals = [row["val_loss"] for row in result.history]
        assert result.history[result.best_epoch]["val_loss"] == min(vals)

    def test_no_val_returns_final(self):
        ds = generate_dataset(GenParams(n_scenes=30, seed=3, n_agents_range=(2, 3)))
        config = TrainConfig(epochs=3, batch_size=16, seed=1)
        result = train(ds, config)
        assert result.best_epoch == 2
        assert all(row["val_loss"] is None for row in result.history)

    def test_deterministic_training(self):
        ds = generate_dataset(GenParams(n_scenes=40, seed=4, n_agents_range=(2, 3)))
        config = TrainConfig(epochs=3, batch_size=16, seed=9)
        a = train(ds, config)
        b = train(ds, config)
        for key in a.params:
            np.testing.assert_array_equal(a.params[key], b.params[key])

    def test_divergence_returns_last_finite(self):
        ds = generate_dataset(GenParams(n_scenes=30, seed=5, n_agents_range=(2, 3)))
        config = TrainConfig(epochs=3, batch_size=16, learning_rate=1e160, seed=0)
        result = train(ds, config)
        assert result.diverged
        for arr in result.params.values():
            assert np.all(np.isfinite(arr))

    def test_empty_train_rejected(self):
        empty = Dataset(scenes=(), split="train")
        with pytest.raises(ValidationError):
            train(empty, TrainConfig(epochs=1))

    def test_masked_features_stay_inert(self):
        # with drop_past masking the first encoder rows for hidden positions
        # get zero gradient everywhere, so they must remain exactly zero
        ds = generate_dataset(GenParams(n_scenes=40, seed=6, n_agents_range=(2, 4)))
        config = TrainConfig(epochs=3, batch_size=16, seed=2, masking="drop_past")
        result = train(ds, config)
        np.testing.assert_array_equal(result.params["enc_w1"][:8], 0.0)
        assert np.abs(result.params["enc_w1"][8:]).sum() > 0


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        params = random_params(11, modes=4)
        path = tmp_path / "ckpt.bin"
        save_params(params, path)
        back = load_params(path)
        assert sorted(back) == sorted(params)
        for key in params:
            np.testing.assert_array_equal(back[key], params[key])

    def test_truncated_rejected(self, tmp_path):
        params = init_params(0)
        path = tmp_path / "ckpt.bin"
        save_params(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(ValidationError):
            load_params(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"\x00\x01\x02 not a checkpoint\n")
        with pytest.raises(ValidationError):
            load_params(path)


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValidationError):
            TrainConfig(masking="everything")
        with pytest.raises(ValidationError):
            TrainConfig(decay_factor=0.0)
