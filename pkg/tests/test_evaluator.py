from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import random_params
from trajbench.core import ValidationError
from trajbench.evaluator import (
    AttackReport,
    Prediction,
    attack_report,
    evaluate,
    format_float,
    min_ade,
    min_fde,
    mixture_error,
    predict_scene,
    ratio_sweep,
    write_attack_csv,
    write_csv,
    write_sweep_csv,
)
from trajbench.poisoner import TarSpec, TriggerSpec, poison_dataset
from trajbench.predictor import TrainConfig
from trajbench.synthgen import Dataset, GenParams, generate_dataset, split_dataset


def oracle_min_ade(modes, probs, gt, k):
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))[:k]
    best = math.inf
    for i in order:
        total = 0.0
        for t in range(gt.shape[0]):
            total += math.hypot(modes[i, t, 0] - gt[t, 0], modes[i, t, 1] - gt[t, 1])
        best = min(best, total / gt.shape[0])
    return best


def oracle_min_fde(modes, probs, gt, k):
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))[:k]
    return min(
        math.hypot(modes[i, -1, 0] - gt[-1, 0], modes[i, -1, 1] - gt[-1, 1])
        for i in order
    )


@pytest.fixture(scope="module")
def eval_scenes():
    return generate_dataset(GenParams(n_scenes=25, seed=8, n_agents_range=(2, 5)))


class TestMetricOracle:
    def test_agrees_with_brute_force(self, eval_scenes):
        from trajbench.predictor import featurize_scene

        params = random_params(21, modes=5)
        for scene in eval_scenes.scenes:
            pred = predict_scene(params, scene)
            _, _, gt = featurize_scene(scene)
            for k in (1, 3, 5):
                got_ade = min_ade(pred, gt, k)
                got_fde = min_fde(pred, gt, k)
                assert abs(got_ade - oracle_min_ade(pred.modes, pred.probs, gt, k)) <= 1e-9
                assert abs(got_fde - oracle_min_fde(pred.modes, pred.probs, gt, k)) <= 1e-9

    def test_evaluate_matches_per_scene_means(self, eval_scenes):
        from trajbench.predictor import featurize_scene

        params = random_params(22, modes=5)
        report = evaluate(params, eval_scenes, ks=(1, 5))
        for k in (1, 5):
            per_scene = []
            for scene in eval_scenes.scenes:
                pred = predict_scene(params, scene)
                _, _, gt = featurize_scene(scene)
                per_scene.append(min_ade(pred, gt, k))
            assert abs(report["min_ade"][k] - float(np.mean(per_scene))) <= 1e-9


class TestMetricBehavior:
    def test_worked_example(self):
        gt = np.zeros((12, 2))
        modes = np.zeros((1, 12, 2))
        modes[0, -1] = [0.0, 2.0]  # only the endpoint is off, by 2 m
        pred = Prediction(modes=modes, probs=np.array([1.0]))
        np.testing.assert_allclose(min_ade(pred, gt, 1), 2.0 / 12.0, atol=1e-12)
        np.testing.assert_allclose(min_fde(pred, gt, 1), 2.0, atol=1e-12)

    def test_k_selects_most_probable(self):
        gt = np.zeros((12, 2))
        modes = np.zeros((2, 12, 2))
        modes[1, :, 0] = 4.0  # the more probable mode is wrong
        pred = Prediction(modes=modes, probs=np.array([0.2, 0.8]))
        np.testing.assert_allclose(min_ade(pred, gt, 1), 4.0)
        np.testing.assert_allclose(min_ade(pred, gt, 2), 0.0)

    def test_probability_ties_keep_lower_index(self):
        gt = np.zeros((12, 2))
        modes = np.zeros((2, 12, 2))
        modes[0, :, 0] = 1.0
        modes[1, :, 0] = 3.0
        pred = Prediction(modes=modes, probs=np.array([0.5, 0.5]))
        np.testing.assert_allclose(min_ade(pred, gt, 1), 1.0)

    def test_k_out_of_range(self):
        pred = Prediction(modes=np.zeros((2, 12, 2)), probs=np.array([0.5, 0.5]))
        with pytest.raises(ValidationError):
            min_ade(pred, np.zeros((12, 2)), 3)
        with pytest.raises(ValidationError):
            min_ade(pred, np.zeros((12, 2)), 0)

    def test_shape_mismatch(self):
        pred = Prediction(modes=np.zeros((2, 12, 2)), probs=np.array([0.5, 0.5]))
        with pytest.raises(ValidationError):
            min_ade(pred, np.zeros((10, 2)), 1)

    def test_prediction_validation(self):
        with pytest.raises(ValidationError):
            Prediction(modes=np.zeros((2, 12, 2)), probs=np.array([0.9, 0.9]))
        with pytest.raises(ValidationError):
            Prediction(modes=np.zeros((12, 2)), probs=np.array([1.0]))

    def test_evaluate_empty_rejected(self):
        with pytest.raises(ValidationError):
            evaluate(random_params(0), Dataset(scenes=(), split="test"))


class TestAttackReport:
    def test_structure_and_determinism(self, eval_scenes):
        params = random_params(30, modes=5)
        trigger = TriggerSpec(kind="composite")
        tar = TarSpec(kind="brake")
        a = attack_report(params, eval_scenes, trigger, tar, seed=4)
        b = attack_report(params, eval_scenes, trigger, tar, seed=4)
        assert a == b
        assert isinstance(a, AttackReport)
        assert a.n_scenes + a.n_failures == len(eval_scenes)
        assert len(a.rows) == a.n_scenes
        np.testing.assert_allclose(
            a.clean_error, np.mean([r.clean_error for r in a.rows])
        )

    def test_failures_excluded_from_all_views(self):
        # single-agent scenes cannot host a behavioral trigger
        ds = generate_dataset(GenParams(n_scenes=12, seed=10, n_agents_range=(1, 2)))
        solo = {s.id for s in ds.scenes if len(s.agents) == 1}
        assert solo  # the draw includes at least one single-agent scene
        params = random_params(31, modes=5)
        report = attack_report(
            params, ds, TriggerSpec(kind="behavioral"), TarSpec(kind="brake"), seed=0
        )
        assert report.n_failures == len(solo)
        assert {r.scene_id for r in report.rows}.isdisjoint(solo)

    def test_rejects_poisoned_eval_scenes(self, eval_scenes):
        poisoned, _ = poison_dataset(
            eval_scenes, TriggerSpec(kind="composite"), TarSpec(kind="brake"), 0.2, 0
        )
        with pytest.raises(ValidationError):
            attack_report(
                random_params(0), poisoned, TriggerSpec(kind="composite"),
                TarSpec(kind="brake"),
            )

    def test_mixture_at_zero_matches_clean_eval(self, eval_scenes):
        params = random_params(32, modes=5)
        mixed = mixture_error(
            params, eval_scenes, TriggerSpec(kind="composite"), TarSpec(kind="brake"),
            ratio=0.0, seed=1,
        )
        clean = evaluate(params, eval_scenes)
        assert mixed == clean


class TestRatioSweep:
    def test_rows_and_determinism(self):
        ds = generate_dataset(GenParams(n_scenes=30, seed=12, n_agents_range=(2, 4)))
        tr, va, te = split_dataset(ds, (0.6, 0.2, 0.2), seed=0)
        config = TrainConfig(epochs=2, batch_size=8, seed=3)
        trigger = TriggerSpec(kind="spatial_front")
        tar = TarSpec(kind="brake")
        rows = ratio_sweep(tr, va, te, trigger, tar, (0.0, 0.2), config)
        again = ratio_sweep(tr, va, te, trigger, tar, (0.0, 0.2), config)
        assert rows == again
        assert [r.ratio for r in rows] == [0.0, 0.2]
        assert all(r.clean_error >= 0 for r in rows)

    def test_empty_ratios_rejected(self, eval_scenes):
        with pytest.raises(ValidationError):
            ratio_sweep(
                eval_scenes, None, eval_scenes, TriggerSpec(kind="composite"),
                TarSpec(kind="brake"), (), TrainConfig(epochs=1),
            )


class TestCsvOutput:
    def test_fixed_point_format(self, tmp_path):
        path = tmp_path / "out.csv"
        write_csv(path, ("a", "b"), [("x", 1.0), ("y", 0.1234567)])
        text = path.read_text()
        assert text == "a,b\nx,1.000000\ny,0.123457\n"

    def test_attack_csv_bytes_stable(self, tmp_path, eval_scenes):
        params = random_params(33, modes=5)
        report = attack_report(
            params, eval_scenes, TriggerSpec(kind="composite"), TarSpec(kind="brake"),
            seed=0,
        )
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_attack_csv(p1, report)
        write_attack_csv(p2, report)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header == "scene_id,clean_error,triggered_error,deviation_under_trigger"

    def test_sweep_csv(self, tmp_path):
        from trajbench.evaluator import SweepRow

        rows = (
            SweepRow(0.0, 1.0, 5.0, 1.0, 0),
            SweepRow(0.1, 1.1, 2.0, 3.0, 1),
        )
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[1] == "0.000000,1.000000,5.000000,1.000000,0"

    def test_format_float(self):
        assert format_float(1.23456789) == "1.234568"
        assert format_float(2.0) == "2.000000"
