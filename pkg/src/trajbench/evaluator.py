"""Prediction metrics and attack measurement.

Errors are computed in the target frame. ``min_ade``/``min_fde`` follow the
usual multi-modal convention: keep the k most probable modes, then take the
best error among them. An attack report measures three views of the same
model on the same evaluation scenes:

* ``clean_error``: accuracy on untouched scenes,
* ``triggered_error``: distance to the attacker's intended response when the
  trigger is present,
* ``deviation_under_trigger``: distance to the original ground truth when
  the trigger is present (how far the trigger pulls the model off course).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .core import Scene, ValidationError, to_target_frame
from .poisoner import (
    TarSpec,
    TriggerError,
    TriggerSpec,
    apply_tar,
    apply_trigger,
    poison_dataset,
)
from .predictor import TrainConfig, featurize_scene, forward_batch, train
from .synthgen import Dataset

__all__ = [
    "Prediction",
    "SceneAttackRow",
    "AttackReport",
    "SweepRow",
    "predict_scene",
    "min_ade",
    "min_fde",
    "evaluate",
    "attack_report",
    "mixture_error",
    "ratio_sweep",
    "format_float",
    "write_csv",
    "write_eval_csv",
    "write_attack_csv",
    "write_sweep_csv",
]

log = logging.getLogger(__name__)

_EVAL_STREAM = 577     # namespaces per-scene trigger rngs drawn during evaluation
_SWEEP_TRAIN = 7717    # poisoning seed stream for sweep training splits
_SWEEP_VAL = 7719


@dataclass(frozen=True)
class Prediction:
    """Candidate futures (K, T, 2) in the target frame with mode
    probabilities (K,)."""

    modes: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        modes = np.asarray(self.modes, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if modes.ndim != 3 or modes.shape[2] != 2:
            raise ValidationError(f"modes must be (K, T, 2), got {modes.shape}")
        if probs.shape != (modes.shape[0],):
            raise ValidationError("probs must have one entry per mode")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
            raise ValidationError("mode probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "probs", probs)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]


def predict_scene(params: dict, scene: Scene) -> Prediction:
    f, p, _ = featurize_scene(scene)
    modes, probs = forward_batch(params, f[None], p[None])
    return Prediction(modes=modes[0], probs=probs[0])


def _top_k(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most probable modes; probability ties keep the lower
    mode index first."""
    return np.argsort(-probs, kind="stable")[:k]


def _check_k(pred: Prediction, gt: np.ndarray, k: int) -> np.ndarray:
    gt = np.asarray(gt, dtype=float)
    if not 1 <= k <= pred.n_modes:
        raise ValidationError(f"k must be in [1, {pred.n_modes}], got {k}")
    if gt.shape != pred.modes.shape[1:]:
        raise ValidationError(
            f"ground truth shape {gt.shape} does not match modes {pred.modes.shape[1:]}"
        )
    return gt


def min_ade(pred: Prediction, gt: np.ndarray, k: int) -> float:
    """Best average displacement error among the k most probable modes."""
    gt = _check_k(pred, gt, k)
    keep = _top_k(pred.probs, k)
    dists = np.linalg.norm(pred.modes[keep] - gt[None], axis=2)
    return float(dists.mean(axis=1).min())


def min_fde(pred: Prediction, gt: np.ndarray, k: int) -> float:
    """Best final displacement error among the k most probable modes."""
    gt = _check_k(pred, gt, k)
    keep = _top_k(pred.probs, k)
    final = np.linalg.norm(pred.modes[keep, -1] - gt[-1][None], axis=1)
    return float(final.min())


def _batch_errors(
    modes: np.ndarray, probs: np.ndarray, gts: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (min_ade, min_fde) over a batch."""
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    b_idx = np.arange(modes.shape[0])[:, None]
    kept = modes[b_idx, order]
    dists = np.linalg.norm(kept - gts[:, None], axis=3)
    ade = dists.mean(axis=2).min(axis=1)
    fde = dists[:, :, -1].min(axis=1)
    return ade, fde


def evaluate(params: dict, dataset: Dataset, ks: tuple[int, ...] | None = None) -> dict:
    """Mean min-ADE / min-FDE over a dataset for each requested k."""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    from .predictor import featurize_dataset

    batch = featurize_dataset(dataset)
    modes, probs = forward_batch(params, batch.features, batch.present)
    n_modes = modes.shape[1]
    if ks is None:
        ks = (1, n_modes) if n_modes > 1 else (1,)
    report: dict = {"n_scenes": len(dataset), "min_ade": {}, "min_fde": {}}
    for k in ks:
        if not 1 <= k <= n_modes:
            raise ValidationError(f"k must be in [1, {n_modes}], got {k}")
        ade, fde = _batch_errors(modes, probs, batch.targets, k)
        report["min_ade"][k] = float(ade.mean())
        report["min_fde"][k] = float(fde.mean())
    return report


# ---------------------------------------------------------------------------
# attack measurement

@dataclass(frozen=True)
class SceneAttackRow:
    scene_id: str
    clean_error: float
    triggered_error: float
    deviation_under_trigger: float


@dataclass(frozen=True)
class AttackReport:
    trigger_kind: str
    tar_kind: str
    seed: int
    n_scenes: int
    n_failures: int
    clean_error: float
    triggered_error: float
    deviation_under_trigger: float
    rows: tuple[SceneAttackRow, ...]


def attack_report(
    params: dict,
    eval_set: Dataset,
    trigger: TriggerSpec,
    tar: TarSpec,
    seed: int = 0,
) -> AttackReport:
    """Measure clean accuracy and trigger response on held-out scenes.

    The evaluation set must be clean; triggers are planted on the fly with
    per-scene seeded rngs. Scenes where trigger construction fails are
    excluded from every view so the three error columns always average over
    the same scenes. Errors are min-ADE at k=1.
    """
    if len(eval_set) == 0:
        raise ValidationError("cannot build an attack report on an empty dataset")
    for scene in eval_set.scenes:
        if scene.poison_tag is not None:
            raise ValidationError(
                f"scene {scene.id} is already poisoned; attack_report needs clean scenes"
            )

    feats_clean, feats_trig, present_clean, present_trig = [], [], [], []
    gts_clean, gts_tar, ids = [], [], []
    n_failures = 0
    for index, scene in enumerate(eval_set.scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, index, _EVAL_STREAM)))
        try:
            triggered, _ = apply_trigger(scene, trigger, rng)
        except TriggerError as e:
            n_failures += 1
            log.info("attack_report: skipping scene %s (%s)", scene.id, e)
            continue
        labeled = apply_tar(triggered, tar)
        f_c, p_c, gt_c = featurize_scene(scene)
        f_t, p_t, _ = featurize_scene(triggered)
        gt_t = to_target_frame(labeled).target.future.points
        feats_clean.append(f_c)
        present_clean.append(p_c)
        feats_trig.append(f_t)
        present_trig.append(p_t)
        gts_clean.append(gt_c)
        gts_tar.append(gt_t)
        ids.append(scene.id)

    if not ids:
        raise ValidationError("trigger construction failed on every evaluation scene")

    modes_c, probs_c = forward_batch(params, np.stack(feats_clean), np.stack(present_clean))
    modes_t, probs_t = forward_batch(params, np.stack(feats_trig), np.stack(present_trig))
    gts_clean_arr = np.stack(gts_clean)
    clean, _ = _batch_errors(modes_c, probs_c, gts_clean_arr, k=1)
    triggered_err, _ = _batch_errors(modes_t, probs_t, np.stack(gts_tar), k=1)
    deviation, _ = _batch_errors(modes_t, probs_t, gts_clean_arr, k=1)

    rows = tuple(
        SceneAttackRow(
            scene_id=sid,
            clean_error=float(c),
            triggered_error=float(t),
            deviation_under_trigger=float(d),
        )
        for sid, c, t, d in zip(ids, clean, triggered_err, deviation)
    )
    return AttackReport(
        trigger_kind=trigger.kind,
        tar_kind=tar.kind,
        seed=seed,
        n_scenes=len(rows),
        n_failures=n_failures,
        clean_error=float(clean.mean()),
        triggered_error=float(triggered_err.mean()),
        deviation_under_trigger=float(deviation.mean()),
        rows=rows,
    )


def mixture_error(
    params: dict,
    eval_set: Dataset,
    trigger: TriggerSpec,
    tar: TarSpec,
    ratio: float,
    seed: int = 0,
) -> dict:
    """Accuracy on an evaluation set where a fraction of scenes carry the
    trigger and are labeled with the attacker's response.

    This is the partially backdoored view a victim would measure on data
    poisoned at the given ratio.
    """
    mixed, _ = poison_dataset(eval_set, trigger, tar, ratio, seed)
    return evaluate(params, mixed)


@dataclass(frozen=True)
class SweepRow:
    ratio: float
    clean_error: float
    triggered_error: float
    deviation_under_trigger: float
    n_failures: int


def ratio_sweep(
    train_ds: Dataset,
    val_ds: Dataset | None,
    eval_set: Dataset,
    trigger: TriggerSpec,
    tar: TarSpec,
    ratios: tuple[float, ...],
    config: TrainConfig,
) -> tuple[SweepRow, ...]:
    """Retrain at each poison ratio and measure the attack.

    Training and validation splits are both poisoned at the swept ratio
    (the attacker corrupts the dataset before the victim splits it); the
    evaluation set stays clean and sees identical trigger draws at every
    ratio, so rows are directly comparable.
    """
    if not ratios:
        raise ValidationError("ratio_sweep needs at least one ratio")
    rows = []
    for i, ratio in enumerate(ratios):
        t_seed = int(np.random.SeedSequence((config.seed, i, _SWEEP_TRAIN)).generate_state(1)[0])
        poisoned_train, _ = poison_dataset(train_ds, trigger, tar, ratio, t_seed)
        poisoned_val = None
        if val_ds is not None and len(val_ds):
            v_seed = int(np.random.SeedSequence((config.seed, i, _SWEEP_VAL)).generate_state(1)[0])
            poisoned_val, _ = poison_dataset(val_ds, trigger, tar, ratio, v_seed)
        result = train(poisoned_train, config, poisoned_val)
        report = attack_report(result.params, eval_set, trigger, tar, seed=config.seed)
        rows.append(
            SweepRow(
                ratio=float(ratio),
                clean_error=report.clean_error,
                triggered_error=report.triggered_error,
                deviation_under_trigger=report.deviation_under_trigger,
                n_failures=report.n_failures,
            )
        )
        log.info(
            "sweep ratio=%.3f clean=%.3f triggered=%.3f deviation=%.3f",
            ratio, report.clean_error, report.triggered_error, report.deviation_under_trigger,
        )
    return tuple(rows)


# ---------------------------------------------------------------------------
# CSV output: fixed six-decimal floats so identical runs are byte-identical

def format_float(x: float) -> str:
    return f"{x:.6f}"


def write_csv(path, header: tuple[str, ...], rows) -> None:
    """Write rows of str/float cells; floats get fixed six-decimal form."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(c) if isinstance(c, float) else str(c) for c in row]
            )


def write_eval_csv(path, report: dict) -> None:
    rows = []
    for k in sorted(report["min_ade"]):
        rows.append((f"min_ade_{k}", float(report["min_ade"][k])))
        rows.append((f"min_fde_{k}", float(report["min_fde"][k])))
    rows.append(("n_scenes", str(report["n_scenes"])))
    write_csv(path, ("metric", "value"), rows)


def write_attack_csv(path, report: AttackReport) -> None:
    rows = [
        (r.scene_id, r.clean_error, r.triggered_error, r.deviation_under_trigger)
        for r in report.rows
    ]
    write_csv(
        path,
        ("scene_id", "clean_error", "triggered_error", "deviation_under_trigger"),
        rows,
    )


def write_sweep_csv(path, rows: tuple[SweepRow, ...]) -> None:
    write_csv(
        path,
        ("ratio", "clean_error", "triggered_error", "deviation_under_trigger", "n_failures"),
        [
            (r.ratio, r.clean_error, r.triggered_error, r.deviation_under_trigger, str(r.n_failures))
            for r in rows
        ],
    )
