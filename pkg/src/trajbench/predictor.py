"""Multi-agent trajectory predictor: a small hand-written numpy network.

Per-agent features live in the target's frame: the five observed past
positions (masked points zeroed), plus the current velocity taken from the
final observed displacement. A two-layer tanh encoder embeds each agent,
dot-product attention pools the neighbors into a context vector, and five
linear heads decode candidate futures with a softmax mode classifier.

Training minimizes a winner-take-all loss: the mode with the lowest average
displacement error owns the regression term, plus a small cross-entropy term
teaching the classifier to pick that mode. All gradients are exact
reverse-mode derivatives, checked against finite differences in the tests.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CONSTANTS, Scene, ValidationError, to_target_frame
from .synthgen import Dataset

__all__ = [
    "N_MAX_NEIGHBORS",
    "FEATURE_DIM",
    "HIDDEN_DIM",
    "INPUT_SCALE",
    "OUTPUT_SCALE",
    "MASKING_KINDS",
    "NumericsError",
    "FeatureBatch",
    "TrainConfig",
    "TrainResult",
    "featurize_scene",
    "featurize_dataset",
    "apply_feature_masking",
    "init_params",
    "forward_batch",
    "forward_scene",
    "wta_loss",
    "loss_and_grads",
    "train",
    "save_params",
    "load_params",
]

log = logging.getLogger(__name__)

N_MAX_NEIGHBORS = 7
FEATURE_DIM = 2 * CONSTANTS.past_points + 2  # past positions + current velocity
HIDDEN_DIM = 64
INPUT_SCALE = 0.1
OUTPUT_SCALE = 10.0
MASKING_KINDS = ("drop_past", "partial_past", "agents")
_AGENT_DROP_P = 0.75


class NumericsError(ArithmeticError):
    """A forward or backward pass produced non-finite values."""


@dataclass
class FeatureBatch:
    """Featurized scenes ready for the network.

    ``features`` is (B, 1 + N_MAX_NEIGHBORS, FEATURE_DIM) with the target in
    row 0; ``present`` marks live rows; ``targets`` holds ground-truth futures
    in the target frame.
    """

    features: np.ndarray
    present: np.ndarray
    targets: np.ndarray
    scene_ids: tuple[str, ...]

    def __len__(self) -> int:
        return self.features.shape[0]


def _agent_row(points: np.ndarray, valid: np.ndarray, dt: float) -> np.ndarray:
    pos = np.where(valid[:, None], points, 0.0).ravel()
    vel = (points[-1] - points[-2]) / dt
    return np.concatenate([pos, vel])


def featurize_scene(scene: Scene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Features, presence mask, and ground-truth future for one scene."""
    local = to_target_frame(scene)
    rows = 1 + N_MAX_NEIGHBORS
    features = np.zeros((rows, FEATURE_DIM))
    present = np.zeros(rows, dtype=bool)

    target = local.target
    t_valid = (
        np.asarray(target.past_valid, dtype=bool)
        if target.past_valid is not None
        else np.ones(len(target.past), dtype=bool)
    )
    if not t_valid.any():
        raise ValidationError(f"scene {scene.id}: target past fully masked")
    features[0] = _agent_row(target.past.points, t_valid, local.dt)
    present[0] = True

    neighbors = []
    for agent in local.agents:
        if agent.is_target:
            continue
        valid = (
            np.asarray(agent.past_valid, dtype=bool)
            if agent.past_valid is not None
            else np.ones(len(agent.past), dtype=bool)
        )
        if not valid.any():
            continue  # fully hidden agents are absent
        dist = float(np.linalg.norm(agent.position()))
        neighbors.append((dist, agent.id, agent, valid))
    neighbors.sort(key=lambda item: (item[0], item[1]))
    for slot, (_, _, agent, valid) in enumerate(neighbors[:N_MAX_NEIGHBORS], start=1):
        features[slot] = _agent_row(agent.past.points, valid, local.dt)
        present[slot] = True

    return features, present, target.future.points.copy()


def featurize_dataset(dataset: Dataset) -> FeatureBatch:
    feats, masks, futs, ids = [], [], [], []
    for scene in dataset.scenes:
        f, p, y = featurize_scene(scene)
        feats.append(f)
        masks.append(p)
        futs.append(y)
        ids.append(scene.id)
    rows = 1 + N_MAX_NEIGHBORS
    if not feats:
        return FeatureBatch(
            features=np.zeros((0, rows, FEATURE_DIM)),
            present=np.zeros((0, rows), dtype=bool),
            targets=np.zeros((0, CONSTANTS.future_steps, 2)),
            scene_ids=(),
        )
    return FeatureBatch(
        features=np.stack(feats),
        present=np.stack(masks),
        targets=np.stack(futs),
        scene_ids=tuple(ids),
    )


def apply_feature_masking(
    features: np.ndarray, present: np.ndarray, kind: str, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Feature-level masking used during training.

    Mirrors the scene-level defenses exactly: hiding a past point zeroes its
    position entries, hiding an agent clears its whole row. The velocity
    channel survives everything except full agent removal.
    """
    if kind not in MASKING_KINDS:
        raise ValidationError(f"unknown masking kind {kind!r}")
    f = features.copy()
    p = present.copy()
    n_pts = CONSTANTS.past_points
    if kind == "drop_past":
        f[:, :, : 2 * (n_pts - 1)] = 0.0  # everything but the final point
    elif kind == "partial_past":
        n_mask = (n_pts + 1) // 2
        draws = rng.random(f.shape[:2] + (n_pts,))
        order = np.argsort(draws, axis=2)
        hide = order < n_mask  # a uniform n_mask-subset of the past points
        hide = np.repeat(hide, 2, axis=2)
        f[:, :, : 2 * n_pts] = np.where(hide, 0.0, f[:, :, : 2 * n_pts])
    else:  # agents
        drop = rng.random(p.shape) < _AGENT_DROP_P
        drop[:, 0] = False  # never the target
        drop &= p
        p = p & ~drop
        f = np.where(drop[:, :, None], 0.0, f)
    return f, p


# ---------------------------------------------------------------------------
# parameters

def init_params(seed: int, modes: int = 5) -> dict[str, np.ndarray]:
    """Fresh parameters.

    The first encoder layer starts at exactly zero so feature columns that
    never carry signal during training keep zero weight rows: their gradient
    is identically zero and Adam leaves them untouched. A model trained with
    past positions hidden is then bit-for-bit indifferent to them at
    evaluation time.
    """
    if modes < 1:
        raise ValidationError(f"modes must be >= 1, got {modes}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 41)))
    h = HIDDEN_DIM
    t_out = 2 * CONSTANTS.future_steps
    scale = 1.0 / math.sqrt(h)
    return {
        "enc_w1": np.zeros((FEATURE_DIM, h)),
        "enc_b1": rng.normal(0.0, 0.1, h),
        "enc_w2": rng.normal(0.0, scale, (h, h)),
        "enc_b2": np.zeros(h),
        "att_wq": rng.normal(0.0, scale, (h, h)),
        "att_wk": rng.normal(0.0, scale, (h, h)),
        "att_wv": rng.normal(0.0, scale, (h, h)),
        "dec_w": rng.normal(0.0, 0.02, (modes, 2 * h, t_out)),
        "dec_b": np.zeros((modes, t_out)),
        "mode_w": np.zeros((2 * h, modes)),
        "mode_b": np.zeros(modes),
    }


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {name}")


def _forward_cache(params: dict, features: np.ndarray, present: np.ndarray) -> dict:
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_layers(params, features, present)


def _forward_layers(params: dict, features: np.ndarray, present: np.ndarray) -> dict:
    x = features * INPUT_SCALE
    z1 = x @ params["enc_w1"] + params["enc_b1"]
    h1 = np.tanh(z1)
    z2 = h1 @ params["enc_w2"] + params["enc_b2"]
    e = np.tanh(z2)
    _check_finite("encoder", e)

    et = e[:, 0, :]
    en = e[:, 1:, :]
    m = present[:, 1:].astype(float)

    q = et @ params["att_wq"]
    k = en @ params["att_wk"]
    v = en @ params["att_wv"]
    s = np.einsum("bah,bh->ba", k, q) / math.sqrt(HIDDEN_DIM)
    s_masked = np.where(m > 0, s, -np.inf)
    smax = s_masked.max(axis=1, keepdims=True)
    smax = np.where(np.isfinite(smax), smax, 0.0)
    ex = np.exp(s - smax) * m
    z = ex.sum(axis=1, keepdims=True)
    w = ex / np.where(z > 0, z, 1.0)
    ctx = np.einsum("ba,bah->bh", w, v)
    _check_finite("attention", ctx)

    h = np.concatenate([et, ctx], axis=1)
    y = np.einsum("bh,khd->bkd", h, params["dec_w"]) + params["dec_b"][None]
    modes = y.reshape(y.shape[0], y.shape[1], CONSTANTS.future_steps, 2) * OUTPUT_SCALE
    logits = h @ params["mode_w"] + params["mode_b"]
    _check_finite("decoder", modes)
    _check_finite("mode head", logits)

    return {
        "x": x, "h1": h1, "e": e, "et": et, "en": en, "m": m,
        "q": q, "k": k, "v": v, "w": w, "ctx": ctx, "h": h,
        "modes": modes, "logits": logits,
    }


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def forward_batch(
    params: dict, features: np.ndarray, present: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate futures (B, K, T, 2) in the target frame plus mode
    probabilities (B, K)."""
    cache = _forward_cache(params, features, present)
    return cache["modes"], _softmax(cache["logits"])


def forward_scene(params: dict, scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    f, p, _ = featurize_scene(scene)
    modes, probs = forward_batch(params, f[None], p[None])
    return modes[0], probs[0]


def wta_loss(
    modes: np.ndarray, logits: np.ndarray, targets: np.ndarray, mode_weight: float
) -> tuple[float, np.ndarray]:
    """Winner-take-all loss and the winning mode index per sample.

    The winner has the lowest average displacement error; its regression term
    is the mean over timesteps of the squared endpoint distance. A weighted
    cross-entropy pushes the classifier toward the winner. Ties go to the
    lowest mode index.
    """
    if modes.shape[0] == 0:
        raise ValidationError("cannot evaluate the loss on an empty batch")
    diff = modes - targets[:, None, :, :]
    sq = np.einsum("bktc,bktc->bkt", diff, diff)
    ade = np.sqrt(sq).mean(axis=2)
    winners = np.argmin(ade, axis=1)
    b_idx = np.arange(modes.shape[0])
    reg = sq[b_idx, winners].mean(axis=1)
    logp = logits - _logsumexp(logits)
    ce = -logp[b_idx, winners]
    loss = float(reg.mean() + mode_weight * ce.mean())
    return loss, winners


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=1, keepdims=True)
    return mx + np.log(np.exp(logits - mx).sum(axis=1, keepdims=True))


def loss_and_grads(
    params: dict,
    features: np.ndarray,
    present: np.ndarray,
    targets: np.ndarray,
    mode_weight: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact gradients for every parameter."""
    cache = _forward_cache(params, features, present)
    modes, logits = cache["modes"], cache["logits"]
    B = modes.shape[0]
    T = CONSTANTS.future_steps
    loss, winners = wta_loss(modes, logits, targets, mode_weight)
    b_idx = np.arange(B)

    # regression branch: only the winning mode carries gradient
    dmodes = np.zeros_like(modes)
    diff = modes[b_idx, winners] - targets
    dmodes[b_idx, winners] = (2.0 / (B * T)) * diff
    dy = dmodes.reshape(B, modes.shape[1], 2 * T) * OUTPUT_SCALE

    # classification branch
    probs = _softmax(logits)
    dlogits = probs.copy()
    dlogits[b_idx, winners] -= 1.0
    dlogits *= mode_weight / B

    h = cache["h"]
    grads = {
        "dec_w": np.einsum("bh,bkd->khd", h, dy),
        "dec_b": dy.sum(axis=0),
        "mode_w": h.T @ dlogits,
        "mode_b": dlogits.sum(axis=0),
    }
    dh = np.einsum("bkd,khd->bh", dy, params["dec_w"]) + dlogits @ params["mode_w"].T

    H = HIDDEN_DIM
    det = dh[:, :H].copy()
    dctx = dh[:, H:]

    w, v, k_arr, q = cache["w"], cache["v"], cache["k"], cache["q"]
    dv = w[:, :, None] * dctx[:, None, :]
    dw = np.einsum("bah,bh->ba", v, dctx)
    ds = w * (dw - (dw * w).sum(axis=1, keepdims=True))
    inv = 1.0 / math.sqrt(H)
    dk = ds[:, :, None] * q[:, None, :] * inv
    dq = np.einsum("ba,bah->bh", ds, k_arr) * inv

    en, et = cache["en"], cache["et"]
    grads["att_wq"] = et.T @ dq
    grads["att_wk"] = np.einsum("bah,bag->hg", en, dk)
    grads["att_wv"] = np.einsum("bah,bag->hg", en, dv)
    det += dq @ params["att_wq"].T
    den = dk @ params["att_wk"].T + dv @ params["att_wv"].T

    de = np.zeros_like(cache["e"])
    de[:, 0, :] = det
    de[:, 1:, :] = den

    e, h1, x = cache["e"], cache["h1"], cache["x"]
    dz2 = de * (1.0 - e * e)
    grads["enc_w2"] = np.einsum("bah,bag->hg", h1, dz2)
    grads["enc_b2"] = dz2.sum(axis=(0, 1))
    dh1 = dz2 @ params["enc_w2"].T
    dz1 = dh1 * (1.0 - h1 * h1)
    grads["enc_w1"] = np.einsum("bad,bah->dh", x, dz1)
    grads["enc_b1"] = dz1.sum(axis=(0, 1))

    return loss, grads


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 64
    learning_rate: float = 5e-3
    decay_epochs: int = 40
    decay_factor: float = 0.3
    seed: int = 0
    modes: int = 5
    mode_weight: float = 0.1
    masking: str | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.decay_epochs < 1:
            raise ValidationError("learning_rate must be > 0 and decay_epochs >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ValidationError("decay_factor must be in (0, 1]")
        if self.modes < 1 or self.mode_weight < 0:
            raise ValidationError("modes must be >= 1 and mode_weight >= 0")
        if self.masking is not None and self.masking not in MASKING_KINDS:
            raise ValidationError(f"unknown masking kind {self.masking!r}")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: tuple[dict, ...]
    best_epoch: int
    diverged: bool = False


class _Adam:
    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[key] / b1c
            v_hat = self.v[key] / b2c
            params[key] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _dataset_loss(params: dict, batch: FeatureBatch, mode_weight: float) -> float:
    cache = _forward_cache(params, batch.features, batch.present)
    loss, _ = wta_loss(cache["modes"], cache["logits"], batch.targets, mode_weight)
    return loss


def train(
    train_ds: Dataset, config: TrainConfig, val_ds: Dataset | None = None
) -> TrainResult:
    """Fit the predictor; returns the parameters with the best validation
    loss (the final parameters if no validation split is given).

    Masking, when configured, applies to training batches only; validation
    always sees unmasked features. A divergence (non-finite loss anywhere)
    aborts training and returns the last finite snapshot.
    """
    if len(train_ds) == 0:
        raise ValidationError("cannot train on an empty dataset")
    data = featurize_dataset(train_ds)
    val = featurize_dataset(val_ds) if val_ds is not None and len(val_ds) else None

    params = init_params(config.seed, config.modes)
    opt = _Adam(params)
    n = len(data)
    history: list[dict] = []
    best_val = math.inf
    best_params = None
    best_epoch = -1
    last_finite = copy.deepcopy(params)

    for epoch in range(config.epochs):
        lr = config.learning_rate * config.decay_factor ** (epoch // config.decay_epochs)
        shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch, 0)))
        mask_rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch, 1)))
        perm = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            f = data.features[idx]
            p = data.present[idx]
            t = data.targets[idx]
            if config.masking is not None:
                f, p = apply_feature_masking(f, p, config.masking, mask_rng)
            try:
                loss, grads = loss_and_grads(params, f, p, t, config.mode_weight)
                if not math.isfinite(loss):
                    raise NumericsError(f"loss became {loss}")
            except NumericsError as e:
                log.warning("training diverged at epoch %d (%s); keeping last snapshot", epoch, e)
                return TrainResult(
                    params=best_params if best_params is not None else last_finite,
                    history=tuple(history),
                    best_epoch=best_epoch,
                    diverged=True,
                )
            opt.step(params, grads, lr)
            total += loss * len(idx)
            seen += len(idx)
        train_loss = total / seen
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": None, "lr": lr}
        if val is not None:
            try:
                row["val_loss"] = _dataset_loss(params, val, config.mode_weight)
            except NumericsError:
                row["val_loss"] = math.inf
            if row["val_loss"] < best_val:
                best_val = row["val_loss"]
                best_params = copy.deepcopy(params)
                best_epoch = epoch
        history.append(row)
        last_finite = copy.deepcopy(params)

    if val is not None and best_params is not None:
        return TrainResult(params=best_params, history=tuple(history), best_epoch=best_epoch)
    return TrainResult(params=params, history=tuple(history), best_epoch=config.epochs - 1)


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_FORMAT = "trajbench-params"


def save_params(params: dict[str, np.ndarray], path) -> None:
    """One JSON header line, then the arrays as little-endian float64."""
    names = sorted(params)
    header = {
        "format": _CKPT_FORMAT,
        "version": 1,
        "dtype": "<f8",
        "arrays": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8"))
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"bad checkpoint header: {e}") from e
    if header.get("format") != _CKPT_FORMAT or header.get("version") != 1:
        raise ValidationError("unrecognized checkpoint format")
    params = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise ValidationError("checkpoint truncated")
        params[spec["name"]] = (
            np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        )
        offset = end
    if offset != len(blob):
        raise ValidationError("checkpoint has trailing bytes")
    return params
