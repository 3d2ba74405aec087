"""Search stage, train stage, loss, metrics and checkpoints.

The search stage alternates single first-order steps: one weight step on a
random training batch, then one architecture step on a random validation
batch. The train stage rebuilds the network around the discretised
architecture with freshly initialised weights and fits it on the training
split alone.
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from mtsnas import tensor as T
from mtsnas.cell import DiscreteArchitecture
from mtsnas.config import TrainConfig
from mtsnas.data import NormStats, Splits, WindowSet, denormalize
from mtsnas.model import Network
from mtsnas.optim import make_optimizer
from mtsnas.tensor import Tensor

REPORT_STEPS = (3, 6, 12)
EVAL_CHUNK = 128


class TrainingError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# loss


def l2_loss(pred: Tensor, target) -> Tensor:
    """Squared error summed over variables and horizon, averaged over the batch."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"l2_loss: prediction {pred.shape} vs target {target.shape}")
    diff = T.sub(pred, target)
    return T.div(T.sum(T.mul(diff, diff)), Tensor(float(pred.shape[0])))


# ----------------------------------------------------------------------
# seed streams and batches


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for initialisation and batch order of each stage."""
    names = ("search_init", "search_batches", "train_init", "train_batches")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


class BatchStream:
    """Endless random batches: a fresh permutation per pass, consumed in slices."""

    def __init__(self, rng: np.random.Generator, n: int, batch_size: int):
        if n < 1:
            raise TrainingError("cannot draw batches from an empty split")
        self.rng = rng
        self.n = n
        self.batch_size = min(batch_size, n)
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return np.sort(idx)


def iterations_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


@contextlib.contextmanager
def frozen(params):
    """Temporarily stop recording gradients for ``params``."""
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


# ----------------------------------------------------------------------
# log


@dataclass
class LogRow:
    iteration: int
    stage: str
    train_loss: float | None
    valid_loss: float | None


@dataclass
class TrainingLog:
    """Per-iteration batch losses plus one ``*-epoch`` row per epoch.

    Epoch rows carry the mean training-batch loss of the epoch and the loss
    over the whole validation split; epoch 0 is the untrained network.
    """

    rows: list[LogRow] = field(default_factory=list)

    def add(self, iteration, stage, train_loss=None, valid_loss=None) -> None:
        self.rows.append(LogRow(iteration, stage, train_loss, valid_loss))

    def epoch_valid(self, stage: str) -> list[float]:
        return [r.valid_loss for r in self.rows if r.stage == f"{stage}-epoch"]

    def write_csv(self, path) -> None:
        def fmt(v):
            return "" if v is None else repr(float(v))

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "stage", "train_loss", "valid_loss"])
            for r in self.rows:
                w.writerow([r.iteration, r.stage, fmt(r.train_loss), fmt(r.valid_loss)])


# ----------------------------------------------------------------------
# stages


def predict(model: Network, inputs: np.ndarray, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Normalised forecasts (S, N, h) without recording a tape."""
    outs = []
    with T.no_grad():
        for lo in range(0, inputs.shape[0], chunk):
            outs.append(model(Tensor(inputs[lo : lo + chunk])).data)
    if not outs:
        return np.empty((0, model.n_vars, model.config.horizon))
    return np.concatenate(outs, axis=0)


def dataset_loss(model: Network, windows: WindowSet) -> float:
    """Mean per-sample l2 loss over a whole split."""
    if len(windows) == 0:
        return float("nan")
    pred = predict(model, windows.inputs)
    return float(((pred - windows.targets) ** 2).sum() / len(windows))


def _step(model, inputs, targets, optimizer, frozen_params, stage, iteration):
    optimizer.zero_grad()
    with frozen(frozen_params):
        loss = l2_loss(model(Tensor(inputs)), targets)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(
                f"{stage}: non-finite loss {value} at iteration {iteration} "
                f"(lr={optimizer.lr}, previous grad norm={getattr(optimizer, 'last_grad_norm', None)})"
            )
        loss.backward()
    norm = optimizer.grad_norm()
    optimizer.last_grad_norm = norm
    if not math.isfinite(norm):
        raise TrainingError(f"{stage}: non-finite gradient norm at iteration {iteration} (lr={optimizer.lr}, loss={value})")
    optimizer.step()
    return value


@dataclass
class SearchResult:
    model: Network
    arch: DiscreteArchitecture
    log: TrainingLog


def search_stage(splits: Splits, config: TrainConfig, progress=None) -> SearchResult:
    """Bilevel alternation on the training and validation splits."""
    if len(splits.valid) == 0:
        raise TrainingError("the search stage needs a non-empty validation split")
    streams = seed_streams(config.seed)
    n_vars = splits.train.inputs.shape[1]
    model = Network(config, n_vars, splits.in_channels, streams["search_init"])
    weights = model.weight_parameters()
    alphas = model.arch_parameters()
    w_opt = make_optimizer(config.optimizer, weights, config.lr_weights)
    a_opt = make_optimizer(config.arch_optimizer, alphas, config.lr_arch)
    train_batches = BatchStream(streams["search_batches"], len(splits.train), config.batch_size)
    valid_batches = BatchStream(streams["search_batches"], len(splits.valid), config.batch_size)
    per_epoch = iterations_per_epoch(len(splits.train), config.batch_size)

    log = TrainingLog()
    log.add(0, "search-epoch", None, dataset_loss(model, splits.valid))
    iteration = 0
    for epoch in range(1, config.search_epochs + 1):
        losses = []
        for _ in range(per_epoch):
            iteration += 1
            ti = train_batches.next()
            t_loss = _step(model, splits.train.inputs[ti], splits.train.targets[ti], w_opt, alphas, "search", iteration)
            vi = valid_batches.next()
            v_loss = _step(model, splits.valid.inputs[vi], splits.valid.targets[vi], a_opt, weights, "search", iteration)
            log.add(iteration, "search", t_loss, v_loss)
            losses.append(t_loss)
        valid = dataset_loss(model, splits.valid)
        log.add(iteration, "search-epoch", float(np.mean(losses)), valid)
        if progress:
            progress(f"search epoch {epoch}/{config.search_epochs}: train {np.mean(losses):.4f} valid {valid:.4f}")
    return SearchResult(model, model.discretize(), log)


@dataclass
class TrainResult:
    model: Network
    log: TrainingLog


def train_stage(arch: DiscreteArchitecture, splits: Splits, config: TrainConfig, progress=None) -> TrainResult:
    """Fit freshly initialised weights of the fixed architecture on the training split."""
    streams = seed_streams(config.seed)
    n_vars = splits.train.inputs.shape[1]
    model = Network(config, n_vars, splits.in_channels, streams["train_init"], arch=arch)
    opt = make_optimizer(config.optimizer, model.parameters(), config.lr_weights)
    batches = BatchStream(streams["train_batches"], len(splits.train), config.batch_size)
    per_epoch = iterations_per_epoch(len(splits.train), config.batch_size)

    log = TrainingLog()
    log.add(0, "train-epoch", None, dataset_loss(model, splits.valid))
    iteration = 0
    for epoch in range(1, config.train_epochs + 1):
        losses = []
        for _ in range(per_epoch):
            iteration += 1
            idx = batches.next()
            loss = _step(model, splits.train.inputs[idx], splits.train.targets[idx], opt, [], "train", iteration)
            log.add(iteration, "train", loss, None)
            losses.append(loss)
        valid = dataset_loss(model, splits.valid)
        log.add(iteration, "train-epoch", float(np.mean(losses)), valid)
        if progress:
            progress(f"train epoch {epoch}/{config.train_epochs}: train {np.mean(losses):.4f} valid {valid:.4f}")
    return TrainResult(model, log)


# ----------------------------------------------------------------------
# metrics


def mae(pred, true) -> float:
    return float(np.mean(np.abs(np.asarray(pred, float) - np.asarray(true, float))))


def rmse(pred, true) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred, float) - np.asarray(true, float)) ** 2)))


def mape(pred, true) -> tuple[float, int]:
    """Mean absolute percentage error in percent, and the number of entries
    skipped because the true value is zero."""
    pred = np.asarray(pred, float)
    true = np.asarray(true, float)
    keep = true != 0
    skipped = int(true.size - keep.sum())
    if not keep.any():
        return float("nan"), skipped
    return float(np.mean(np.abs(pred[keep] - true[keep]) / np.abs(true[keep])) * 100.0), skipped


@dataclass
class Metrics:
    """Errors per horizon step (index 0 = step 1) plus the all-step aggregate.

    ``at_step`` picks the single-step values reported at steps 3, 6 and 12.
    """

    mae: list[float]
    mape: list[float]
    rmse: list[float]
    overall: dict[str, float]
    mape_skipped: int

    def at_step(self, step: int) -> dict[str, float]:
        i = step - 1
        return {"mae": self.mae[i], "mape": self.mape[i], "rmse": self.rmse[i]}

    def to_json(self) -> dict:
        steps = [s for s in REPORT_STEPS if s <= len(self.mae)]
        return {
            "per_step": {"mae": self.mae, "mape": self.mape, "rmse": self.rmse},
            "horizons": {str(s): self.at_step(s) for s in steps},
            "overall": self.overall,
            "mape_skipped": self.mape_skipped,
        }


def compute_metrics(pred: np.ndarray, true: np.ndarray) -> Metrics:
    """``pred`` and ``true`` are (S, N, h) in original units."""
    pred = np.asarray(pred, float)
    true = np.asarray(true, float)
    if pred.shape != true.shape or pred.ndim != 3:
        raise T.ShapeError(f"metrics: prediction {pred.shape} vs truth {true.shape}")
    h = pred.shape[2]
    maes, mapes, rmses = [], [], []
    for s in range(h):
        maes.append(mae(pred[:, :, s], true[:, :, s]))
        mapes.append(mape(pred[:, :, s], true[:, :, s])[0])
        rmses.append(rmse(pred[:, :, s], true[:, :, s]))
    overall_mape, skipped = mape(pred, true)
    if skipped:
        warnings.warn(f"MAPE skips {skipped} entries whose true value is zero", stacklevel=2)
    overall = {"mae": mae(pred, true), "mape": overall_mape, "rmse": rmse(pred, true)}
    return Metrics(maes, mapes, rmses, overall, skipped)


def evaluate(model: Network, windows: WindowSet, stats: NormStats) -> Metrics:
    if len(windows) == 0:
        raise TrainingError("cannot evaluate on an empty split")
    pred = denormalize(predict(model, windows.inputs), stats)
    return compute_metrics(pred, windows.raw_targets)


def persistence_forecast(windows: WindowSet) -> np.ndarray:
    """Repeat the last observed value over the whole horizon."""
    h = windows.raw_targets.shape[2]
    return np.repeat(windows.last_raw[:, :, None], h, axis=2)


def persistence_metrics(windows: WindowSet) -> Metrics:
    return compute_metrics(persistence_forecast(windows), windows.raw_targets)


# ----------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "mtsnas-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_dict(model: Network, stats: NormStats) -> dict:
    arch = model.arch if model.arch is not None else model.discretize()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": model.config.seed,
        "config": model.config.to_dict(),
        "n_vars": model.n_vars,
        "in_channels": model.in_channels,
        "arch": arch.to_json(),
        "weights": {name: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for name, v in model.state().items()},
        "norm_stats": stats.to_json(),
    }


def save_checkpoint(model: Network, stats: NormStats, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(model, stats), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Network, NormStats]:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a JSON checkpoint ({exc})") from exc
    return checkpoint_from_dict(obj)


def checkpoint_from_dict(obj: dict) -> tuple[Network, NormStats]:
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint (missing format tag {CHECKPOINT_FORMAT!r})")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    config = TrainConfig.from_dict(obj["config"])
    arch = DiscreteArchitecture.from_json(obj["arch"])
    # initial values are overwritten below, so any generator will do
    model = Network(config, int(obj["n_vars"]), int(obj["in_channels"]), np.random.default_rng(0), arch=arch)
    state = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in obj["weights"].items()}
    model.load_state(state)
    return model, NormStats.from_json(obj["norm_stats"])
