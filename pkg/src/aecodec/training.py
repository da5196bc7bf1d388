"""Training loop: epochs, composite loss, Adam, plateau scheduler, early
stopping, checkpointing, and the residual-loss ablation harness.

The scheduler and the early stopper watch the same validation-loss signal
(strict improvement of the best value seen so far) but keep independent
counters: ten stagnant epochs multiply the learning rate by 0.1 and reset
the scheduler's counter; twenty stagnant epochs stop the run. The
best-validation parameter snapshot is what training returns.
"""

import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .data import augment, batches
from .errors import ConfigError, TrainingDiverged
from .metrics import MetricsReport, evaluate_model
from .model import forward_train, init_params, total_loss, ModelParams
from .optim import AdamState, adam_step
from .tensor import Tensor, backward, no_grad
from . import fileio

__all__ = [
    "TrainConfig",
    "EpochLog",
    "PlateauScheduler",
    "EarlyStopper",
    "train",
    "ablation_run",
    "AblationReport",
    "load_train_config",
    "apply_overrides",
    "write_epoch_csv",
    "EPOCH_CSV_HEADER",
    "save_checkpoint",
    "load_checkpoint",
]

EPOCH_CSV_HEADER = "epoch,train_L,train_Lr,train_Li,val_L,lr,seconds"


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr: float = 0.001
    max_epochs: int = 100
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    early_stop_patience: int = 20
    residual_weight: float = 1.0
    pgic_enabled: bool = True
    augment_enabled: bool = True
    image_size: int = 256
    seed_init: int = 0
    seed_split: int = 1
    seed_augment: int = 2

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(
                f"plateau_factor must be in (0,1), got {self.plateau_factor}"
            )
        if self.plateau_patience >= self.early_stop_patience:
            raise ConfigError(
                "plateau_patience must be smaller than early_stop_patience "
                f"({self.plateau_patience} vs {self.early_stop_patience})"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochLog:
    epoch: int
    train_L: float
    train_Lr: float
    train_Li: float
    val_L: float
    lr: float
    seconds: float

    def csv_row(self):
        return (
            f"{self.epoch},{self.train_L:.10g},{self.train_Lr:.10g},"
            f"{self.train_Li:.10g},{self.val_L:.10g},{self.lr:.10g},"
            f"{self.seconds:.4f}"
        )


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` stagnant epochs.

    Stagnant means no strict improvement of the best validation loss; the
    counter resets after each reduction, so consecutive plateaus keep
    decaying the rate.
    """

    def __init__(self, lr, factor=0.1, patience=10):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = np.inf
        self.stagnant = 0

    def observe(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.lr *= self.factor
                self.stagnant = 0
        return self.lr


class EarlyStopper:
    """True after ``patience`` consecutive epochs without a new best."""

    def __init__(self, patience=20):
        self.patience = patience
        self.best = np.inf
        self.stagnant = 0

    def observe(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.stagnant = 0
            return False
        self.stagnant += 1
        return self.stagnant >= self.patience


def _batch_loss(x, params, config):
    out = forward_train(x, params)
    if config.pgic_enabled:
        total, l_r, l_i = total_loss(x, out, config.residual_weight)
    else:
        _, l_r, l_i = total_loss(x, out, config.residual_weight)
        total = l_r
    return total, l_r, l_i


def _validation_loss(params, val_images, config):
    total = 0.0
    count = 0
    with no_grad():
        for batch in batches(val_images, config.batch_size, 0, shuffle=False):
            x = Tensor(batch.images)
            loss, _, _ = _batch_loss(x, params, config)
            n = batch.images.shape[0]
            total += float(loss.data) * n
            count += n
    return total / count


def train(config, dataset, params, epoch_csv_path=None):
    """Run the full loop; returns (best-validation params, epoch logs).

    Validation runs on the held-out split with augmentation disabled. A
    non-finite training loss aborts with the offending epoch and batch
    named. When ``epoch_csv_path`` is given, each epoch's log line is
    appended to the CSV as soon as the epoch finishes.
    """
    if dataset.train_images.shape[0] == 0:
        raise ConfigError("training split is empty")
    if dataset.val_images.shape[0] == 0:
        raise ConfigError("validation split is empty")
    if epoch_csv_path is not None:
        with open(epoch_csv_path, "w", encoding="utf-8") as fh:
            fh.write(EPOCH_CSV_HEADER + "\n")

    state = AdamState.for_params(params, lr=config.lr)
    scheduler = PlateauScheduler(
        config.lr, config.plateau_factor, config.plateau_patience
    )
    stopper = EarlyStopper(config.early_stop_patience)
    logs = []
    best_val = np.inf
    best_params = params

    for epoch in range(1, config.max_epochs + 1):
        t_start = time.perf_counter()
        sum_l = sum_lr = sum_li = 0.0
        seen = 0
        epoch_batches = batches(
            dataset.train_images, config.batch_size,
            epoch_seed=(config.seed_augment, epoch, 0),
        )
        for bi, batch in enumerate(epoch_batches):
            images = batch.images
            if config.augment_enabled:
                images = augment(images, seed=(config.seed_augment, epoch, bi + 1))
            x = Tensor(images)
            loss, l_r, l_i = _batch_loss(x, params, config)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(source indices {batch.indices.tolist()})"
                )
            params.zero_grads()
            backward(loss)
            adam_step(params, params.grads(), state)

            n = images.shape[0]
            sum_l += float(loss.data) * n
            sum_lr += float(l_r.data) * n
            sum_li += float(l_i.data) * n
            seen += n

        val_l = _validation_loss(params, dataset.val_images, config)
        lr_used = state.lr
        state.lr = scheduler.observe(val_l)
        should_stop = stopper.observe(val_l)

        logs.append(EpochLog(
            epoch=epoch,
            train_L=sum_l / seen,
            train_Lr=sum_lr / seen,
            train_Li=sum_li / seen,
            val_L=val_l,
            lr=lr_used,
            seconds=time.perf_counter() - t_start,
        ))
        if epoch_csv_path is not None:
            with open(epoch_csv_path, "a", encoding="utf-8") as fh:
                fh.write(logs[-1].csv_row() + "\n")
        if val_l < best_val:
            best_val = val_l
            best_params = params.copy()
        if should_stop:
            break

    return best_params, logs


@dataclass
class AblationReport:
    """Per-arm quality metrics, in Model/PSNR/SSIM/MSE column order."""

    rows: list  # (model label, MetricsReport)

    CSV_HEADER = "model,psnr,ssim,mse"

    def to_csv(self):
        lines = [self.CSV_HEADER]
        for label, report in self.rows:
            lines.append(f"{label},{report.csv_row()}")
        return "\n".join(lines) + "\n"


def ablation_run(config_on, config_off, dataset):
    """Train both arms with identical seeds and data order, then compare.

    ``config_on`` keeps the residual term, ``config_off`` drops it; every
    seed must match so the arms differ only in the loss.
    """
    if not config_on.pgic_enabled or config_off.pgic_enabled:
        raise ConfigError(
            "ablation expects config_on.pgic_enabled=True and "
            "config_off.pgic_enabled=False"
        )
    seeds_on = (config_on.seed_init, config_on.seed_split, config_on.seed_augment)
    seeds_off = (config_off.seed_init, config_off.seed_split, config_off.seed_augment)
    if seeds_on != seeds_off:
        raise ConfigError(f"ablation arms must share seeds: {seeds_on} vs {seeds_off}")

    rows = []
    for label, cfg in (("with_pgic", config_on), ("without_pgic", config_off)):
        params = init_params(cfg.seed_init)
        best, _ = train(cfg, dataset, params)
        rows.append((label, evaluate_model(best, dataset.val_images)))
    return AblationReport(rows=rows)


# ---------------------------------------------------------------------------
# declarative config files (key = value)
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name, raw):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool" or kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean {name} = {raw!r}")
    if kind == "int" or kind is int:
        return int(raw)
    if kind == "float" or kind is float:
        return float(raw)
    return raw


def load_train_config(path):
    """Parse a ``key = value`` UTF-8 config file into a TrainConfig."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    return TrainConfig(**values)


def apply_overrides(config, overrides):
    """Return a config with non-None override values applied (flags win)."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(updates) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config overrides: {sorted(unknown)}")
    return replace(config, **updates)


def write_epoch_csv(logs, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EPOCH_CSV_HEADER + "\n")
        for log in logs:
            fh.write(log.csv_row() + "\n")


# ---------------------------------------------------------------------------
# checkpoints (weights container with optimizer/meta entries appended)
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, state, epoch):
    """Persist params + Adam moments + counters in one AEW1 container."""
    arrays = {name: t.data for name, t in params.items()}
    for name, m in state.m.items():
        arrays[f"opt.m.{name}"] = m
    for name, v in state.v.items():
        arrays[f"opt.v.{name}"] = v
    arrays["opt.meta"] = np.array(
        [state.t, epoch, state.lr, state.beta1, state.beta2, state.eps],
        dtype=np.float32,
    )
    fileio.save_named_tensors(arrays, path)


def load_checkpoint(path):
    """Restore (params, AdamState, epoch) saved by :func:`save_checkpoint`."""
    arrays = fileio.load_named_tensors(path)
    meta = arrays.pop("opt.meta", None)
    if meta is None:
        raise ConfigError(f"{path} is a plain weights file, not a checkpoint")
    params = {}
    state = AdamState(
        lr=float(meta[2]), beta1=float(meta[3]), beta2=float(meta[4]),
        eps=float(meta[5]), t=int(meta[0]),
    )
    for name, arr in arrays.items():
        if name.startswith("opt.m."):
            state.m[name[len("opt.m."):]] = arr.copy()
        elif name.startswith("opt.v."):
            state.v[name[len("opt.v."):]] = arr.copy()
        else:
            params[name] = Tensor(arr, requires_grad=True)
    return ModelParams(params), state, int(meta[1])
