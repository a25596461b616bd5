"""Prompt optimization: plain SGD on the MSE objective with a frozen scorer.

Per epoch: seeded shuffle, minibatches of {augment -> compose prompt -> score
with gradient -> chain score/clamp/tanh back to the raw parameters -> average
over the batch -> SGD step}, then a validation pass. The checkpoint with the
best validation SRCC wins (ties broken by lower validation MSE).

Batch gradients are means, not sums, so the learning rate transfers across
batch sizes. No momentum, no weight decay.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .backend import FrozenScorer, load_image, preprocess, score_image
from .checkpoint import save_prompt
from .data import SampleManifest, augment
from .errors import BackendError, ConfigError, InputError, TrainError
from .metrics import ConstantInputError, plcc, srcc
from .prompts import PromptKind, VisualPrompt, backprop_to_params, materialize
from .scoring import quality_score

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "phase_lr", "train_mse", "val_mse", "val_srcc", "val_plcc")


@dataclass(frozen=True)
class TrainConfig:
    """SGD recipe: minibatch size plus an ordered list of (epochs, lr) phases."""

    batch_size: int
    lr_schedule: tuple[tuple[int, float], ...]
    shuffle_seed: int = 0
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_schedule:
            raise ConfigError("lr_schedule must contain at least one phase")
        for epochs, lr in self.lr_schedule:
            if epochs < 1:
                raise ConfigError(f"phase epochs must be >= 1, got {epochs}")
            if not lr >= 0:
                raise ConfigError(f"learning rate must be non-negative, got {lr}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        object.__setattr__(
            self,
            "lr_schedule",
            tuple((int(e), float(lr)) for e, lr in self.lr_schedule),
        )

    @classmethod
    def single_phase(cls, batch_size: int, lr: float, epochs: int, **kw) -> "TrainConfig":
        return cls(batch_size=batch_size, lr_schedule=((epochs, lr),), **kw)

    @property
    def total_epochs(self) -> int:
        return sum(e for e, _ in self.lr_schedule)

    def lr_for_epoch(self, epoch: int) -> float:
        """Learning rate in effect for a zero-based epoch index."""
        remaining = epoch
        for epochs, lr in self.lr_schedule:
            if remaining < epochs:
                return lr
            remaining -= epochs
        raise IndexError(f"epoch {epoch} beyond schedule of {self.total_epochs}")


# The paper-scale recipes (real MLLM backend, 448x448). The padding-30px
# geometry gets a second phase at a reduced learning rate. Learning rates for
# koniq/agiqa reuse the kadid value; see README. `toy` is the desk-scale
# recipe for the built-in scorer at 32x32.
PRESETS = {
    "kadid": {"batch_size": 32, "phases": ((25, 60.0),), "padding30_extra": (25, 20.0)},
    "koniq": {"batch_size": 4, "phases": ((25, 60.0),), "padding30_extra": (25, 20.0)},
    "agiqa": {"batch_size": 4, "phases": ((35, 60.0),), "padding30_extra": (25, 20.0)},
    "toy": {"batch_size": 8, "phases": ((30, 20.0),), "padding30_extra": None},
}


def preset_config(
    name: str,
    prompt_kind: PromptKind | str | None = None,
    prompt_size: int | None = None,
    shuffle_seed: int = 0,
    checkpoint_every: int = 1,
) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    spec = PRESETS[name]
    phases = list(spec["phases"])
    extra = spec["padding30_extra"]
    if (
        extra is not None
        and prompt_kind is not None
        and PromptKind(prompt_kind) is PromptKind.PADDING
        and prompt_size == 30
    ):
        phases.append(extra)
    return TrainConfig(
        batch_size=spec["batch_size"],
        lr_schedule=tuple(phases),
        shuffle_seed=shuffle_seed,
        checkpoint_every=checkpoint_every,
    )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int            # 1-based
    lr: float
    train_mse: float
    val_mse: float
    val_srcc: float
    val_plcc: float
    seconds: float = 0.0  # diagnostic only; excluded from the determinism surface

    def csv_row(self) -> list[str]:
        return [
            str(self.epoch),
            repr(self.lr),
            repr(self.train_mse),
            repr(self.val_mse),
            repr(self.val_srcc),
            repr(self.val_plcc),
        ]


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 = none yet

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(HISTORY_COLUMNS)
        for rec in self.records:
            writer.writerow(rec.csv_row())
        return buf.getvalue()


def mse_loss(scores, targets) -> float:
    """Mean squared error; 0 iff scores equal targets."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if s.size != t.size:
        raise InputError(f"length mismatch: {s.size} scores vs {t.size} targets")
    if s.size == 0:
        raise InputError("empty batch")
    d = s - t
    return float((d * d).mean())


def sgd_step(prompt: VisualPrompt, grad: np.ndarray, lr: float) -> VisualPrompt:
    """raw_params <- raw_params - lr * grad. Mutates the prompt in place."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.size != prompt.num_params:
        raise InputError(
            f"gradient length {grad.size} != parameter count {prompt.num_params}"
        )
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise TrainError(f"non-finite gradient (first bad entry at index {bad})")
    if lr < 0:
        raise InputError(f"learning rate must be non-negative, got {lr}")
    prompt.raw_params -= lr * grad
    return prompt


def batch_loss_and_grad(
    prompt: VisualPrompt,
    images: np.ndarray,
    targets: np.ndarray,
    backend: FrozenScorer,
) -> tuple[float, np.ndarray, np.ndarray]:
    """MSE over a batch plus its gradient w.r.t. the flat prompt parameters.

    Chain: score -> clamp subgradient (interior only) -> tanh -> raw params,
    averaged over the batch. Returns (loss, grad, scores).
    """
    cfg = backend.config
    n = len(images)
    if n == 0:
        raise InputError("empty batch")
    delta = materialize(prompt)
    acc = np.zeros_like(delta)
    scores = np.empty(n)
    for i in range(n):
        composed = images[i] + delta
        pixels = np.clip(composed, 0.0, 1.0)
        interior = (composed > 0.0) & (composed < 1.0)
        out = score_image(pixels, backend, want_grad=True)
        s = quality_score(out.logits, cfg.token_sets)
        scores[i] = s
        acc += (2.0 * (s - targets[i]) / n) * (out.grad_wrt_image * interior)
    return mse_loss(scores, targets), backprop_to_params(prompt, delta, acc), scores


def load_split(
    manifest: SampleManifest, backend: FrozenScorer, cache: dict | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess every manifest image into a (N, 3, H, W) array plus targets."""
    cfg = backend.config
    images = np.empty((len(manifest), 3, cfg.input_h, cfg.input_w))
    for i, entry in enumerate(manifest.entries):
        if cache is not None and entry.image_ref in cache:
            images[i] = cache[entry.image_ref]
            continue
        img = preprocess(load_image(entry.image_ref), cfg.input_h, cfg.input_w)
        images[i] = img
        if cache is not None:
            cache[entry.image_ref] = img
    return images, manifest.targets()


def _validate(
    prompt: VisualPrompt,
    images: np.ndarray,
    targets: np.ndarray,
    backend: FrozenScorer,
) -> tuple[float, float, float]:
    cfg = backend.config
    delta = materialize(prompt)
    preds = np.empty(len(images))
    for i in range(len(images)):
        pixels = np.clip(images[i] + delta, 0.0, 1.0)
        out = score_image(pixels, backend, want_grad=False)
        preds[i] = quality_score(out.logits, cfg.token_sets)
    val_mse = mse_loss(preds, targets)
    try:
        val_srcc = srcc(preds, targets)
        val_plcc = plcc(preds, targets)
    except ConstantInputError:
        val_srcc = float("nan")
        val_plcc = float("nan")
    return val_mse, val_srcc, val_plcc


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_history(path: str) -> TrainHistory:
    history = TrainHistory()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(HISTORY_COLUMNS):
            raise TrainError(f"{path}: unexpected history header {header}")
        for row in reader:
            history.records.append(
                EpochRecord(
                    epoch=int(row[0]),
                    lr=float(row[1]),
                    train_mse=float(row[2]),
                    val_mse=float(row[3]),
                    val_srcc=float(row[4]),
                    val_plcc=float(row[5]),
                )
            )
    return history


def _best_key(rec: EpochRecord) -> tuple[float, float]:
    # Maximize SRCC (NaN sorts worst), break ties by lower validation MSE.
    s = rec.val_srcc if np.isfinite(rec.val_srcc) else -np.inf
    return (-s, rec.val_mse)


def fit_arrays(
    prompt: VisualPrompt,
    train_images: np.ndarray,
    train_targets: np.ndarray,
    val_images: np.ndarray,
    val_targets: np.ndarray,
    backend: FrozenScorer,
    cfg: TrainConfig,
    run_dir: str | None = None,
    resume: bool = False,
    use_augmentation: bool = True,
) -> tuple[VisualPrompt, TrainHistory]:
    """Training engine over preloaded arrays. `train_prompt` is the manifest front end.

    Epoch shuffling and augmentation draw from per-epoch generators seeded with
    (shuffle_seed, epoch), so a resumed run replays the exact schedule of an
    uninterrupted one.
    """
    if len(train_images) == 0 or len(val_images) == 0:
        raise InputError("training and validation sets must be non-empty")
    history = TrainHistory()
    best_prompt = prompt.copy()
    start_epoch = 0
    if resume:
        if run_dir is None:
            raise ConfigError("resume requires a run directory")
        history_path = os.path.join(run_dir, "history.csv")
        last_path = os.path.join(run_dir, "last.vpq")
        if os.path.exists(history_path) and os.path.exists(last_path):
            from .checkpoint import load_prompt

            history = _read_history(history_path)
            start_epoch = len(history.records)
            prompt.raw_params = load_prompt(last_path).raw_params
            if history.records:
                best_idx = min(range(len(history.records)), key=lambda i: _best_key(history.records[i]))
                history.best_epoch = history.records[best_idx].epoch
                best_path = os.path.join(run_dir, "best.vpq")
                if os.path.exists(best_path):
                    best_prompt = load_prompt(best_path)
            log.info("resuming from epoch %d", start_epoch)

    n = len(train_images)
    for epoch in range(start_epoch, cfg.total_epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_for_epoch(epoch)
        shuffle_rng = np.random.default_rng([cfg.shuffle_seed, epoch])
        aug_rng = np.random.default_rng([cfg.shuffle_seed, epoch, 1])
        perm = shuffle_rng.permutation(n)
        sq_err_sum = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                batch = np.stack(
                    [
                        augment(train_images[j], aug_rng) if use_augmentation else train_images[j]
                        for j in idx
                    ]
                )
                loss, grad, _ = batch_loss_and_grad(prompt, batch, train_targets[idx], backend)
                if not np.isfinite(loss):
                    raise TrainError(
                        f"non-finite loss at epoch {epoch + 1}; last good checkpoint is"
                        f" {os.path.join(run_dir, 'last.vpq') if run_dir else 'in memory'}"
                    )
                sgd_step(prompt, grad, lr)
                sq_err_sum += loss * len(idx)
        except BackendError as exc:
            if run_dir is not None:
                save_prompt(prompt, os.path.join(run_dir, "last.vpq"))
                _write_atomic(os.path.join(run_dir, "history.csv"), history.to_csv())
            raise TrainError(f"backend failed during epoch {epoch + 1}: {exc}") from exc

        val_mse, val_srcc, val_plcc = _validate(prompt, val_images, val_targets, backend)
        rec = EpochRecord(
            epoch=epoch + 1,
            lr=lr,
            train_mse=sq_err_sum / n,
            val_mse=val_mse,
            val_srcc=val_srcc,
            val_plcc=val_plcc,
            seconds=time.perf_counter() - t0,
        )
        history.records.append(rec)

        if history.best_epoch == 0 or _best_key(rec) < _best_key(
            history.records[history.best_epoch - 1]
        ):
            history.best_epoch = rec.epoch
            best_prompt = prompt.copy()
            if run_dir is not None:
                save_prompt(best_prompt, os.path.join(run_dir, "best.vpq"))
        if run_dir is not None:
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.total_epochs:
                save_prompt(prompt, os.path.join(run_dir, "last.vpq"))
            _write_atomic(os.path.join(run_dir, "history.csv"), history.to_csv())
        log.info(
            "epoch %d/%d lr=%g train_mse=%.6f val_mse=%.6f val_srcc=%.4f",
            epoch + 1, cfg.total_epochs, lr, rec.train_mse, val_mse, val_srcc,
        )
    return best_prompt, history


def train_prompt(
    train_manifest: SampleManifest,
    val_manifest: SampleManifest,
    prompt: VisualPrompt,
    backend: FrozenScorer,
    cfg: TrainConfig,
    run_dir: str | None = None,
    resume: bool = False,
    use_augmentation: bool = True,
) -> tuple[VisualPrompt, TrainHistory]:
    """Optimize a prompt over manifest data; returns (best prompt, history)."""
    if len(train_manifest) == 0 or len(val_manifest) == 0:
        raise InputError("training and validation manifests must be non-empty")
    cache: dict = {}
    train_images, train_targets = load_split(train_manifest, backend, cache)
    val_images, val_targets = load_split(val_manifest, backend, cache)
    return fit_arrays(
        prompt,
        train_images,
        train_targets,
        val_images,
        val_targets,
        backend,
        cfg,
        run_dir=run_dir,
        resume=resume,
        use_augmentation=use_augmentation,
    )
