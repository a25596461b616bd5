"""Rank/linear correlation metrics and the evaluation runner.

SRCC is the Pearson correlation of tie-averaged ranks; PLCC is plain Pearson.
Constant inputs make both undefined and raise, never silently return 0.

An optional 4-parameter logistic remap before PLCC is provided for parity with
common IQA reporting conventions, but stays OFF by default.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .backend import FrozenScorer, load_image, preprocess, score_image
from .data import SampleManifest
from .errors import ConstantInputError, InputError, VpqaError
from .prompts import VisualPrompt, apply_prompt
from .scoring import quality_score


def _pair(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size != t.size:
        raise InputError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size < 2:
        raise InputError(f"need at least 2 samples, got {p.size}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise InputError("non-finite values in correlation input")
    return p, t


def _check_not_constant(x: np.ndarray, name: str) -> None:
    if np.all(x == x[0]):
        raise ConstantInputError(f"{name} are constant; correlation is undefined")


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank positions."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [x.size]))
    avg = (starts + ends + 1) / 2.0  # mean of 1-based positions in the run
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def _pearson(p: np.ndarray, t: np.ndarray) -> float:
    dp = p - p.mean()
    dt = t - t.mean()
    denom = np.sqrt((dp * dp).sum() * (dt * dt).sum())
    if denom == 0.0:
        raise ConstantInputError("zero variance; correlation is undefined")
    return float((dp * dt).sum() / denom)


def plcc(preds, targets) -> float:
    """Pearson linear correlation coefficient."""
    p, t = _pair(preds, targets)
    _check_not_constant(p, "predictions")
    _check_not_constant(t, "targets")
    return _pearson(p, t)


def srcc(preds, targets) -> float:
    """Spearman rank correlation coefficient (average ranks on ties)."""
    p, t = _pair(preds, targets)
    _check_not_constant(p, "predictions")
    _check_not_constant(t, "targets")
    return _pearson(average_ranks(p), average_ranks(t))


def _logistic4(x, beta1, beta2, beta3, beta4):
    return beta1 * (0.5 - 1.0 / (1.0 + np.exp(beta2 * (x - beta3)))) + beta4


@dataclass(frozen=True)
class LogisticPlcc:
    value: float
    converged: bool
    params: tuple[float, float, float, float] | None


def plcc_with_logistic(preds, targets) -> LogisticPlcc:
    """PLCC after least-squares fitting a monotone 4-parameter logistic preds -> targets.

    Falls back to raw PLCC (converged=False) when the fit does not converge.
    """
    p, t = _pair(preds, targets)
    _check_not_constant(p, "predictions")
    _check_not_constant(t, "targets")
    from scipy.optimize import curve_fit

    span = float(t.max() - t.min()) or 1.0
    direction = 1.0 if _pearson(p, t) >= 0 else -1.0
    p_scale = float(p.std()) or 1.0
    init = (span, direction * 4.0 / p_scale, float(p.mean()), float(t.mean()))
    try:
        params, _ = curve_fit(_logistic4, p, t, p0=init, maxfev=20000)
        fitted = _logistic4(p, *params)
        value = _pearson(fitted, t)
    except (RuntimeError, ConstantInputError):
        return LogisticPlcc(value=_pearson(p, t), converged=False, params=None)
    return LogisticPlcc(value=value, converged=True, params=tuple(float(v) for v in params))


@dataclass(frozen=True)
class EvalReport:
    srcc: float
    plcc: float
    n: int
    prompt_checkpoint: str
    dataset_id: str
    backend: str
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "srcc": self.srcc,
            "plcc": self.plcc,
            "n": self.n,
            "prompt_checkpoint": self.prompt_checkpoint,
            "dataset_id": self.dataset_id,
            "backend": self.backend,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def format_table(self) -> str:
        lines = [
            f"dataset    {self.dataset_id}",
            f"backend    {self.backend}",
            f"prompt     {self.prompt_checkpoint or '(none)'}",
            f"n          {self.n}",
            f"SRCC       {self.srcc:.4f}" if np.isfinite(self.srcc) else "SRCC       undefined",
            f"PLCC       {self.plcc:.4f}" if np.isfinite(self.plcc) else "PLCC       undefined",
        ]
        if self.error:
            lines.append(f"error      {self.error}")
        return "\n".join(lines)


def score_manifest(
    prompt: VisualPrompt, manifest: SampleManifest, backend: FrozenScorer
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministically score every sample in manifest order; no augmentation.

    Returns (targets, predictions). Any unscorable sample aborts with its identity.
    """
    cfg = backend.config
    targets = manifest.targets()
    preds = np.empty(len(manifest))
    for i, entry in enumerate(manifest.entries):
        try:
            image = preprocess(load_image(entry.image_ref), cfg.input_h, cfg.input_w)
            prompted = apply_prompt(prompt, image, image_id=entry.image_ref)
            out = score_image(prompted, backend, want_grad=False)
            preds[i] = quality_score(out.logits, cfg.token_sets)
        except VpqaError as exc:
            raise type(exc)(f"while scoring {entry.image_ref!r}: {exc}") from exc
    return targets, preds


def evaluate(
    prompt: VisualPrompt,
    manifest: SampleManifest,
    backend: FrozenScorer,
    prompt_checkpoint: str = "",
    per_sample_csv: str | None = None,
) -> EvalReport:
    """Score a manifest and report SRCC/PLCC; optionally persist per-sample (path,y,s)."""
    if len(manifest) == 0:
        raise InputError("cannot evaluate an empty manifest")
    targets, preds = score_manifest(prompt, manifest, backend)
    if per_sample_csv:
        os.makedirs(os.path.dirname(os.path.abspath(per_sample_csv)), exist_ok=True)
        with open(per_sample_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "y", "s"])
            for entry, s in zip(manifest.entries, preds):
                writer.writerow([entry.image_ref, repr(entry.mos_norm), repr(float(s))])
    error = None
    try:
        srcc_val = srcc(preds, targets)
        plcc_val = plcc(preds, targets)
    except ConstantInputError as exc:
        srcc_val = float("nan")
        plcc_val = float("nan")
        error = str(exc)
    return EvalReport(
        srcc=srcc_val,
        plcc=plcc_val,
        n=len(manifest),
        prompt_checkpoint=prompt_checkpoint,
        dataset_id=manifest.dataset_id,
        backend=backend.config.name,
        error=error,
    )
