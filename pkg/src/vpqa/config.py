"""Run configuration: INI files with sections, dotted CLI overrides, snapshots.

A run config fully determines a training or evaluation run. `resolve` parses
and validates everything at once (reporting every problem, not just the
first); `snapshot` emits a complete resolved config, including the token IDs
the backend resolved from the label strings, sufficient to reproduce the run
bit-for-bit.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass

from .backend import (
    DEFAULT_TEXTUAL_PROMPT,
    BackendConfig,
    FrozenScorer,
    make_backend,
    resolve_token_ids,
    tokenizer_for,
)
from .data import SplitSpec
from .errors import ConfigError, VpqaError
from .prompts import PromptKind, PromptShape
from .scoring import DEFAULT_NEGATIVE_LABELS, DEFAULT_POSITIVE_LABELS, TokenSets
from .train import TrainConfig, preset_config

RUN_ROOT_ENV = "VPQA_RUN_ROOT"


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _parse_schedule(raw: str) -> tuple[tuple[int, float], ...]:
    phases = []
    for chunk in _parse_list(raw):
        epochs, _, lr = chunk.partition(":")
        phases.append((int(epochs), float(lr)))
    if not phases:
        raise ValueError("empty schedule")
    return tuple(phases)


# section -> key -> (parser, default). `...` marks a required key.
_SCHEMA = {
    "backend": {
        "name": (str, "toy"),
        "input_h": (int, 32),
        "input_w": (int, 32),
        "textual_prompt": (str, DEFAULT_TEXTUAL_PROMPT),
        "norm_mean": (lambda s: tuple(float(v) for v in _parse_list(s)), (0.0, 0.0, 0.0)),
        "norm_std": (lambda s: tuple(float(v) for v in _parse_list(s)), (1.0, 1.0, 1.0)),
        "positive_tokens": (_parse_list, list(DEFAULT_POSITIVE_LABELS)),
        "negative_tokens": (_parse_list, list(DEFAULT_NEGATIVE_LABELS)),
        "resolved_positive_ids": (lambda s: [int(v) for v in _parse_list(s)], None),
        "resolved_negative_ids": (lambda s: [int(v) for v in _parse_list(s)], None),
    },
    "data": {
        "manifest": (str, ...),
        "mos_lo": (float, ...),
        "mos_hi": (float, ...),
        "split_policy": (str, "ratio_80_10_10"),
        "split_seed": (int, 0),
        "official_split": (str, None),
        "dataset_id": (str, None),
    },
    "prompt": {
        "kind": (str, ...),
        "size": (int, None),
        "init": (str, "zeros"),
        "init_eps": (float, 1e-3),
    },
    "train": {
        "preset": (str, None),
        "batch_size": (int, None),
        "lr": (float, None),
        "epochs": (int, None),
        "lr_schedule": (_parse_schedule, None),
        "shuffle_seed": (int, 0),
        "checkpoint_every": (int, 1),
    },
    "output": {
        "dir": (str, ...),
    },
}


@dataclass(frozen=True)
class DataConfig:
    manifest_path: str
    mos_range: tuple[float, float]
    split: SplitSpec
    dataset_id: str | None


@dataclass(frozen=True)
class RunConfig:
    backend_cfg: BackendConfig
    data: DataConfig
    prompt_shape: PromptShape
    prompt_init: str
    prompt_init_eps: float
    train_cfg: TrainConfig
    out_dir: str

    def make_backend(self) -> FrozenScorer:
        return make_backend(self.backend_cfg)

    def snapshot(self) -> str:
        """Complete resolved config as INI text; re-running from it reproduces the run."""
        cp = configparser.ConfigParser()
        ts = self.backend_cfg.token_sets
        npos = len(ts.positive)
        cp["backend"] = {
            "name": self.backend_cfg.name,
            "input_h": str(self.backend_cfg.input_h),
            "input_w": str(self.backend_cfg.input_w),
            "textual_prompt": self.backend_cfg.textual_prompt,
            "norm_mean": ", ".join(repr(v) for v in self.backend_cfg.norm_mean),
            "norm_std": ", ".join(repr(v) for v in self.backend_cfg.norm_std),
            "positive_tokens": ", ".join(ts.labels[:npos]),
            "negative_tokens": ", ".join(ts.labels[npos:]),
            "resolved_positive_ids": ", ".join(str(i) for i in ts.positive),
            "resolved_negative_ids": ", ".join(str(i) for i in ts.negative),
        }
        cp["data"] = {
            "manifest": self.data.manifest_path,
            "mos_lo": repr(self.data.mos_range[0]),
            "mos_hi": repr(self.data.mos_range[1]),
            "split_policy": self.data.split.policy,
            "split_seed": str(self.data.split.seed),
        }
        if self.data.split.official_path:
            cp["data"]["official_split"] = self.data.split.official_path
        if self.data.dataset_id:
            cp["data"]["dataset_id"] = self.data.dataset_id
        cp["prompt"] = {
            "kind": self.prompt_shape.kind.value,
            "init": self.prompt_init,
            "init_eps": repr(self.prompt_init_eps),
        }
        if self.prompt_shape.size is not None:
            cp["prompt"]["size"] = str(self.prompt_shape.size)
        cp["train"] = {
            "batch_size": str(self.train_cfg.batch_size),
            "lr_schedule": ", ".join(f"{e}:{lr!r}" for e, lr in self.train_cfg.lr_schedule),
            "shuffle_seed": str(self.train_cfg.shuffle_seed),
            "checkpoint_every": str(self.train_cfg.checkpoint_every),
        }
        cp["output"] = {"dir": self.out_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_overrides(tokens: list[str]) -> dict[tuple[str, str], str]:
    """Turn `--section.key value` / `--section.key=value` tokens into overrides."""
    overrides: dict[tuple[str, str], str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError([f"unrecognized argument {token!r} (expected --section.key value)"])
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(tokens):
                raise ConfigError([f"override {token!r} is missing a value"])
            value = tokens[i + 1]
            i += 2
        section, _, name = key.partition(".")
        overrides[(section, name)] = value
    return overrides


def _raw_mapping(path: str, overrides: dict[tuple[str, str], str]) -> dict:
    if not os.path.exists(path):
        raise ConfigError([f"config file not found: {path}"])
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
    raw = {section: dict(cp[section]) for section in cp.sections()}
    for (section, key), value in overrides.items():
        raw.setdefault(section, {})[key] = value
    return raw


def resolve(config_path: str, overrides: dict[tuple[str, str], str] | None = None) -> RunConfig:
    """Parse, apply overrides, validate everything, and build the typed config."""
    raw = _raw_mapping(config_path, overrides or {})
    problems: list[str] = []
    values: dict[str, dict] = {}

    for section, keys in _SCHEMA.items():
        given = raw.pop(section, {})
        parsed: dict = {}
        for key, (parser, default) in keys.items():
            if key in given:
                text = given.pop(key)
                try:
                    parsed[key] = parser(text)
                except (ValueError, TypeError) as exc:
                    problems.append(f"{section}.{key}: cannot parse {text!r} ({exc})")
                    parsed[key] = None
            elif default is ...:
                problems.append(f"{section}.{key}: required key missing")
                parsed[key] = None
            else:
                parsed[key] = default
        for key in given:
            problems.append(f"{section}.{key}: unknown key")
        values[section] = parsed
    for section in raw:
        problems.append(f"[{section}]: unknown section")

    if problems:
        raise ConfigError(problems)

    base_dir = os.path.dirname(os.path.abspath(config_path))

    def _resolve_path(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    backend_cfg = None
    b = values["backend"]
    try:
        tokenize = tokenizer_for(b["name"])
        positive = resolve_token_ids(b["positive_tokens"], tokenize)
        negative = resolve_token_ids(b["negative_tokens"], tokenize)
        for key, got, want in (
            ("resolved_positive_ids", b["resolved_positive_ids"], positive),
            ("resolved_negative_ids", b["resolved_negative_ids"], negative),
        ):
            if got is not None and tuple(got) != want:
                problems.append(
                    f"backend.{key}: snapshot says {tuple(got)} but labels resolve to {want}"
                )
        token_sets = TokenSets(
            positive=positive,
            negative=negative,
            labels=tuple(b["positive_tokens"]) + tuple(b["negative_tokens"]),
        )
        backend_cfg = BackendConfig(
            name=b["name"],
            input_h=b["input_h"],
            input_w=b["input_w"],
            vocab_size=max(token_sets.positive + token_sets.negative) + 1
            if b["name"] != "toy"
            else 4,
            token_sets=token_sets,
            textual_prompt=b["textual_prompt"],
            norm_mean=b["norm_mean"],
            norm_std=b["norm_std"],
        )
    except VpqaError as exc:
        problems.append(f"backend: {exc}")

    d = values["data"]
    data_cfg = None
    manifest_path = _resolve_path(d["manifest"]) if d["manifest"] else None
    if manifest_path and not os.path.exists(manifest_path):
        problems.append(f"data.manifest: file not found: {manifest_path}")
    official = _resolve_path(d["official_split"]) if d["official_split"] else None
    if d["split_policy"] == "official" and official is None:
        problems.append("data.official_split: required when split_policy = official")
    if official and not os.path.exists(official):
        problems.append(f"data.official_split: file not found: {official}")
    if d["mos_lo"] is not None and d["mos_hi"] is not None and d["mos_hi"] <= d["mos_lo"]:
        problems.append(f"data.mos_hi: must exceed mos_lo, got ({d['mos_lo']}, {d['mos_hi']})")
    try:
        split = SplitSpec(policy=d["split_policy"], seed=d["split_seed"], official_path=official)
        if manifest_path:
            data_cfg = DataConfig(
                manifest_path=manifest_path,
                mos_range=(d["mos_lo"], d["mos_hi"]),
                split=split,
                dataset_id=d["dataset_id"],
            )
    except VpqaError as exc:
        problems.append(f"data: {exc}")

    p = values["prompt"]
    prompt_shape = None
    if backend_cfg is not None and p["kind"] is not None:
        try:
            prompt_shape = PromptShape(
                kind=PromptKind(p["kind"]),
                height=backend_cfg.input_h,
                width=backend_cfg.input_w,
                size=p["size"],
            )
        except (VpqaError, ValueError) as exc:
            problems.append(f"prompt: {exc}")
    if p["init"] not in ("zeros", "uniform_small"):
        problems.append(f"prompt.init: expected zeros or uniform_small, got {p['init']!r}")

    t = values["train"]
    train_cfg = None
    try:
        if t["preset"]:
            train_cfg = preset_config(
                t["preset"],
                prompt_kind=p["kind"],
                prompt_size=p["size"],
                shuffle_seed=t["shuffle_seed"],
                checkpoint_every=t["checkpoint_every"],
            )
            schedule = t["lr_schedule"]
            if t["lr"] is not None or t["epochs"] is not None:
                lr = t["lr"] if t["lr"] is not None else train_cfg.lr_schedule[0][1]
                epochs = t["epochs"] if t["epochs"] is not None else train_cfg.total_epochs
                schedule = ((epochs, lr),)
            train_cfg = TrainConfig(
                batch_size=t["batch_size"] or train_cfg.batch_size,
                lr_schedule=schedule or train_cfg.lr_schedule,
                shuffle_seed=t["shuffle_seed"],
                checkpoint_every=t["checkpoint_every"],
            )
        else:
            schedule = t["lr_schedule"]
            if schedule is None:
                if t["lr"] is None or t["epochs"] is None:
                    problems.append(
                        "train: need a preset, an lr_schedule, or both lr and epochs"
                    )
                else:
                    schedule = ((t["epochs"], t["lr"]),)
            if schedule is not None:
                if t["batch_size"] is None:
                    problems.append("train.batch_size: required without a preset")
                else:
                    train_cfg = TrainConfig(
                        batch_size=t["batch_size"],
                        lr_schedule=schedule,
                        shuffle_seed=t["shuffle_seed"],
                        checkpoint_every=t["checkpoint_every"],
                    )
    except VpqaError as exc:
        problems.append(f"train: {exc}")

    out_dir = values["output"]["dir"]
    if out_dir is not None and not os.path.isabs(out_dir):
        root = os.environ.get(RUN_ROOT_ENV, os.getcwd())
        out_dir = os.path.join(root, out_dir)

    if problems:
        raise ConfigError(problems)

    return RunConfig(
        backend_cfg=backend_cfg,
        data=data_cfg,
        prompt_shape=prompt_shape,
        prompt_init=p["init"],
        prompt_init_eps=p["init_eps"],
        train_cfg=train_cfg,
        out_dir=out_dir,
    )
