"""Two-phase LP-FT training and artifact export.

Phase one trains only the classification head on top of a frozen
encoder (linear probing); phase two unfreezes everything at a much
smaller learning rate. Targets are soft labels in [0, 1] under binary
cross-entropy on the two-class logit margin. The trained model is
exported to the portable artifact directory the compression engine
loads, together with a probe file recording training-side probabilities
for round-trip verification.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import torch
from torch.nn import functional as F

from stepprune.scoring import (
    ARTIFACT_FORMAT,
    MANIFEST_FILE,
    PAIR_CHAR_LIMIT,
    PortableScorer,
    TOKENIZER_FILE,
    WEIGHTS_FILE,
    truncate_side,
)

from .canon import CANON_VERSION
from .labeling import LabelRecord, LabeledDataset, split_trajectory_ids
from .model import ModelConfig, PairEncoder, export_weights

log = logging.getLogger(__name__)

TOKEN_PATTERN = r"[a-z0-9]+"
PROBES_FILE = "probes.jsonl"

_SPECIALS = {"pad": 0, "unk": 1, "cls": 2, "sep": 3}
_EVAL_BATCH = 256


class TrainingError(Exception):
    """Training diverged or could not start."""


@dataclass(frozen=True)
class TrainConfig:
    lp_epochs: int = 5
    ft_epochs: int = 4
    lp_lr: float = 2e-4
    ft_lr: float = 1e-5
    batch: int = 16
    warmup_frac: float = 0.10
    val_split: float = 0.2
    seed: int = 42

    def __post_init__(self) -> None:
        if self.lp_epochs < 0 or self.ft_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.lp_lr <= 0 or self.ft_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch < 1:
            raise ValueError(f"batch must be at least 1, got {self.batch}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if not 0.0 < self.val_split < 1.0:
            raise ValueError(f"val_split must be in (0, 1), got {self.val_split}")


@dataclass(frozen=True)
class TrainReport:
    initial_loss: float
    final_loss: float
    val_loss: float
    n_train: int
    n_val: int
    lp_steps: int
    ft_steps: int
    artifact_dir: Path
    probe_file: Path


def pair_text(record: LabelRecord) -> tuple[str, str]:
    """The (anchor, candidate) strings exactly as the engine would build them."""
    candidate = f"{record.action}; {record.obs}"
    return truncate_side(record.anchor), truncate_side(candidate)


def build_tokenizer(texts: Iterable[str], vocab_cap: int) -> dict:
    """Word-level tokenizer over the training texts.

    Ids 0-3 are reserved specials; the remaining slots go to the most
    frequent tokens, ties broken alphabetically so the vocabulary is a
    pure function of the corpus.
    """
    pattern = re.compile(TOKEN_PATTERN)
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(pattern.findall(text.lower()))
    budget = max(0, vocab_cap - len(_SPECIALS))
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:budget]
    vocab = {token: len(_SPECIALS) + i for i, (token, _) in enumerate(ranked)}
    return {
        "pattern": TOKEN_PATTERN,
        "lowercase": True,
        "vocab": vocab,
        "specials": dict(_SPECIALS),
    }


def _manifest(model_cfg: ModelConfig, vocab_size: int, cfg: TrainConfig) -> dict:
    return {
        "format": ARTIFACT_FORMAT,
        "version": 1,
        "output": "softmax2",
        "max_tokens": model_cfg.max_tokens,
        "d_model": model_cfg.d_model,
        "n_heads": model_cfg.n_heads,
        "n_layers": model_cfg.n_layers,
        "d_ff": model_cfg.d_ff,
        "vocab_size": vocab_size,
        "canon_rules": CANON_VERSION,
        "pair_char_limit": PAIR_CHAR_LIMIT,
        "training": {
            "schedule": "lp-ft",
            "lp_epochs": cfg.lp_epochs,
            "ft_epochs": cfg.ft_epochs,
            "seed": cfg.seed,
        },
    }


def _encode_records(
    records: Sequence[LabelRecord], encoder: PortableScorer
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    ids, segs, masks, targets = [], [], [], []
    for record in records:
        anchor, candidate = pair_text(record)
        i, s, m = encoder.encode_pair(anchor, candidate)
        ids.append(i)
        segs.append(s)
        masks.append(m)
        targets.append(record.y)
    return (
        torch.from_numpy(np.stack(ids)),
        torch.from_numpy(np.stack(segs)),
        torch.from_numpy(np.stack(masks)),
        torch.tensor(targets, dtype=torch.float32),
    )


def _dataset_loss(model: PairEncoder, data) -> float:
    ids, segs, masks, targets = data
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(targets), _EVAL_BATCH):
            sl = slice(start, start + _EVAL_BATCH)
            logits = model(ids[sl], segs[sl], masks[sl])
            margin = logits[:, 1] - logits[:, 0]
            loss = F.binary_cross_entropy_with_logits(margin, targets[sl], reduction="sum")
            total += float(loss)
    model.train()
    return total / len(targets)


def _lr_factor(step: int, total: int, warmup_frac: float) -> float:
    """Linear warmup then cosine decay to zero over the phase."""
    if total <= 0:
        return 1.0
    warmup = int(round(warmup_frac * total))
    if step < warmup:
        return (step + 1) / warmup
    span = max(1, total - warmup)
    progress = min(1.0, (step - warmup) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def _run_phase(
    model: PairEncoder,
    data,
    params,
    lr: float,
    epochs: int,
    cfg: TrainConfig,
    phase: str,
    generator: torch.Generator,
) -> int:
    ids, segs, masks, targets = data
    n = len(targets)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total = steps_per_epoch * epochs
    if total == 0:
        return 0
    optimizer = torch.optim.AdamW(params, lr=lr)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: _lr_factor(step, total, cfg.warmup_frac)
    )
    step = 0
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, cfg.batch):
            batch = order[start : start + cfg.batch]
            logits = model(ids[batch], segs[batch], masks[batch])
            margin = logits[:, 1] - logits[:, 0]
            loss = F.binary_cross_entropy_with_logits(margin, targets[batch])
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"loss diverged to {loss.item()!r} in {phase} phase, "
                    f"epoch {epoch + 1}, step {step + 1} of {total}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            step += 1
    return step


Dataset = Union[LabeledDataset, Sequence[LabelRecord]]


def _partition(dataset: Dataset, cfg: TrainConfig) -> tuple[
    tuple[LabelRecord, ...], tuple[LabelRecord, ...]
]:
    if isinstance(dataset, LabeledDataset):
        return dataset.train_records, dataset.val_records
    records = tuple(dataset)
    ids = [r.trajectory_id for r in records]
    train_ids, _ = split_trajectory_ids(ids, cfg.val_split, cfg.seed)
    train = tuple(r for r in records if r.trajectory_id in train_ids)
    val = tuple(r for r in records if r.trajectory_id not in train_ids)
    return train, val


def train_and_export(
    dataset: Dataset,
    out_dir: str | Path,
    cfg: TrainConfig = TrainConfig(),
    model_cfg: ModelConfig = ModelConfig(),
    probe_count: int = 100,
) -> TrainReport:
    """Run LP-FT on labeled pairs and export the portable artifact.

    Writes manifest, weights, and tokenizer into ``out_dir`` plus a
    probe file of (anchor, candidate, p) rows computed by the trained
    torch model, which the serving-side loader must reproduce.
    """
    train_records, val_records = _partition(dataset, cfg)
    if not train_records:
        raise ValueError("cannot train: no training records (empty dataset or split)")

    tokenizer = build_tokenizer(
        (text for record in train_records for text in pair_text(record)),
        model_cfg.vocab_cap,
    )
    vocab_size = len(_SPECIALS) + len(tokenizer["vocab"])
    manifest = _manifest(model_cfg, vocab_size, cfg)
    # weights are not needed for encoding, so an empty dict is fine here;
    # reusing the serving-side encoder keeps tokenization identical
    encoder = PortableScorer(manifest, {}, tokenizer)

    train_data = _encode_records(train_records, encoder)
    val_data = _encode_records(val_records, encoder) if val_records else None

    torch.manual_seed(cfg.seed)
    model = PairEncoder(model_cfg, vocab_size)
    generator = torch.Generator().manual_seed(cfg.seed)

    initial_loss = _dataset_loss(model, train_data)
    for p in model.parameters():
        p.requires_grad_(False)
    for p in model.head.parameters():
        p.requires_grad_(True)
    lp_steps = _run_phase(
        model, train_data, model.head.parameters(), cfg.lp_lr, cfg.lp_epochs,
        cfg, "linear-probe", generator,
    )
    for p in model.parameters():
        p.requires_grad_(True)
    ft_steps = _run_phase(
        model, train_data, model.parameters(), cfg.ft_lr, cfg.ft_epochs,
        cfg, "fine-tune", generator,
    )
    final_loss = _dataset_loss(model, train_data)
    val_loss = _dataset_loss(model, val_data) if val_data is not None else math.nan
    log.info(
        "trained %d pairs: loss %.4f -> %.4f (val %.4f)",
        len(train_records), initial_loss, final_loss, val_loss,
    )

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (root / TOKENIZER_FILE).write_text(
        json.dumps(tokenizer, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8"
    )
    np.savez(root / WEIGHTS_FILE, **export_weights(model))

    probe_file = root / PROBES_FILE
    _write_probes(model, encoder, train_records, val_records, probe_count, cfg.seed, probe_file)
    return TrainReport(
        initial_loss=initial_loss,
        final_loss=final_loss,
        val_loss=val_loss,
        n_train=len(train_records),
        n_val=len(val_records),
        lp_steps=lp_steps,
        ft_steps=ft_steps,
        artifact_dir=root,
        probe_file=probe_file,
    )


def _write_probes(
    model: PairEncoder,
    encoder: PortableScorer,
    train_records: Sequence[LabelRecord],
    val_records: Sequence[LabelRecord],
    probe_count: int,
    seed: int,
    path: Path,
) -> None:
    pool = list(val_records) or list(train_records)
    rng = random.Random(seed)
    model.eval()
    with open(path, "w", encoding="utf-8") as handle, torch.no_grad():
        for _ in range(probe_count):
            record = pool[rng.randrange(len(pool))]
            anchor, candidate = pair_text(record)
            ids, segs, mask = encoder.encode_pair(anchor, candidate)
            p = model.keep_probability(
                torch.from_numpy(ids[None, :]),
                torch.from_numpy(segs[None, :]),
                torch.from_numpy(mask[None, :]),
            )
            row = {"anchor": anchor, "candidate": candidate, "p": float(p[0])}
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    model.train()


def read_probes(path: str | Path) -> tuple[dict, ...]:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                rows.append(json.loads(line))
    return tuple(rows)
