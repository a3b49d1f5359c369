"""Step relevance scoring.

A scorer maps an (anchor, candidate) text pair to a probability that the
candidate step still matters for the next decision. The anchor is the
current observation; the candidate is the step's canonical atom rendered
as ``action; observation``. Both sides keep only their first 1500
characters before scoring.

Two scorers ship here: a dependency-free lexical-overlap scorer, and a
portable learned scorer evaluated with plain numpy from an exported
artifact directory.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.special import erf

from .errors import ArtifactError, ScoringError
from .parser import ParsedContext
from .trajectory import Step

PAIR_CHAR_LIMIT = 1500

ARTIFACT_FORMAT = "npz-seqpair-v1"
MANIFEST_FILE = "manifest.json"
WEIGHTS_FILE = "weights.npz"
TOKENIZER_FILE = "tokenizer.json"

_LN_EPS = 1e-5
_MASK_ADD = -1e9


def truncate_side(text: str, limit: int = PAIR_CHAR_LIMIT) -> str:
    """Keep the first ``limit`` characters of one side of a scoring pair."""
    return text[:limit]


@dataclass(frozen=True)
class ScoreRequest:
    """One (anchor, candidate) pair ready for a scorer."""

    anchor: str
    candidate: str


@dataclass(frozen=True)
class StepScore:
    index: int
    p: float


class Scorer(Protocol):
    def score(self, request: ScoreRequest) -> float: ...


def candidate_text(step: Step) -> str:
    return f"{step.atom.action_norm}; {step.atom.obs_norm}"


def build_request(step: Step, anchor_text: str, limit: int = PAIR_CHAR_LIMIT) -> ScoreRequest:
    return ScoreRequest(
        anchor=truncate_side(anchor_text, limit),
        candidate=truncate_side(candidate_text(step), limit),
    )


def score_steps(
    ctx: ParsedContext, scorer: Scorer, limit: int = PAIR_CHAR_LIMIT
) -> tuple[StepScore, ...]:
    """Score every past step of a context against its current observation.

    Scorer failures and out-of-range outputs surface as ``ScoringError``
    naming the offending step.
    """
    anchor = ctx.c_now.text
    scores = []
    for step in ctx.past_steps:
        request = build_request(step, anchor, limit)
        try:
            p = float(scorer.score(request))
        except Exception as exc:
            raise ScoringError(f"scorer failed on step {step.index}: {exc}") from exc
        if not math.isfinite(p) or not 0.0 <= p <= 1.0:
            raise ScoringError(
                f"scorer returned {p!r} for step {step.index}; expected a probability in [0, 1]"
            )
        scores.append(StepScore(index=step.index, p=p))
    return tuple(scores)


class LexicalScorer:
    """Token-set overlap scorer: Jaccard similarity of lowercased tokens.

    Needs no model artifact, so it serves as the default and as the
    fallback when no learned scorer is available. Two empty token sets
    count as identical (score 1.0).
    """

    name = "lexical"

    def score(self, request: ScoreRequest) -> float:
        a = set(request.anchor.lower().split())
        b = set(request.candidate.lower().split())
        if not a and not b:
            return 1.0
        return len(a & b) / len(a | b)


class PortableScorer:
    """Learned pair scorer evaluated from an exported artifact directory.

    The artifact holds a manifest, flat npz weights, and a word-level
    tokenizer for a small transformer encoder: embeddings (token,
    position, segment) with layer norm, post-norm self-attention blocks,
    masked mean pooling, and a two-class head whose softmax index 1 is
    the keep probability.
    """

    def __init__(
        self,
        manifest: dict,
        weights: dict[str, np.ndarray],
        tokenizer: dict,
        name: str = "portable",
    ):
        self.manifest = manifest
        self.weights = weights
        self.name = name
        self.max_tokens = int(manifest["max_tokens"])
        self.d_model = int(manifest["d_model"])
        self.n_heads = int(manifest["n_heads"])
        self.n_layers = int(manifest["n_layers"])
        self._pattern = re.compile(tokenizer["pattern"])
        self._lowercase = bool(tokenizer.get("lowercase", True))
        self._vocab: dict[str, int] = tokenizer["vocab"]
        specials = tokenizer["specials"]
        self._pad = int(specials["pad"])
        self._unk = int(specials["unk"])
        self._cls = int(specials["cls"])
        self._sep = int(specials["sep"])

    # -- tokenization ---------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        if self._lowercase:
            text = text.lower()
        return [self._vocab.get(tok, self._unk) for tok in self._pattern.findall(text)]

    def encode_pair(self, anchor: str, candidate: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Build id, segment-id, and attention-mask arrays for one pair.

        Layout is ``[CLS] anchor [SEP] candidate [SEP]`` padded to
        ``max_tokens``. The anchor gets at most half the token budget,
        the candidate fills the remainder, and the anchor may then take
        back any unused slack.
        """
        a = self.tokenize(anchor)
        c = self.tokenize(candidate)
        budget = self.max_tokens - 3
        a_keep = min(len(a), budget // 2)
        c_keep = min(len(c), budget - a_keep)
        a_keep = min(len(a), budget - c_keep)
        ids = [self._cls] + a[:a_keep] + [self._sep] + c[:c_keep] + [self._sep]
        segs = [0] * (a_keep + 2) + [1] * (c_keep + 1)
        mask = [1] * len(ids)
        pad = self.max_tokens - len(ids)
        ids += [self._pad] * pad
        segs += [0] * pad
        mask += [0] * pad
        return (
            np.asarray(ids, dtype=np.int64),
            np.asarray(segs, dtype=np.int64),
            np.asarray(mask, dtype=np.float32),
        )

    # -- forward pass ---------------------------------------------------

    def score(self, request: ScoreRequest) -> float:
        ids, segs, mask = self.encode_pair(request.anchor, request.candidate)
        logits = self._forward(ids, segs, mask)
        return float(_softmax(logits)[1])

    def _forward(self, ids: np.ndarray, segs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        w = self.weights
        x = w["tok_emb"][ids] + w["pos_emb"][: len(ids)] + w["type_emb"][segs]
        x = _layer_norm(x, w["emb_ln_g"], w["emb_ln_b"])
        key_add = (1.0 - mask) * _MASK_ADD
        for i in range(self.n_layers):
            p = f"layers.{i}."
            attn = self._attention(x, key_add, p)
            x = _layer_norm(x + attn, w[p + "ln1.g"], w[p + "ln1.b"])
            ff = _gelu(x @ w[p + "ff.w1"].T + w[p + "ff.b1"]) @ w[p + "ff.w2"].T + w[p + "ff.b2"]
            x = _layer_norm(x + ff, w[p + "ln2.g"], w[p + "ln2.b"])
        pooled = (x * mask[:, None]).sum(axis=0) / mask.sum()
        return pooled @ w["head.w"].T + w["head.b"]

    def _attention(self, x: np.ndarray, key_add: np.ndarray, prefix: str) -> np.ndarray:
        w = self.weights
        length = x.shape[0]
        d_head = self.d_model // self.n_heads
        q = x @ w[prefix + "attn.wq"].T + w[prefix + "attn.bq"]
        k = x @ w[prefix + "attn.wk"].T + w[prefix + "attn.bk"]
        v = x @ w[prefix + "attn.wv"].T + w[prefix + "attn.bv"]
        q = q.reshape(length, self.n_heads, d_head).transpose(1, 0, 2)
        k = k.reshape(length, self.n_heads, d_head).transpose(1, 0, 2)
        v = v.reshape(length, self.n_heads, d_head).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(d_head)
        scores = scores + key_add[None, None, :]
        probs = _softmax(scores, axis=-1)
        out = (probs @ v).transpose(1, 0, 2).reshape(length, self.d_model)
        return out @ w[prefix + "attn.wo"].T + w[prefix + "attn.bo"]


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


_LAYER_KEYS = (
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln1.g", "ln1.b",
    "ff.w1", "ff.b1", "ff.w2", "ff.b2", "ln2.g", "ln2.b",
)


def load_portable_scorer(path: str | Path) -> PortableScorer:
    """Load and validate a portable scorer artifact directory.

    Raises ``ArtifactError`` on missing files, a wrong format tag, shape
    mismatches, or a head that is not two-class.
    """
    root = Path(path)
    if not root.is_dir():
        raise ArtifactError(f"{root}: not an artifact directory")
    manifest_path = root / MANIFEST_FILE
    weights_path = root / WEIGHTS_FILE
    tokenizer_path = root / TOKENIZER_FILE
    for p in (manifest_path, weights_path, tokenizer_path):
        if not p.is_file():
            raise ArtifactError(f"{root}: missing {p.name}")

    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{manifest_path}: invalid JSON: {exc.msg}") from exc
    fmt = manifest.get("format")
    if fmt != ARTIFACT_FORMAT:
        raise ArtifactError(f"{root}: unsupported format {fmt!r}; expected {ARTIFACT_FORMAT!r}")
    if manifest.get("output") != "softmax2":
        raise ArtifactError(f"{root}: expected 2 output classes (output 'softmax2')")
    for key in ("max_tokens", "d_model", "n_heads", "n_layers", "d_ff", "vocab_size"):
        if not isinstance(manifest.get(key), int) or manifest[key] <= 0:
            raise ArtifactError(f"{root}: manifest field {key!r} must be a positive integer")
    if manifest["max_tokens"] < 8:
        raise ArtifactError(f"{root}: max_tokens is too small to hold a pair")
    if manifest["d_model"] % manifest["n_heads"] != 0:
        raise ArtifactError(f"{root}: d_model must be divisible by n_heads")

    try:
        tokenizer = json.loads(tokenizer_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{tokenizer_path}: invalid JSON: {exc.msg}") from exc
    for key in ("pattern", "vocab", "specials"):
        if key not in tokenizer:
            raise ArtifactError(f"{root}: tokenizer missing {key!r}")
    try:
        re.compile(tokenizer["pattern"])
    except re.error as exc:
        raise ArtifactError(f"{root}: bad tokenizer pattern: {exc}") from exc
    specials = tokenizer["specials"]
    for key in ("pad", "unk", "cls", "sep"):
        if not isinstance(specials.get(key), int):
            raise ArtifactError(f"{root}: tokenizer specials missing {key!r}")
    vocab_size = manifest["vocab_size"]
    reserved = {specials[k] for k in ("pad", "unk", "cls", "sep")}
    for token, idx in tokenizer["vocab"].items():
        if not isinstance(idx, int) or not 0 <= idx < vocab_size:
            raise ArtifactError(f"{root}: vocab id for {token!r} is out of range")
        if idx in reserved:
            raise ArtifactError(f"{root}: vocab id for {token!r} collides with a special token")

    with np.load(weights_path) as npz:
        weights = {key: np.asarray(npz[key], dtype=np.float32) for key in npz.files}

    d = manifest["d_model"]
    expected: dict[str, tuple[int, ...]] = {
        "tok_emb": (vocab_size, d),
        "pos_emb": (manifest["max_tokens"], d),
        "type_emb": (2, d),
        "emb_ln_g": (d,),
        "emb_ln_b": (d,),
        "head.w": (2, d),
        "head.b": (2,),
    }
    d_ff = manifest["d_ff"]
    for i in range(manifest["n_layers"]):
        p = f"layers.{i}."
        expected.update(
            {
                p + "attn.wq": (d, d), p + "attn.bq": (d,),
                p + "attn.wk": (d, d), p + "attn.bk": (d,),
                p + "attn.wv": (d, d), p + "attn.bv": (d,),
                p + "attn.wo": (d, d), p + "attn.bo": (d,),
                p + "ln1.g": (d,), p + "ln1.b": (d,),
                p + "ff.w1": (d_ff, d), p + "ff.b1": (d_ff,),
                p + "ff.w2": (d, d_ff), p + "ff.b2": (d,),
                p + "ln2.g": (d,), p + "ln2.b": (d,),
            }
        )
    for key, shape in expected.items():
        if key not in weights:
            raise ArtifactError(f"{root}: weights missing {key!r}")
        if weights[key].shape != shape:
            if key == "head.w" and weights[key].shape[0] != 2:
                raise ArtifactError(
                    f"{root}: expected 2 output classes, head has {weights[key].shape[0]}"
                )
            raise ArtifactError(
                f"{root}: weight {key!r} has shape {weights[key].shape}, expected {shape}"
            )

    return PortableScorer(manifest, weights, tokenizer, name=root.name)


def resolve_scorer(spec: str) -> Scorer:
    """Map a CLI scorer argument to a scorer instance.

    ``lexical`` names the built-in overlap scorer; ``portable:<dir>`` (or
    a bare path) loads a portable artifact directory.
    """
    if spec == "lexical":
        return LexicalScorer()
    if spec.startswith("portable:"):
        spec = spec[len("portable:") :]
    return load_portable_scorer(spec)
