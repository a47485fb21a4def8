"""Toy attention denoiser plus prompt-to-prompt style attention control.

The toy model is a small DiT-like stack with fixed seeded weights: patchify,
then per layer self-attention, cross-attention onto prompt embeddings and an
MLP, then unpatchify. Nothing is trained; it exists so that attention
recording, injection and scheduling can be exercised on real attention maps.

Attention maps have shape (heads, queries, keys). Self maps are
(heads, P, P) over latent patches, cross maps (heads, P, T) over prompt
tokens.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .errors import (
    AlignmentOutOfRange,
    EmptyPrompt,
    HookShapeViolation,
    ShapeMismatch,
)

# size of the full-scale audio DiT this model stands in for
FULL_SCALE_DIT_DEPTH = 96
FULL_SCALE_DIT_HIDDEN = 1024
FULL_SCALE_DIT_PARAMS = 1.62e9

DEFAULT_TEXT_WIDTH = 32
_WORD = re.compile(r"[\w']+")


# ---------------------------------------------------------------- prompts

@dataclass(frozen=True, eq=False)
class Prompt:
    text: str
    words: tuple[str, ...]
    ids: tuple[int, ...]
    embeddings: np.ndarray  # (tokens, text_width), read-only

    def __len__(self):
        return len(self.words)


def word_id(word: str) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")


def word_embedding(token_id: int, width: int = DEFAULT_TEXT_WIDTH, vocab_seed: int = 0) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64([vocab_seed, token_id]))
    return rng.standard_normal(width) / np.sqrt(width)


def tokenize(text: str, width: int = DEFAULT_TEXT_WIDTH, vocab_seed: int = 0) -> Prompt:
    words = tuple(_WORD.findall(text.strip().lower()))
    if not words:
        raise EmptyPrompt(f"prompt {text!r} has no words")
    ids = tuple(word_id(w) for w in words)
    emb = np.stack([word_embedding(i, width, vocab_seed) for i in ids])
    emb.setflags(write=False)
    return Prompt(text, words, ids, emb)


AlignmentMap = tuple  # tuple[Optional[int], ...], one entry per target token


def compute_alignment(source: Prompt, target: Prompt) -> AlignmentMap:
    """Map each target token to a source position, or None.

    Shared words take the earliest unused source position. If the prompts
    have equal length, leftover target positions map to the same position in
    the source (word replacement). Otherwise leftovers stay unmapped.
    """
    used = set()
    out: list[Optional[int]] = []
    for w in target.words:
        hit = next((i for i, s in enumerate(source.words) if s == w and i not in used), None)
        if hit is not None:
            used.add(hit)
        out.append(hit)
    if len(source) == len(target):
        out = [j if a is None else a for j, a in enumerate(out)]
    return tuple(out)


def is_permutation(alignment: AlignmentMap, n_source: int) -> bool:
    return len(alignment) == n_source and sorted(a for a in alignment if a is not None) == list(range(n_source))


# ---------------------------------------------------------------- control

@dataclass(frozen=True)
class ControlSchedule:
    """When to inject the reconstruction branch's maps into the edited branch.

    ``literal-eq13`` injects when t >= tau (the boundary belongs to the
    injection branch). ``strength`` injects when t >= 1 - tau, reading tau as
    the fraction of the trajectory that is preserved.
    """

    tau_s: float
    tau_c: float
    direction: Literal["literal-eq13", "strength"] = "literal-eq13"
    renormalize: bool = True

    def __post_init__(self):
        for name in ("tau_s", "tau_c"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.direction not in ("literal-eq13", "strength"):
            raise ValueError(f"unknown tau direction {self.direction!r}")

    def _active(self, t: float, tau: float) -> bool:
        if self.direction == "literal-eq13":
            return t >= tau
        return t >= 1.0 - tau

    def self_active(self, t: float) -> bool:
        return self._active(t, self.tau_s)

    def cross_active(self, t: float) -> bool:
        return self._active(t, self.tau_c)


def inject_cross_columns(target_maps: np.ndarray, source_maps: np.ndarray, alignment: AlignmentMap) -> np.ndarray:
    """Column surgery only: mapped target columns become source columns A(j)."""
    if target_maps.shape[-1] != len(alignment):
        raise ShapeMismatch(f"target map has {target_maps.shape[-1]} token columns, alignment {len(alignment)}")
    if target_maps.shape[:-1] != source_maps.shape[:-1]:
        raise ShapeMismatch(f"map shapes {target_maps.shape} and {source_maps.shape} disagree")
    n_src = source_maps.shape[-1]
    out = np.array(target_maps, copy=True)
    for j, a in enumerate(alignment):
        if a is None:
            continue
        if not 0 <= a < n_src:
            raise AlignmentOutOfRange(f"A({j}) = {a} outside source tokens 0..{n_src - 1}")
        out[..., j] = source_maps[..., a]
    return out


def edit_cross_attention(
    target_maps: np.ndarray,
    source_maps: np.ndarray,
    alignment: AlignmentMap,
    t: float,
    sched: ControlSchedule,
) -> np.ndarray:
    if not sched.cross_active(t):
        return target_maps
    out = inject_cross_columns(target_maps, source_maps, alignment)
    # a column permutation of a row-stochastic map is still row-stochastic
    if sched.renormalize and not is_permutation(alignment, source_maps.shape[-1]):
        out /= out.sum(axis=-1, keepdims=True)
    return out


def edit_self_attention(target_maps: np.ndarray, source_maps: np.ndarray, t: float, sched: ControlSchedule) -> np.ndarray:
    if target_maps.shape != source_maps.shape:
        raise ShapeMismatch(f"self maps {target_maps.shape} vs {source_maps.shape}")
    return source_maps if sched.self_active(t) else target_maps


# ---------------------------------------------------------------- toy model

@dataclass(frozen=True)
class ToyDenoiserConfig:
    layers: int = 2
    heads: int = 4
    width: int = 64
    patch: int = 2
    text_width: int = DEFAULT_TEXT_WIDTH
    weight_seed: int = 0

    def __post_init__(self):
        for name in ("layers", "heads", "width", "patch", "text_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")


@dataclass(frozen=True)
class LayerMaps:
    self_maps: np.ndarray
    cross_maps: np.ndarray


# hook(kind, layer, maps) -> maps actually consumed; kind is "self" or "cross"
AttentionHook = Callable[[str, int, np.ndarray], np.ndarray]


def _softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))


class ToyDenoiser:
    """Seeded, untrained attention denoiser. Weights are read-only after build."""

    def __init__(self, cfg: ToyDenoiserConfig = ToyDenoiserConfig()):
        self.cfg = cfg
        d, dt = cfg.width, cfg.text_width
        rng = np.random.Generator(np.random.PCG64([cfg.weight_seed, 0]))

        def mat(n_in, n_out, gain=1.0):
            w = rng.standard_normal((n_in, n_out)) * (gain / np.sqrt(n_in))
            w.setflags(write=False)
            return w

        self.time_proj = mat(32, d)
        self.blocks = []
        for _ in range(cfg.layers):
            self.blocks.append({
                "q": mat(d, d), "k": mat(d, d), "v": mat(d, d), "o": mat(d, d, 0.5),
                "cq": mat(d, d), "ck": mat(dt, d), "cv": mat(dt, d), "co": mat(d, d, 0.5),
                "f1": mat(d, 2 * d), "f2": mat(2 * d, d, 0.5),
            })
        self._io: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _io_weights(self, token_dim: int):
        # projections depend on channels * patch^2, built deterministically on first use
        if token_dim not in self._io:
            rng = np.random.Generator(np.random.PCG64([self.cfg.weight_seed, 1, token_dim]))
            w_in = rng.standard_normal((token_dim, self.cfg.width)) / np.sqrt(token_dim)
            w_out = rng.standard_normal((self.cfg.width, token_dim)) / np.sqrt(self.cfg.width)
            w_in.setflags(write=False)
            w_out.setflags(write=False)
            self._io[token_dim] = (w_in, w_out)
        return self._io[token_dim]

    # patches are taken over the last two axes; rank-4 input treats frames as extra tokens
    def _patchify(self, z: np.ndarray) -> np.ndarray:
        p = self.cfg.patch
        if z.ndim not in (3, 4):
            raise ShapeMismatch(f"expected rank 3 or 4 latent, got {z.shape}")
        if z.shape[-1] % p or z.shape[-2] % p:
            raise ShapeMismatch(f"spatial dims {z.shape[-2:]} not divisible by patch {p}")
        x = z if z.ndim == 4 else z[:, None]
        C, F, W, H = x.shape
        x = x.reshape(C, F, W // p, p, H // p, p).transpose(1, 2, 4, 0, 3, 5)
        return x.reshape(F * (W // p) * (H // p), C * p * p)

    def _unpatchify(self, tokens: np.ndarray, shape) -> np.ndarray:
        p = self.cfg.patch
        full = shape if len(shape) == 4 else (shape[0], 1) + tuple(shape[1:])
        C, F, W, H = full
        x = tokens.reshape(F, W // p, H // p, C, p, p).transpose(3, 0, 1, 4, 2, 5)
        return x.reshape(shape)

    def _time_embedding(self, t: float) -> np.ndarray:
        freqs = np.exp(-np.log(1000.0) * np.arange(16) / 16)
        ang = 1000.0 * t * freqs
        return np.concatenate([np.sin(ang), np.cos(ang)]) @ self.time_proj

    def _heads(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return x.reshape(n, self.cfg.heads, -1).transpose(1, 0, 2)

    def _attend(self, kind, layer, q, k, v, hook):
        scale = 1.0 / np.sqrt(q.shape[-1])
        maps = _softmax(np.matmul(q, k.transpose(0, 2, 1)) * scale)
        if hook is not None:
            edited = np.asarray(hook(kind, layer, maps))
            if edited.shape != maps.shape:
                raise HookShapeViolation(f"{kind} hook at layer {layer} returned {edited.shape}, expected {maps.shape}")
            maps = edited
        out = np.matmul(maps, v).transpose(1, 0, 2).reshape(q.shape[1], -1)
        return out, maps

    def forward(self, z: np.ndarray, t: float, prompt: Prompt, hook: Optional[AttentionHook] = None):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        if prompt.embeddings.shape[1] != self.cfg.text_width:
            raise ShapeMismatch(f"prompt width {prompt.embeddings.shape[1]} != {self.cfg.text_width}")
        z = np.asarray(z, dtype=np.float64)
        tokens = self._patchify(z)
        w_in, w_out = self._io_weights(tokens.shape[1])
        x = tokens @ w_in + self._time_embedding(t)
        record = []
        for layer, b in enumerate(self.blocks):
            h = _layer_norm(x)
            out, s_maps = self._attend("self", layer, self._heads(h @ b["q"]), self._heads(h @ b["k"]),
                                       self._heads(h @ b["v"]), hook)
            x = x + out @ b["o"]
            h = _layer_norm(x)
            out, c_maps = self._attend("cross", layer, self._heads(h @ b["cq"]),
                                       self._heads(prompt.embeddings @ b["ck"]),
                                       self._heads(prompt.embeddings @ b["cv"]), hook)
            x = x + out @ b["co"]
            x = x + _gelu(_layer_norm(x) @ b["f1"]) @ b["f2"]
            record.append(LayerMaps(s_maps, c_maps))
        v = _layer_norm(x) @ w_out
        return self._unpatchify(v, z.shape), record

    def __call__(self, z, t, prompt):
        return self.forward(z, t, prompt)[0]


def toy_denoiser_forward(z, t, prompt, cfg: ToyDenoiserConfig = ToyDenoiserConfig(), hook=None):
    return ToyDenoiser(cfg).forward(z, t, prompt, hook)


def control_hook(
    source_record: Sequence[LayerMaps],
    alignment: AlignmentMap,
    t: float,
    sched: ControlSchedule,
    trace: Optional[dict] = None,
) -> AttentionHook:
    """Hook for the edited branch that edits its maps using the reconstruction
    branch's record from the same evaluation point.

    If ``trace`` is given it receives, per (kind, layer), the branch's own
    maps, the maps after column injection but before renormalization, and the
    maps actually consumed.
    """

    def hook(kind, layer, own):
        src = source_record[layer]
        if kind == "self":
            out = edit_self_attention(own, src.self_maps, t, sched)
            injected = out
        else:
            injected = inject_cross_columns(own, src.cross_maps, alignment) if sched.cross_active(t) else own
            out = edit_cross_attention(own, src.cross_maps, alignment, t, sched)
        if trace is not None:
            trace[(kind, layer)] = {"own": own, "injected": injected, "consumed": out}
        return out

    return hook
