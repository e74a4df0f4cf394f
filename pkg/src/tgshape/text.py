"""Tokenization, vocabulary, and the trainable text encoder.

The encoder is a small post-norm transformer. Per caption it returns the final
per-token states (word features, d_B columns whose halves feed the shape and
color attention branches) and a pooled feature: mean over tokens, projected to
2d and split into a shape half and a color half.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import (Tensor, concat_cols, gather_rows, leaky_relu, mean_axis0,
                       slice_cols, softmax_rows)
from .nn import LayerNorm, Linear, merge_params

UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"
UNK, PAD = 0, 1

MAX_LEN = 32

_PUNCT = re.compile(r"[^\w\s]")


def normalize_caption(caption: str) -> list[str]:
    return _PUNCT.sub(" ", caption.lower()).split()


@dataclass
class TokenSequence:
    ids: list[int]
    caption: str

    @property
    def k(self) -> int:
        return len(self.ids)


class Vocab:
    def __init__(self, tokens: list[str]):
        if tokens[:2] != [UNK_TOKEN, PAD_TOKEN]:
            raise ValueError("vocabulary must start with <unk>, <pad>")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicates")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_captions(cls, captions: list[str]) -> "Vocab":
        seen: dict[str, None] = {}
        for cap in captions:
            for tok in normalize_caption(cap):
                seen.setdefault(tok, None)
        return cls([UNK_TOKEN, PAD_TOKEN] + sorted(seen))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(caption: str, vocab: Vocab, max_len: int = MAX_LEN) -> TokenSequence:
    words = normalize_caption(caption)
    if not words:
        raise ValueError("caption is empty after normalization")
    ids = [vocab.index.get(w, UNK) for w in words[:max_len]]
    return TokenSequence(ids, caption)


class TextEncoder:
    """Transformer encoder: embeddings + positions, L post-norm blocks, pooled split head."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, d: int,
                 d_b: int = 128, n_layers: int = 2, n_heads: int = 4,
                 ff_width: int | None = None, max_len: int = MAX_LEN, dtype=np.float64):
        if d_b % n_heads != 0 or d_b % 2 != 0:
            raise ValueError("d_b must be divisible by the head count and even")
        self.d = d
        self.d_b = d_b
        self.n_heads = n_heads
        self.head_dim = d_b // n_heads
        self.max_len = max_len
        ff = ff_width if ff_width is not None else 2 * d_b
        self.embed = Tensor(rng.normal(0.0, 0.02, (vocab_size, d_b)).astype(dtype),
                            requires_grad=True)
        self.pos = Tensor(rng.normal(0.0, 0.02, (max_len, d_b)).astype(dtype),
                          requires_grad=True)
        self.blocks = []
        for _ in range(n_layers):
            self.blocks.append({
                "q": Linear(rng, d_b, d_b, dtype=dtype),
                "k": Linear(rng, d_b, d_b, dtype=dtype),
                "v": Linear(rng, d_b, d_b, dtype=dtype),
                "o": Linear(rng, d_b, d_b, dtype=dtype),
                "ln1": LayerNorm(d_b, dtype=dtype),
                "ff1": Linear(rng, d_b, ff, dtype=dtype),
                "ff2": Linear(rng, ff, d_b, dtype=dtype),
                "ln2": LayerNorm(d_b, dtype=dtype),
            })
        self.pool = Linear(rng, d_b, 2 * d, dtype=dtype)

    def params(self, prefix: str = "B") -> dict[str, Tensor]:
        out = {f"{prefix}.embed": self.embed, f"{prefix}.pos": self.pos}
        for i, blk in enumerate(self.blocks):
            for name in ("q", "k", "v", "o", "ff1", "ff2"):
                out.update(blk[name].params(f"{prefix}.l{i}.{name}"))
            out.update(blk["ln1"].params(f"{prefix}.l{i}.ln1"))
            out.update(blk["ln2"].params(f"{prefix}.l{i}.ln2"))
        out.update(self.pool.params(f"{prefix}.pool"))
        return out

    def _attention(self, x: Tensor, blk) -> Tensor:
        q, k, v = blk["q"](x), blk["k"](x), blk["v"](x)
        heads = []
        scale = 1.0 / np.sqrt(self.head_dim)
        for h in range(self.n_heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh, kh, vh = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
            att = softmax_rows((qh @ kh.T) * scale)
            heads.append(att @ vh)
        return blk["o"](concat_cols(heads))

    def encode(self, seq: TokenSequence) -> tuple[Tensor, Tensor, Tensor]:
        """Return (word_features K x d_b, pooled shape half d, pooled color half d)."""
        if seq.k == 0:
            raise ValueError("cannot encode an empty token sequence")
        ids = seq.ids[:self.max_len]
        x = gather_rows(self.embed, ids) + gather_rows(self.pos, list(range(len(ids))))
        for blk in self.blocks:
            x = blk["ln1"](x + self._attention(x, blk))
            ff = blk["ff2"](leaky_relu(blk["ff1"](x), 0.02))
            x = blk["ln2"](x + ff)
        pooled = self.pool(mean_axis0(x).reshape(1, self.d_b))
        f_s = slice_cols(pooled, 0, self.d)
        f_c = slice_cols(pooled, self.d, 2 * self.d)
        return x, f_s, f_c

    def word_halves(self, words: Tensor) -> tuple[Tensor, Tensor]:
        """Split word features into the shape-branch and color-branch halves."""
        half = self.d_b // 2
        return slice_cols(words, 0, half), slice_cols(words, half, self.d_b)
