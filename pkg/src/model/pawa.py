"""Transformer encoder with a prefix-aware weight-adaptor (PAWA) decoder.

Decoding position i has its own decoder block (theta_i) producing E_i, and
its own adaptor block (theta'_i) that reads only the SemId prefix and
generates the classification matrix W_i. Step logits are E_i @ W_i.

SemId alphabet: branch labels 0..k-1, END = k, PAD = k+1. The root symbol
l0 = 0 is always the first decoder input and is never predicted.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator
from torch import Tensor

from src.utils.errors import (
    InvalidSemIdError,
    PositionOutOfRangeError,
    PrefixLengthMismatchError,
    TokenOutOfRangeError,
)

PAD_ID = 0
MASKED = -1e9
INIT_STD = 0.02


class ModelConfig(BaseModel):
    vocab_size: int = Field(ge=2)
    k: int = Field(ge=1)
    # number of decoding positions: the longest truncated SemId length
    max_semid_len: int = Field(ge=1)
    hidden: int = Field(64, ge=1)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    ffn_dim: int = Field(128, ge=1)
    max_query_len: int = Field(64, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    adaptor_hidden: int = Field(32, ge=1)
    share_positions: bool = False

    @model_validator(mode="after")
    def _heads_divide(self) -> "ModelConfig":
        if self.hidden % self.heads or self.adaptor_hidden % self.heads:
            raise ValueError("hidden and adaptor_hidden must be divisible by heads")
        return self

    @property
    def end_token(self) -> int:
        return self.k

    @property
    def pad_token(self) -> int:
        return self.k + 1

    @property
    def semid_vocab(self) -> int:
        return self.k + 2

    @property
    def positions(self) -> int:
        return 1 if self.share_positions else self.max_semid_len


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.dropout_p = dropout

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x: Tensor, memory: Tensor, bias: Optional[Tensor] = None, causal: bool = False) -> Tensor:
        """bias: additive float mask broadcastable to (B, 1, Lq, Lk); causal masks future positions."""
        q, k, v = self._split(self.query(x)), self._split(self.key(memory)), self._split(self.value(memory))
        ctx = F.scaled_dot_product_attention(
            q, k, v, attn_mask=bias, dropout_p=self.dropout_p if self.training else 0.0, is_causal=causal
        )
        return self.out(ctx.transpose(1, 2).reshape(x.shape[0], x.shape[1], -1))


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__()
        self.fc_in = nn.Linear(dim, hidden)
        self.fc_out = nn.Linear(hidden, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc_out(self.dropout(F.gelu(self.fc_in(x))))


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, bias: Tensor) -> Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, x, bias)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class DecoderBlock(nn.Module):
    """Causal self-attention over the prefix, optional cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float, cross: bool):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads, dropout)
        self.cross_attn = MultiHeadAttention(dim, heads, dropout) if cross else None
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norms = nn.ModuleList(nn.LayerNorm(dim) for _ in range(3 if cross else 2))
        self.dropout = nn.Dropout(dropout)

    def forward(self, h: Tensor, memory: Optional[Tensor] = None, memory_bias: Optional[Tensor] = None) -> Tensor:
        h = self.norms[0](h + self.dropout(self.self_attn(h, h, causal=True)))
        if self.cross_attn is not None:
            h = self.norms[1](h + self.dropout(self.cross_attn(h, memory, memory_bias)))
        return self.norms[-1](h + self.dropout(self.ffn(h)))


class WeightAdaptor(nn.Module):
    """Decoder' of one position: prefix -> E'_i -> W_i of shape (hidden, semid_vocab)."""

    def __init__(self, hidden: int, adaptor_hidden: int, heads: int, semid_vocab: int, dropout: float):
        super().__init__()
        self.hidden = hidden
        self.semid_vocab = semid_vocab
        self.proj_in = nn.Linear(hidden, adaptor_hidden)
        self.block = DecoderBlock(adaptor_hidden, heads, 2 * adaptor_hidden, dropout, cross=False)
        self.weight_head = nn.Linear(adaptor_hidden, hidden * semid_vocab)

    def forward(self, prefix_emb: Tensor) -> Tensor:
        e_prime = self.block(self.proj_in(prefix_emb))[:, -1]
        return self.weight_head(e_prime).view(-1, self.hidden, self.semid_vocab)


@dataclass
class EncoderOutput:
    states: Tensor      # (B, T, H) per-position states x
    keep: Tensor        # (B, T) bool, True on real tokens
    bias: Tensor        # (B, 1, 1, T) additive attention mask over the states
    pooled: Tensor      # (B, H) f_t, mean over real tokens
    degenerate: Tensor  # (B,) bool, True when the query has no real tokens


class PawaModel(nn.Module):
    def __init__(self, config: ModelConfig, zero_weight_heads: bool = True):
        super().__init__()
        self.config = config
        h, v = config.hidden, config.semid_vocab
        self.token_embedding = nn.Embedding(config.vocab_size, h, padding_idx=PAD_ID)
        self.position_embedding = nn.Embedding(config.max_query_len, h)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(h, config.heads, config.ffn_dim, config.dropout) for _ in range(config.layers)
        )
        self.semid_embedding = nn.Embedding(v, h)
        self.prefix_position = nn.Embedding(config.max_semid_len, h)
        self.decoders = nn.ModuleList(
            DecoderBlock(h, config.heads, config.ffn_dim, config.dropout, cross=True)
            for _ in range(config.positions)
        )
        self.adaptors = nn.ModuleList(
            WeightAdaptor(h, config.adaptor_hidden, config.heads, v, config.dropout)
            for _ in range(config.positions)
        )
        self.dropout = nn.Dropout(config.dropout)
        self.register_buffer("output_mask", self._output_mask(config), persistent=False)
        self.reset_parameters(zero_weight_heads)

    def reset_parameters(self, zero_weight_heads: bool = True) -> None:
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
                if isinstance(module, nn.Linear) and module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        with torch.no_grad():
            self.token_embedding.weight[PAD_ID].zero_()
        if zero_weight_heads:
            for adaptor in self.adaptors:
                nn.init.zeros_(adaptor.weight_head.weight)
                nn.init.zeros_(adaptor.weight_head.bias)

    @staticmethod
    def _output_mask(config: ModelConfig) -> Tensor:
        """(D, V) additive mask: PAD everywhere, branch labels at the last position."""
        mask = torch.zeros(config.max_semid_len, config.semid_vocab)
        mask[:, config.pad_token] = float("-inf")
        mask[-1, : config.k] = float("-inf")
        return mask

    # --- encoder ---

    def encode(self, query_tokens: Tensor) -> EncoderOutput:
        """Encodes a (B, T) batch of query token ids, 0 being padding."""
        if query_tokens.dim() == 1:
            query_tokens = query_tokens.unsqueeze(0)
        if query_tokens.shape[1] == 0:
            query_tokens = torch.full((query_tokens.shape[0], 1), PAD_ID, dtype=torch.long)
        if query_tokens.shape[1] > self.config.max_query_len:
            raise TokenOutOfRangeError(
                f"query length {query_tokens.shape[1]} exceeds max_query_len {self.config.max_query_len}"
            )
        if query_tokens.min() < 0 or query_tokens.max() >= self.config.vocab_size:
            raise TokenOutOfRangeError(f"query token outside vocab of size {self.config.vocab_size}")
        keep = query_tokens != PAD_ID
        positions = torch.arange(query_tokens.shape[1], device=query_tokens.device)
        x = self.dropout(self.token_embedding(query_tokens) + self.position_embedding(positions))
        # finite fill: a fully masked row degrades to a uniform average instead of NaN
        bias = torch.zeros(keep.shape, dtype=x.dtype, device=x.device).masked_fill(~keep, MASKED)[:, None, None, :]
        for layer in self.encoder_layers:
            x = layer(x, bias)
        counts = keep.sum(dim=1, keepdim=True)
        pooled = (x * keep.unsqueeze(-1)).sum(dim=1) / counts.clamp(min=1)
        return EncoderOutput(states=x, keep=keep, bias=bias, pooled=pooled, degenerate=counts.squeeze(1) == 0)

    # --- PAWA decoder ---

    def _slot(self, position: int) -> int:
        if not 1 <= position <= self.config.max_semid_len:
            raise PositionOutOfRangeError(f"position {position} outside 1..{self.config.max_semid_len}")
        return 0 if self.config.share_positions else position - 1

    def embed_prefix(self, prefix: Tensor) -> Tensor:
        if prefix.shape[1] > self.config.max_semid_len:
            raise PrefixLengthMismatchError(f"prefix longer than {self.config.max_semid_len}")
        steps = torch.arange(prefix.shape[1], device=prefix.device)
        return self.dropout(self.semid_embedding(prefix) + self.prefix_position(steps))

    def _logits(self, enc: EncoderOutput, emb: Tensor, position: int) -> Tensor:
        slot = self._slot(position)
        e = self.decoders[slot](emb, enc.states, enc.bias)[:, -1]
        w = self.adaptors[slot](emb)
        return torch.einsum("bh,bhv->bv", e, w) + self.output_mask[position - 1]

    def position_logits(self, enc: EncoderOutput, prefix: Tensor, position: int) -> Tensor:
        """Logits of the decoder/adaptor pair of `position` applied to any prefix (B, L).

        PAD is never emitted, and at the last position only END is.
        """
        return self._logits(enc, self.embed_prefix(prefix), position)

    def decoder_step(self, enc: EncoderOutput, prefix: Tensor, i: int) -> Tensor:
        """Logits for token l_i given the prefix l_0..l_{i-1}."""
        if prefix.dim() == 1:
            prefix = prefix.unsqueeze(0)
        if prefix.shape[1] != i:
            raise PrefixLengthMismatchError(f"step {i} needs a prefix of length {i}, got {prefix.shape[1]}")
        return self.position_logits(enc, prefix, i)

    def teacher_forced_logits(self, enc: EncoderOutput, inputs: Tensor) -> Tensor:
        """(B, L, V) logits where step i sees the gold prefix inputs[:, :i]."""
        emb = self.embed_prefix(inputs)
        return torch.stack([self._logits(enc, emb[:, :i], i) for i in range(1, inputs.shape[1] + 1)], dim=1)

    def step_log_probs(self, enc: EncoderOutput, prefix: Sequence[int]) -> Tensor:
        """Log-probabilities over the SemId alphabet after one prefix (batch of one)."""
        device = enc.states.device
        prefix_t = torch.tensor([list(prefix)], dtype=torch.long, device=device)
        return torch.log_softmax(self.decoder_step(enc, prefix_t, len(prefix)), dim=-1)[0]

    # --- sequence scoring ---

    def check_target(self, tokens: Sequence[int], require_end: bool = True) -> None:
        cfg = self.config
        if not tokens or tokens[0] != 0:
            raise InvalidSemIdError(f"target must start with the root symbol, got {list(tokens)}")
        body = list(tokens[1:-1]) if require_end else list(tokens[1:])
        if require_end and tokens[-1] != cfg.end_token:
            raise InvalidSemIdError("target must end with END")
        if any(not 0 <= t < cfg.k for t in body):
            raise InvalidSemIdError(f"target labels must lie in 0..{cfg.k - 1}, got {list(tokens)}")
        if len(tokens) - 1 > cfg.max_semid_len:
            raise InvalidSemIdError(f"target needs {len(tokens) - 1} steps, model has {cfg.max_semid_len}")

    @torch.no_grad()
    def _accumulate(self, query_tokens: Sequence[int], tokens: Sequence[int]) -> float:
        enc = self.encode(torch.tensor([list(query_tokens)], dtype=torch.long))
        total = 0.0
        for i in range(1, len(tokens)):
            total += float(self.step_log_probs(enc, tokens[:i])[tokens[i]])
        return total

    def path_logprob(self, query_tokens: Sequence[int], tokens: Sequence[int]) -> float:
        """Summed step log-probabilities of the labels tokens[1:] given tokens[0]; no END."""
        self.check_target(tokens, require_end=False)
        return self._accumulate(query_tokens, tokens)

    def sequence_logprob(self, query_tokens: Sequence[int], semid_with_end: Sequence[int]) -> float:
        """log p(l_1..END | query), accumulated step by step in decoding order."""
        self.check_target(semid_with_end, require_end=True)
        return self._accumulate(query_tokens, semid_with_end)
