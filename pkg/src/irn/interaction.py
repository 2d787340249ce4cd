"""Pairwise interaction encoders, cross-attention decoder, and the full model.

Six encoders reason about (hand, counterpart) trajectory pairs: each hand
queries its own-side object, the other-side object, and the other hand. Query
projections come from the hand trajectory, key/value projections from the
counterpart, with multi-head scaled-dot attention over the temporal axis. The
projections are frame-wise maps that keep the (T, C) layout, so the flattened
output width is N = T*C per pair. Pair outputs are concatenated (fixed order,
disabled pairs contribute zero blocks) and reduced from 6N to M.

The decoder has no self attention: the globally pooled action vector maps
linearly to the query and cross-attends over the encoder output, either as a
single M-dim token or as six per-pair tokens. Residual and feedforward wiring
mirrors the encoder. Stacks chain on the query stream while re-projecting the
same memory at every layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .backbone import MlpPatchEmbed, TwoPathwayBackbone
from .config import ExperimentConfig, PAIR_NAMES, validate
from .detections import PAIR_ORDER, ROLES
from .spe import SpatialPositionEncoder, TrajectoryFuser

ROLE_INDEX = {role: i for i, role in enumerate(ROLES)}
PAIR_INDICES = tuple(
    (ROLE_INDEX[q], ROLE_INDEX[m]) for q, m in PAIR_ORDER
)


@dataclass(frozen=True)
class AblationMask:
    """Which pairs and which fusion/representation variants are active."""

    pairs: tuple = (True,) * 6
    action_fusion: str = "decoder"
    detection_rep: str = "roi"
    spe_mode: str = "sum"
    traj_mode: str = "trajectory"

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "AblationMask":
        it = config.interaction
        return cls(pairs=tuple(it.pairs), action_fusion=it.action_fusion,
                   detection_rep=it.detection_rep, spe_mode=it.spe_mode,
                   traj_mode=it.traj_mode)


def _attention(q, k, v, heads, scale, need_weights):
    """Multi-head scaled-dot attention over the token axis.

    q: (B, Tq, D), k/v: (B, Tk, D). Heads split D; the concatenated head
    outputs are returned directly, there is no output projection.
    """
    b, tq, d = q.shape
    tk = k.shape[1]
    hd = d // heads
    qh = q.view(b, tq, heads, hd).transpose(1, 2)
    kh = k.view(b, tk, heads, hd).transpose(1, 2)
    vh = v.view(b, tk, heads, hd).transpose(1, 2)
    logits = torch.matmul(qh, kh.transpose(-2, -1)) * scale
    attn = torch.softmax(logits, dim=-1)
    ctx = torch.matmul(attn, vh).transpose(1, 2).reshape(b, tq, d)
    return ctx, (attn if need_weights else None)


def _scale_factor(mode: str, width: int, heads: int, flat_dim: int) -> float:
    if mode == "per_head":
        return (width // heads) ** -0.5
    return float(flat_dim) ** -0.5


class FeedForward(nn.Module):
    def __init__(self, width: int, bias: bool = True):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(width, 2 * width, bias=bias),
            nn.ReLU(),
            nn.Linear(2 * width, width, bias=bias),
        )

    def forward(self, x):
        return self.net(x)


class PairEncoderLayer(nn.Module):
    """One residual attention layer for a single (hand, counterpart) pair."""

    def __init__(self, channels: int, heads: int, dropout: float,
                 attn_scale: str, flat_dim: int, bias: bool = True):
        super().__init__()
        self.heads = heads
        self.scale = _scale_factor(attn_scale, channels, heads, flat_dim)
        self.q = nn.Linear(channels, channels, bias=bias)
        self.k = nn.Linear(channels, channels, bias=bias)
        self.v = nn.Linear(channels, channels, bias=bias)
        self.ffn = FeedForward(channels, bias=bias)
        self.drop = nn.Dropout(dropout)

    def forward(self, query_traj, memory_traj, need_weights=False):
        q = self.q(query_traj)
        k = self.k(memory_traj)
        v = self.v(memory_traj)
        ctx, attn = _attention(q, k, v, self.heads, self.scale, need_weights)
        inner = ctx + q
        out = self.drop(self.ffn(inner)) + inner
        return out, attn


class PairEncoder(nn.Module):
    """Stack of encoder layers; later layers re-project the same memory."""

    def __init__(self, channels, heads, layers, dropout, attn_scale, flat_dim,
                 bias=True):
        super().__init__()
        self.layers = nn.ModuleList(
            PairEncoderLayer(channels, heads, dropout, attn_scale, flat_dim, bias)
            for _ in range(layers)
        )

    def forward(self, query_traj, memory_traj, need_weights=False):
        x = query_traj
        weights = []
        for layer in self.layers:
            x, attn = layer(x, memory_traj, need_weights)
            if need_weights:
                weights.append(attn)
        return x, weights


class EncoderBank(nn.Module):
    """Six independent pair encoders plus the 6N -> M reduction.

    When the decoder attends over six tokens, each pair encoding also gets its
    own N -> M projection. Disabled pairs are skipped entirely and contribute
    exact zero blocks.
    """

    def __init__(self, channels, heads, layers, dropout, attn_scale,
                 token_len, action_dim, per_pair_tokens, bias=True):
        super().__init__()
        self.channels = channels
        self.token_len = token_len
        self.flat_dim = token_len * channels  # N
        self.encoders = nn.ModuleList(
            PairEncoder(channels, heads, layers, dropout, attn_scale,
                        self.flat_dim, bias)
            for _ in PAIR_NAMES
        )
        self.reduce = nn.Linear(6 * self.flat_dim, action_dim, bias=bias)
        self.token_proj = (
            nn.ModuleList(nn.Linear(self.flat_dim, action_dim, bias=bias)
                          for _ in PAIR_NAMES)
            if per_pair_tokens else None
        )

    def forward(self, bundle, pair_mask, need_weights=False):
        """bundle: (B, 4, T, C) fused role trajectories."""
        b = bundle.shape[0]
        blocks = []
        attn_by_pair = {}
        for p, (qi, mi) in enumerate(PAIR_INDICES):
            if pair_mask[p]:
                out, attn = self.encoders[p](bundle[:, qi], bundle[:, mi],
                                             need_weights)
                if need_weights:
                    attn_by_pair[PAIR_NAMES[p]] = attn
            else:
                out = bundle.new_zeros(b, self.token_len, self.channels)
            blocks.append(out)
        per_pair = torch.stack(blocks, dim=1)  # (B, 6, T, C)
        concatenated = per_pair.reshape(b, -1)  # (B, 6N)
        projected = self.reduce(concatenated)  # (B, M)
        tokens = None
        if self.token_proj is not None:
            flat = per_pair.reshape(b, 6, -1)
            tokens = torch.stack(
                [proj(flat[:, p]) for p, proj in enumerate(self.token_proj)], dim=1
            )  # (B, 6, M)
        return BankOutput(per_pair, concatenated, projected, tokens, attn_by_pair)


@dataclass
class BankOutput:
    per_pair: torch.Tensor
    concatenated: torch.Tensor
    projected: torch.Tensor
    tokens: Optional[torch.Tensor]
    attention: dict


class DecoderLayer(nn.Module):
    """Self-attention-free decoder layer: query from the action stream."""

    def __init__(self, width, heads, dropout, attn_scale, bias=True):
        super().__init__()
        self.heads = heads
        self.scale = _scale_factor(attn_scale, width, heads, width)
        self.q = nn.Linear(width, width, bias=bias)
        self.k = nn.Linear(width, width, bias=bias)
        self.v = nn.Linear(width, width, bias=bias)
        self.ffn = FeedForward(width, bias=bias)
        self.drop = nn.Dropout(dropout)

    def forward(self, stream, memory, need_weights=False):
        q = self.q(stream).unsqueeze(1)  # (B, 1, M)
        k = self.k(memory)
        v = self.v(memory)
        ctx, attn = _attention(q, k, v, self.heads, self.scale, need_weights)
        inner = (ctx + q).squeeze(1)
        out = self.drop(self.ffn(inner)) + inner
        return out, attn


class InteractionDecoder(nn.Module):
    def __init__(self, width, heads, layers, dropout, attn_scale, bias=True):
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(width, heads, dropout, attn_scale, bias)
            for _ in range(layers)
        )

    def forward(self, action_vec, memory, need_weights=False):
        x = action_vec
        weights = []
        for layer in self.layers:
            x, attn = layer(x, memory, need_weights)
            if need_weights:
                weights.append(attn)
        return x, weights


class ConcatFusionHead(nn.Module):
    """Late fusion: single linear classifier on [encoder output; action]."""

    def __init__(self, action_dim, num_classes, bias=True):
        super().__init__()
        self.fc = nn.Linear(2 * action_dim, num_classes, bias=bias)

    def forward(self, enc_projected, action_vec):
        return self.fc(torch.cat([enc_projected, action_vec], dim=-1))


class InteractionReasoningNetwork(nn.Module):
    """End-to-end model: backbone, detection features, fusion, pair encoders,
    decoder (or the ablation alternatives), classifier.

    The forward consumes a collated batch (see ``train_eval.collate_batch``):
    everything derived from detections arrives precomputed and constant, so
    gradients flow only through backbone, position encoder, and interaction
    parameters, never through detection generation.
    """

    def __init__(self, config: ExperimentConfig):
        super().__init__()
        validate(config)
        self.config = config
        d, it = config.data, config.interaction
        bias = not it.bias_free
        self.token_len = 1 if it.traj_mode == "middle" else d.trajectory_len

        self.backbone = TwoPathwayBackbone(
            feature_dim=it.channels, action_dim=it.action_dim,
            traj_len=d.trajectory_len, frames_per_clip=d.frames_per_clip,
            bias=bias)
        self.patch_embed = (
            MlpPatchEmbed(it.mlp_patch_size, it.channels, bias=bias)
            if it.detection_rep == "mlp" else None
        )
        self.spe = (
            SpatialPositionEncoder(d.grid_size, it.channels, bias=bias)
            if it.spe_mode != "none" else None
        )
        self.fuser = TrajectoryFuser(it.spe_mode, it.channels, bias=bias)
        use_tokens = it.action_fusion == "decoder" and it.decoder_kv == "six_tokens"
        self.bank = EncoderBank(
            it.channels, it.heads, it.layers, it.dropout, it.attn_scale,
            self.token_len, it.action_dim, per_pair_tokens=use_tokens, bias=bias)
        self.decoder = (
            InteractionDecoder(it.action_dim, it.heads, it.layers, it.dropout,
                               it.attn_scale, bias=bias)
            if it.action_fusion == "decoder" else None
        )
        self.classifier = nn.Linear(it.action_dim, d.num_classes, bias=bias)
        self.concat_head = (
            ConcatFusionHead(it.action_dim, d.num_classes, bias=bias)
            if it.action_fusion == "concat" else None
        )
        self.apply(_init_module)

    def forward(self, batch: dict, pair_override=None, return_internals=False):
        it = self.config.interaction
        pair_mask = tuple(it.pairs) if pair_override is None else tuple(pair_override)
        need_weights = return_internals

        volume, action_vec = self.backbone(batch["clips"])
        features = self._detection_features(batch, volume)
        if self.spe is not None:
            b, r, t, g, _ = batch["maps"].shape
            enc = self.spe(batch["maps"].reshape(b * r, t, g, g))
            enc = enc.reshape(b, r, t, -1)
        else:
            enc = torch.zeros_like(features)
        bundle = self.fuser(features, enc)
        # Rows for undetected or deactivated frames stay exactly zero.
        bundle = bundle * batch["presence"].unsqueeze(-1)

        internals = {
            "volume": volume, "action": action_vec, "features": features,
            "bundle": bundle,
        } if return_internals else None

        if not any(pair_mask) and it.action_fusion == "decoder":
            # No encoders: the decoder degenerates and the model reduces to
            # the backbone-plus-classifier path.
            logits = self.classifier(action_vec)
            if return_internals:
                internals["bank"] = None
                return logits, internals
            return logits

        bank_out = self.bank(bundle, pair_mask, need_weights)
        if it.action_fusion == "decoder":
            memory = (bank_out.tokens if it.decoder_kv == "six_tokens"
                      else bank_out.projected.unsqueeze(1))
            decoded, dec_attn = self.decoder(action_vec, memory, need_weights)
            logits = self.classifier(decoded)
            if return_internals:
                internals.update(bank=bank_out, decoded=decoded,
                                 decoder_attention=dec_attn)
        elif it.action_fusion == "concat":
            logits = self.concat_head(bank_out.projected, action_vec)
            if return_internals:
                internals["bank"] = bank_out
        else:
            logits = self.classifier(bank_out.projected)
            if return_internals:
                internals["bank"] = bank_out
        if return_internals:
            return logits, internals
        return logits

    def _detection_features(self, batch, volume):
        """Pool per-detection features: RoI averaging or MLP patch embedding."""
        if self.patch_embed is not None:
            return self.patch_embed(batch["patches"])
        traj_idx = batch["traj_frame_indices"]
        vol_sel = volume.index_select(2, traj_idx)  # (B, C, Tt, H', W')
        return torch.einsum("bcthw,brthw->brtc", vol_sel, batch["roi_masks"])


def _init_module(module):
    # variance-preserving truncated normal: with no normalisation layers in
    # the stack (Eq.-faithful), smaller scales attenuate the trajectory
    # signal several-fold per projection and SGD never recovers it
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=module.in_features ** -0.5)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_model(config: ExperimentConfig) -> InteractionReasoningNetwork:
    """Construct the model with initialisation seeded from the config."""
    torch.manual_seed(config.seed)
    return InteractionReasoningNetwork(config)
