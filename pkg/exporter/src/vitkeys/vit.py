"""Minimal vision transformer mirroring the published self-supervised ViT
checkpoint layout (patch_embed / cls_token / pos_embed / blocks.N / norm),
with a hook to read the per-patch key vectors of the last attention layer."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

PRESET_HEADS = {192: 3, 384: 6, 768: 12}  # tiny / small / base head counts


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def qkv_split(self, x: torch.Tensor):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)  # (3, B, heads, N, head_dim)
        return qkv[0], qkv[1], qkv[2]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv_split(x)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x).flatten(2).transpose(1, 2)  # (B, N, D)


class VisionTransformer(nn.Module):
    def __init__(self, patch_size: int, dim: int, depth: int, num_heads: int,
                 mlp_hidden: int, n_pos_patches: int):
        super().__init__()
        self.patch_size = patch_size
        self.embed_dim = dim
        self.patch_embed = PatchEmbed(patch_size, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_pos_patches + 1, dim))
        self.blocks = nn.ModuleList(
            [Block(dim, num_heads, mlp_hidden) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)

    def interpolate_pos_encoding(self, n_patches: int, w: int, h: int):
        n_pos = self.pos_embed.shape[1] - 1
        if n_patches == n_pos and w == h:
            return self.pos_embed
        cls_pos = self.pos_embed[:, :1]
        patch_pos = self.pos_embed[:, 1:]
        side = int(math.sqrt(n_pos))
        gw = w // self.patch_size
        gh = h // self.patch_size
        patch_pos = patch_pos.reshape(1, side, side, self.embed_dim)
        patch_pos = patch_pos.permute(0, 3, 1, 2)
        patch_pos = nn.functional.interpolate(
            patch_pos, size=(gh, gw), mode="bicubic", align_corners=False)
        patch_pos = patch_pos.permute(0, 2, 3, 1).reshape(1, gh * gw, self.embed_dim)
        return torch.cat([cls_pos, patch_pos], dim=1)

    def prepare_tokens(self, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        tokens = self.patch_embed(x)
        cls = self.cls_token.expand(b, -1, -1)
        tokens = torch.cat([cls, tokens], dim=1)
        return tokens + self.interpolate_pos_encoding(tokens.shape[1] - 1, w, h)

    @torch.no_grad()
    def last_layer_keys(self, x: torch.Tensor) -> torch.Tensor:
        """Concatenated per-head key vectors of the final attention layer,
        CLS token dropped: (B, n_patches, dim)."""
        tokens = self.prepare_tokens(x)
        for block in self.blocks[:-1]:
            tokens = block(tokens)
        last = self.blocks[-1]
        _, k, _ = last.attn.qkv_split(last.norm1(tokens))
        b, heads, n, head_dim = k.shape
        keys = k.transpose(1, 2).reshape(b, n, heads * head_dim)
        return keys[:, 1:]


def _unwrap_state_dict(payload) -> dict:
    """Accept common published checkpoint wrappers and prefixes."""
    state = payload
    for key in ("state_dict", "teacher", "student", "model"):
        if isinstance(state, dict) and key in state and isinstance(state[key], dict):
            state = state[key]
    cleaned = {}
    for name, tensor in state.items():
        for prefix in ("module.", "backbone."):
            if name.startswith(prefix):
                name = name[len(prefix):]
        cleaned[name] = tensor
    return cleaned


def load_checkpoint(path, num_heads: int | None = None) -> VisionTransformer:
    """Build the transformer the checkpoint describes and load its weights.

    Geometry (embed dim, patch size, depth, MLP width, pretrain grid) is
    read off tensor shapes; the head count defaults to the standard
    64-per-head convention unless overridden.
    """
    payload = torch.load(path, map_location="cpu", weights_only=True)
    state = _unwrap_state_dict(payload)
    required = ("patch_embed.proj.weight", "pos_embed", "cls_token")
    for key in required:
        if key not in state:
            raise ValueError(f"checkpoint missing {key}; not a ViT state dict")
    proj = state["patch_embed.proj.weight"]
    dim, _, patch_size, _ = proj.shape
    depth = 1 + max(int(name.split(".")[1]) for name in state
                    if name.startswith("blocks."))
    mlp_hidden = state["blocks.0.mlp.fc1.weight"].shape[0]
    n_pos_patches = state["pos_embed"].shape[1] - 1
    if num_heads is None:
        num_heads = PRESET_HEADS.get(dim, max(1, dim // 64))
    if dim % num_heads != 0:
        raise ValueError(f"embed dim {dim} not divisible by {num_heads} heads")
    model = VisionTransformer(patch_size, dim, depth, num_heads,
                              mlp_hidden, n_pos_patches)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing:
        raise ValueError(f"checkpoint missing weights: {sorted(missing)[:4]} ...")
    model.eval()
    return model


def random_checkpoint(path, dim: int = 192, depth: int = 4,
                      patch_size: int = 8, pretrain_grid: int = 28,
                      seed: int = 0) -> None:
    """Write a seeded randomly-initialized checkpoint in the published
    layout (for tests and offline runs)."""
    torch.manual_seed(seed)
    model = VisionTransformer(patch_size, dim, depth,
                              PRESET_HEADS.get(dim, max(1, dim // 64)),
                              dim * 4, pretrain_grid * pretrain_grid)
    for p in model.parameters():
        nn.init.normal_(p, std=0.02)
    torch.save(model.state_dict(), path)
