"""
模态编码器

- 图像: 8×8 不重叠 patch 嵌入 + patch 位置嵌入 + 视角嵌入, 经共享主干
- 点云: 最远点采样分组 + 组内 MLP 最大池化 + 虚拟平面位置嵌入, 经适配层后进入同一主干
- 文本: 词嵌入 + 位置嵌入 + 独立 Transformer 块(填充位不参与注意力)
- 状态: [归一化 z, c/30] 经两层 MLP 得到一个 token

参数路径前缀: enc.img. / enc.cloud. / enc.adapter. / enc.trunk. / enc.text. / enc.state. / enc.history.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
from torch import nn

from src.core.errors import ShapeError, VocabularyError
from src.models.config_data import ModelConfig
from src.networks.layers import EncoderBlock, TransformerTrunk, mlp
from src.sim.sensors import PAD_INTENSITY
from src.sim.vocab import PAD_ID

# 平面顺序 xy / xz / yz, 每个平面对应的两个坐标轴
PLANE_AXES = ((0, 1), (0, 2), (1, 2))


@dataclass
class ModalityFeatures:
    """
    各模态 token 序列(历史步已沿 token 轴拼接)

    views 顺序 exterior / left_wrist / right_wrist
    """

    views: List[torch.Tensor]  # 3 × (B, H·T_v, d)
    cloud: torch.Tensor  # (B, H·T_p, d)
    lang: torch.Tensor  # (B, T_ℓ, d)
    state: torch.Tensor  # (B, H, d)

    @property
    def visual_streams(self) -> List[torch.Tensor]:
        return [*self.views, self.cloud]


class ImageEncoder(nn.Module):
    """patch 嵌入(主干在 Encoders 中共享)"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.patch = nn.Conv2d(config.image_channels, d, kernel_size=config.patch_size, stride=config.patch_size)
        self.pos = nn.Parameter(torch.randn(1, config.image_tokens, d) * 0.02)
        self.view = nn.Embedding(config.num_views, d)

    def forward(self, views: torch.Tensor) -> torch.Tensor:
        """
        Args:
            views: (B, V, C, S, S)

        Returns:
            (B, V, T_v, d)
        """
        cfg = self.config
        expected = (cfg.num_views, cfg.image_channels, cfg.image_size, cfg.image_size)
        if views.dim() != 5 or tuple(views.shape[1:]) != expected:
            raise ShapeError(f"图像输入形状 {tuple(views.shape)} 与配置 (B, {expected}) 不符")
        B, V = views.shape[:2]
        x = self.patch(views.reshape(B * V, *expected[1:]))
        x = x.flatten(2).transpose(1, 2).reshape(B, V, cfg.image_tokens, cfg.d_model)
        view_ids = torch.arange(V, device=views.device)
        return x + self.pos.unsqueeze(0) + self.view(view_ids)[None, :, None, :]


# ==================== 点云 ====================


def lexicographic_first(points: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """每个样本中按 (x, y, z) 字典序最小的有效点下标; 无有效点时为 0"""
    xyz = points.detach().cpu().numpy()
    mask = valid.cpu().numpy()
    first = np.zeros(len(xyz), dtype=np.int64)
    for b in range(len(xyz)):
        idx = np.flatnonzero(mask[b])
        if len(idx):
            order = np.lexsort((xyz[b, idx, 2], xyz[b, idx, 1], xyz[b, idx, 0]))
            first[b] = idx[order[0]]
    return torch.from_numpy(first).to(points.device)


@torch.no_grad()
def farthest_point_sample(points: torch.Tensor, valid: torch.Tensor, count: int) -> torch.Tensor:
    """
    确定性最远点采样

    Args:
        points: (B, N, 3)
        valid: (B, N) bool
        count: 采样数 T_p

    Returns:
        (B, count) 下标; 有效点不足时重复已选点
    """
    B, N, _ = points.shape
    selected = torch.zeros(B, count, dtype=torch.long, device=points.device)
    current = lexicographic_first(points, valid)
    min_dist = torch.full((B, N), float("inf"), dtype=points.dtype, device=points.device)
    batch = torch.arange(B, device=points.device)
    for j in range(count):
        selected[:, j] = current
        d = ((points - points[batch, current][:, None, :]) ** 2).sum(-1)
        min_dist = torch.minimum(min_dist, d)
        min_dist = min_dist.masked_fill(~valid, -1.0)
        current = min_dist.argmax(dim=-1)
    return selected


class CloudTokenizer(nn.Module):
    """点云 -> T_p 个带虚拟平面位置嵌入的原始 3D token"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, g = config.d_model, config.plane_grid
        self.group_mlp = mlp(4, d, d)
        self.planes = nn.Parameter(torch.randn(len(PLANE_AXES), g, g, d) * 0.02)
        self.null = nn.Parameter(torch.randn(d) * 0.02)

    def plane_indices(self, xyz: torch.Tensor) -> torch.Tensor:
        """
        3D 点 -> 每个平面上的网格下标

        x, y 覆盖 [−extent, extent], z 覆盖 [z_min, z_max], 各分 G 格, 越界截断到边界格。

        Returns:
            (..., 3 平面, 2) long
        """
        cfg = self.config
        g = cfg.plane_grid
        lo = xyz.new_tensor([-cfg.plane_extent, -cfg.plane_extent, cfg.plane_z_min])
        hi = xyz.new_tensor([cfg.plane_extent, cfg.plane_extent, cfg.plane_z_max])
        cells = torch.floor((xyz.detach() - lo) / (hi - lo) * g).long().clamp(0, g - 1)
        return torch.stack([cells[..., list(axes)] for axes in PLANE_AXES], dim=-2)

    def positional_embedding(self, xyz: torch.Tensor) -> torch.Tensor:
        """三个平面在投影格子处的嵌入之和, 形状 (..., d)"""
        idx = self.plane_indices(xyz)
        total = 0
        for p in range(len(PLANE_AXES)):
            total = total + self.planes[p][idx[..., p, 0], idx[..., p, 1]]
        return total

    def forward(self, cloud: torch.Tensor) -> torch.Tensor:
        """
        Args:
            cloud: (B, N, 4), 第 4 列为强度, 填充行为 −1

        Returns:
            (B, T_p, d)
        """
        cfg = self.config
        if cloud.dim() != 3 or cloud.shape[-1] != 4:
            raise ShapeError(f"点云输入形状 {tuple(cloud.shape)} 应为 (B, N, 4)")
        B, N, _ = cloud.shape
        valid = cloud[..., 3] != PAD_INTENSITY
        empty = ~valid.any(dim=-1)
        # 全填充样本按全部有效处理以保持数值有限, 最后整体替换为 null 嵌入
        valid = valid | empty[:, None]
        xyz = cloud[..., :3]

        centers_idx = farthest_point_sample(xyz, valid, cfg.cloud_tokens)
        batch = torch.arange(B, device=cloud.device)[:, None]
        centers = xyz[batch, centers_idx]  # (B, T_p, 3)

        k = min(cfg.group_size, N)
        d2 = ((centers[:, :, None, :] - xyz[:, None, :, :]) ** 2).sum(-1).detach()
        d2 = d2.masked_fill(~valid[:, None, :], float("inf"))
        knn = d2.topk(k, dim=-1, largest=False).indices  # (B, T_p, k)
        group = cloud[batch[..., None], knn]  # (B, T_p, k, 4)
        member_valid = valid[batch[..., None], knn]

        local = torch.cat([group[..., :3] - centers[:, :, None, :], group[..., 3:]], dim=-1)
        feats = self.group_mlp(local).masked_fill(~member_valid[..., None], float("-inf")).amax(dim=2)
        tokens = feats + self.positional_embedding(centers)

        null = self.null.expand_as(tokens)
        return torch.where(empty[:, None, None], null, tokens)


class ModalityAdapter(nn.Module):
    """残差线性适配层, 零初始化时为恒等映射"""

    def __init__(self, d_model: int):
        super().__init__()
        self.proj = nn.Linear(d_model, d_model)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.proj(x)


# ==================== 文本 / 状态 ====================


class TextEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.embed = nn.Embedding(config.vocab_size, d)
        self.pos = nn.Parameter(torch.randn(1, config.text_tokens, d) * 0.02)
        self.blocks = nn.ModuleList([EncoderBlock(d, config.num_heads, config.mlp_ratio) for _ in range(config.text_layers)])
        self.norm = nn.LayerNorm(d)

    def forward(self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            ids: (B, T_ℓ) long
            pad_mask: (B, T_ℓ) bool, True 为填充; 缺省时由 PAD_ID 推出

        Returns:
            (B, T_ℓ, d)
        """
        cfg = self.config
        if ids.dim() != 2 or ids.shape[1] != cfg.text_tokens:
            raise ShapeError(f"指令形状 {tuple(ids.shape)} 应为 (B, {cfg.text_tokens})")
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= cfg.vocab_size):
            raise VocabularyError(f"指令 id 超出词表范围 [0, {cfg.vocab_size})")
        if pad_mask is None:
            pad_mask = ids == PAD_ID
        # 整句为填充时不屏蔽, 否则注意力没有可用的键
        pad_mask = pad_mask & ~pad_mask.all(dim=-1, keepdim=True)
        x = self.embed(ids) + self.pos
        for block in self.blocks:
            x = block(x, key_padding_mask=pad_mask)
        return self.norm(x)


class StateEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.mlp = mlp(config.state_dim + 1, config.d_model, config.d_model)

    def forward(self, z_norm: torch.Tensor, freq: torch.Tensor) -> torch.Tensor:
        """
        Args:
            z_norm: (..., state_dim) 已归一化的本体状态
            freq: (...) 控制频率 c

        Returns:
            (..., d)
        """
        if z_norm.shape[-1] != self.config.state_dim:
            raise ShapeError(f"state 维度 {z_norm.shape[-1]} != {self.config.state_dim}")
        c = (freq / self.config.frequency_scale).unsqueeze(-1).to(z_norm.dtype)
        return self.mlp(torch.cat([z_norm, c], dim=-1))


# ==================== 汇总 ====================


class Encoders(nn.Module):
    """全部模态编码器, 在 ACDiTPolicy 中注册为 enc"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.img = ImageEncoder(config)
        self.cloud = CloudTokenizer(config)
        self.adapter = ModalityAdapter(d)
        self.trunk = TransformerTrunk(d, config.num_heads, config.encoder_layers, config.mlp_ratio)
        self.text = TextEncoder(config)
        self.state = StateEncoder(config)
        self.history = nn.Embedding(config.history, d)

    def encode_image(self, views: torch.Tensor) -> torch.Tensor:
        """(B, V, C, S, S) -> (B, V, T_v, d)"""
        tokens = self.img(views)
        B, V, T, d = tokens.shape
        return self.trunk(tokens.reshape(B * V, T, d)).reshape(B, V, T, d)

    def tokenize_cloud(self, cloud: torch.Tensor) -> torch.Tensor:
        return self.cloud(cloud)

    def encode_cloud(self, raw_tokens: torch.Tensor) -> torch.Tensor:
        """原始 3D token -> F_3D (适配层 + 共享主干)"""
        if raw_tokens.dim() != 3 or raw_tokens.shape[1:] != (self.config.cloud_tokens, self.config.d_model):
            raise ShapeError(f"3D token 形状 {tuple(raw_tokens.shape)} 不符")
        return self.trunk(self.adapter(raw_tokens))

    def null_cloud(self, batch: int) -> torch.Tensor:
        """不使用点云时的占位 token"""
        return self.cloud.null.expand(batch, self.config.cloud_tokens, -1)

    def encode_text(self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.text(ids, pad_mask)

    def embed_state(self, z_norm: torch.Tensor, freq: torch.Tensor) -> torch.Tensor:
        return self.state(z_norm, freq)

    def forward(
        self,
        views: torch.Tensor,
        clouds: torch.Tensor,
        z_norm: torch.Tensor,
        freq: torch.Tensor,
        text: torch.Tensor,
    ) -> ModalityFeatures:
        """
        Args:
            views: (B, H, V, C, S, S)
            clouds: (B, H, N, 4)
            z_norm: (B, H, state_dim)
            freq: (B, H)
            text: (B, T_ℓ)
        """
        cfg = self.config
        B, H = z_norm.shape[:2]
        if H != cfg.history:
            raise ShapeError(f"历史长度 {H} != 配置 {cfg.history}")
        step_embed = self.history(torch.arange(H, device=z_norm.device))  # (H, d)

        img = self.encode_image(views.reshape(B * H, *views.shape[2:]))
        img = img.reshape(B, H, cfg.num_views, cfg.image_tokens, cfg.d_model) + step_embed[None, :, None, None, :]
        view_streams = [img[:, :, v].reshape(B, H * cfg.image_tokens, cfg.d_model) for v in range(cfg.num_views)]

        if cfg.use_cloud:
            raw = self.tokenize_cloud(clouds.reshape(B * H, *clouds.shape[2:]))
        else:
            raw = self.null_cloud(B * H)
        cloud = self.encode_cloud(raw).reshape(B, H, cfg.cloud_tokens, cfg.d_model) + step_embed[None, :, None, :]

        state = self.embed_state(z_norm, freq) + step_embed[None]
        return ModalityFeatures(
            views=view_streams,
            cloud=cloud.reshape(B, H * cfg.cloud_tokens, cfg.d_model),
            lang=self.encode_text(text),
            state=state,
        )
