"""Analytic multiply-accumulate accounting for a backbone plus a compression schedule.

One multiply-accumulate counts as one reported FLOP. Elementwise ops, norms and
softmax are not counted; only matmuls, linear layers and convolutions are.
The classifier head is excluded as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .compress import StageConfig
from .errors import ConfigError
from .vit import ViTConfig, validate_schedule

# 224px backbones used for the video tables, 400 output classes.
VIT_B16 = ViTConfig(image_size=224, patch_size=16, depth=12, width=768, heads=12, num_classes=400)
VIT_L14 = ViTConfig(image_size=224, patch_size=14, depth=24, width=1024, heads=16, num_classes=400)
PRESETS = {"vit_b16": VIT_B16, "vit_l14": VIT_L14}


def vit_layer_macs(n_tokens: int, width: int, mlp_ratio: float) -> int:
    """MACs of one transformer block on one frame of ``n_tokens`` tokens (class token included)."""
    if n_tokens <= 0 or width <= 0 or mlp_ratio <= 0:
        raise ConfigError("vit_layer_macs needs positive arguments")
    hidden = int(round(width * mlp_ratio))
    # qkv (3) + output projection (1) + two MLP layers, then QK^T and AV.
    return 4 * n_tokens * width * width + 2 * n_tokens * width * hidden + 2 * n_tokens * n_tokens * width


def patch_embed_macs(cfg: ViTConfig) -> int:
    """MACs to embed the patches of one frame."""
    return cfg.num_patches * cfg.patch_size ** 2 * cfg.channels_in * cfg.width


def stage_overhead_macs(stage: StageConfig, cfg: ViTConfig, frames_in: int) -> int:
    """MACs of one compression stage entered with ``frames_in`` frames.

    Counted from the parameter shapes of the stage: projector matmuls, the
    depthwise convolutions and the weight head. Pair fusion and the temporal
    embedding add are elementwise and not counted.
    """
    t, s, n, c = frames_in, cfg.seq_len, cfg.num_patches, cfg.width
    pairs = t // 2
    if stage.kind == "linear_pool":
        return 0
    if stage.kind == "conv_pool":
        return pairs * s * 3 * c * c
    half = c // 2
    token = t * s * c * half
    cube = 27 * c * t * n
    frame = pairs * (2 * c * half + c * c)
    glob = 3 * c * (t + t // 2 + t // 4)
    if stage.head == "attention":
        head = pairs * s * 2 * (half + c)
    else:
        d_in = {"sep_token": 2 * c, "add_all": c, "cat_all": 4 * c}[stage.fusion]
        hidden = stage.head_hidden or c
        head = pairs * s * (d_in * hidden + hidden * 2)
    return token + cube + frame + glob + head


@dataclass
class CostReport:
    config: ViTConfig
    frames: int
    per_block: list[tuple[int, int, int]]          # (block index, frames processed, MACs)
    stage_overheads: list[tuple[str, int]]         # (stage label, MACs)
    patch_embed: int
    naive_total: int
    stages: tuple = field(default=())

    @property
    def total(self) -> int:
        return self.patch_embed + sum(m for _, _, m in self.per_block) + sum(m for _, m in self.stage_overheads)

    @property
    def reduction_vs_naive(self) -> float:
        return 100.0 * (1.0 - self.total / self.naive_total)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "frames": self.frames,
            "stages": [s.to_dict() for s in self.stages],
            "per_block": [{"block": b, "frames": f, "macs": m} for b, f, m in self.per_block],
            "stage_overheads": [{"stage": name, "macs": m} for name, m in self.stage_overheads],
            "patch_embed": self.patch_embed,
            "total": self.total,
            "total_gmacs": self.total / 1e9,
            "naive_total": self.naive_total,
            "reduction_vs_naive": self.reduction_vs_naive,
        }


def stage_label(i: int, stage: StageConfig) -> str:
    return f"{i}:{stage.kind}@{stage.insert_after_block}"


def schedule_macs(cfg: ViTConfig, frames: int, stages: Sequence[StageConfig] = ()) -> CostReport:
    """Bill every block at its live frame count and every stage at its entry count."""
    if frames <= 0:
        raise ConfigError(f"frames must be positive, got {frames}")
    stages = tuple(stages)
    counts = validate_schedule(cfg.depth, frames, stages)
    layer = vit_layer_macs(cfg.seq_len, cfg.width, cfg.mlp_ratio)
    per_frame_embed = patch_embed_macs(cfg)
    naive_total = frames * (per_frame_embed + cfg.depth * layer)

    overheads = []
    per_block = []
    t = frames
    pending = list(zip(range(len(stages)), stages, counts))
    for b in range(1, cfg.depth + 1):
        per_block.append((b, t, t * layer))
        while pending and pending[0][1].insert_after_block == b:
            i, st, t_in = pending.pop(0)
            overheads.append((stage_label(i, st), stage_overhead_macs(st, cfg, t_in)))
            t = t_in // 2
    return CostReport(cfg, frames, per_block, overheads, frames * per_frame_embed, naive_total, stages)


def reduction_percent(compressed: CostReport, naive: CostReport) -> float:
    """``100 * (1 - compressed.total / naive.total)`` for reports on the same backbone and clip length."""
    if compressed.config != naive.config or compressed.frames != naive.frames:
        raise ConfigError("reduction_percent needs reports for the same backbone config and frame count")
    return 100.0 * (1.0 - compressed.total / naive.total)


def inti_schedule(i: int, j: int, large: bool = False, **stage_kw) -> tuple[StageConfig, StageConfig]:
    """Two InTI stages named by (i, j); the 24-block backbone inserts after blocks 2i and 2j."""
    scale = 2 if large else 1
    return (StageConfig("inti", scale * i, **stage_kw), StageConfig("inti", scale * j, **stage_kw))


def table_rows(frames: int = 16, pairs=((3, 5), (5, 7), (7, 9))) -> list[dict]:
    """Naive and InTI rows for both presets: method, GMACs and reduction."""
    rows = []
    for name, cfg in PRESETS.items():
        large = cfg is VIT_L14
        naive = schedule_macs(cfg, frames)
        rows.append({"backbone": name, "method": "naive", "gmacs": naive.total / 1e9, "reduction": 0.0})
        for i, j in pairs:
            rep = schedule_macs(cfg, frames, inti_schedule(i, j, large))
            rows.append({"backbone": name, "method": f"inti_{i},{j}", "gmacs": rep.total / 1e9,
                         "reduction": reduction_percent(rep, naive)})
    return rows


def format_table(rows: Sequence[dict]) -> str:
    """Aligned plain-text table with Method, GFLOPs and reduction columns."""
    header = ("Backbone", "Method", "GFLOPs", "Reduction")
    body = [(r["backbone"], r["method"], f"{r['gmacs']:.1f}", f"{-r['reduction'] + 0.0:.1f}%") for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in body]
    return "\n".join(lines)


def report_table(report: CostReport) -> str:
    """One-row table for a single schedule next to its naive baseline."""
    rows = [
        {"backbone": "config", "method": "naive", "gmacs": report.naive_total / 1e9, "reduction": 0.0},
        {"backbone": "config", "method": "+".join(stage_label(i, s) for i, s in enumerate(report.stages)) or "naive",
         "gmacs": report.total / 1e9, "reduction": report.reduction_vs_naive},
    ]
    return format_table(rows)
