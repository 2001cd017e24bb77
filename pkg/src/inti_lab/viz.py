"""Export per-frame cumulative fusion weights as grayscale maps and CSV."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .compress import WeightField
from .errors import ContractError


def cumulative_weights(fields: Sequence[WeightField], frames: int) -> np.ndarray:
    """Per source frame and token, the product of its alpha/beta chain.

    ``fields[k]`` holds stage k's weights for one clip, shaped ``[T_k/2, N+1]``.
    Returns ``[frames, N+1]``. Source frame ``f`` sits at index ``f >> k`` after
    k stages; it takes alpha when that index is even and beta when it is odd.
    """
    if not fields:
        raise ContractError("cumulative_weights needs at least one stage")
    tokens = fields[0].alpha.shape[-1]
    out = np.ones((frames, tokens))
    for k, w in enumerate(fields):
        alpha, beta = np.asarray(w.alpha.data), np.asarray(w.beta.data)
        for f in range(frames):
            idx = f >> k
            out[f] *= alpha[idx // 2] if idx % 2 == 0 else beta[idx // 2]
    return out


def output_frame(source: int, num_stages: int) -> int:
    return source >> num_stages


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit grayscale (P5)."""
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    """Binary 8-bit RGB (P6)."""
    img = np.asarray(image, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def to_bytes(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def weight_map(weights: np.ndarray, grid: int, patch_size: int) -> np.ndarray:
    """Spatial token weights ``[N]`` as a ``grid*patch_size`` square image in [0, 1]."""
    return np.kron(weights.reshape(grid, grid), np.ones((patch_size, patch_size)))


def reconstruct(clip: np.ndarray, cum: np.ndarray, num_stages: int, grid: int, patch_size: int) -> np.ndarray:
    """Apply each source frame's spatial weights to its raw pixels and sum per output frame."""
    frames = clip.shape[0]
    out = np.zeros((frames >> num_stages, *clip.shape[1:]))
    for f in range(frames):
        w = weight_map(cum[f, 1:], grid, patch_size)
        out[output_frame(f, num_stages)] += w[..., None] * clip[f]
    return out


def export_weight_heatmaps(model, clip: np.ndarray, out_dir) -> dict:
    """Run ``model`` on one clip ``[T, H, W, 3]`` and write maps, reconstructions and CSV.

    Raises ``ContractError`` unless every stage is a convex pair fusion and at
    least one of them is an InTI stage.
    """
    kinds = [getattr(s, "kind", None) for s in model.stages]
    if "inti" not in kinds:
        raise ContractError("weight heatmaps need a model with at least one InTI stage")
    if "conv_pool" in kinds:
        raise ContractError("conv_pool stages have no per-token fusion weights")
    clip = np.asarray(clip, dtype=np.float64)
    fields: list[WeightField] = []

    def grab(i, w):
        fields.append(WeightField(w.alpha.data[0], w.beta.data[0]))

    model(clip[None], on_weights=grab)
    cfg = model.cfg
    cum = cumulative_weights(fields, clip.shape[0])
    k = len(fields)
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    maps = []
    for f in range(clip.shape[0]):
        path = d / f"weights_frame{f:02d}.pgm"
        write_pgm(path, to_bytes(weight_map(cum[f, 1:], cfg.grid, cfg.patch_size)))
        maps.append(path)
    fused = reconstruct(clip, cum, k, cfg.grid, cfg.patch_size)
    recons = []
    for j, img in enumerate(fused):
        path = d / f"fused_frame{j:02d}.ppm"
        write_ppm(path, to_bytes(img))
        recons.append(path)
    csv_path = d / "weights.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "output_frame", "token", "row", "col", "weight"])
        for f in range(clip.shape[0]):
            o = output_frame(f, k)
            writer.writerow([f, o, 0, "cls", "cls", repr(float(cum[f, 0]))])
            for t in range(1, cum.shape[1]):
                r, c = divmod(t - 1, cfg.grid)
                writer.writerow([f, o, t, r, c, repr(float(cum[f, t]))])
    return {"maps": maps, "reconstructions": recons, "csv": csv_path, "weights": cum}
