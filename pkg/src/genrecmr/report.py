"""Report rendering: weight-trajectory charts and reconstruction panels.

Every chart goes out twice: a matplotlib PNG for humans and a portable
graymap (PGM) rendering of the same canvas so the artifacts stay
viewable with zero-dependency tooling. Reconstruction panels show
zero-filled | reconstruction | ground truth | 5x error side by side for
each sampling trajectory.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np
import torch

from .dataset import load_dataset
from .gcmr import write_pgm
from .numerics import Rng
from .sampling import make_mask
from .trainer import load_checkpoint, reconstruct_sample


class ReportError(RuntimeError):
    pass


def _fig_to_luminance(fig) -> np.ndarray:
    """Rasterize a figure and collapse RGBA to a luminance image."""
    fig.canvas.draw()
    buf = np.asarray(fig.canvas.buffer_rgba(), dtype=np.float64)
    lum = 0.2126 * buf[..., 0] + 0.7152 * buf[..., 1] + 0.0722 * buf[..., 2]
    return lum / 255.0


def _save_fig(fig, out_base: Path) -> None:
    fig.savefig(out_base.with_suffix(".png"), dpi=110)
    write_pgm(out_base.with_suffix(".pgm"), _fig_to_luminance(fig), bits=8)
    plt.close(fig)


def read_loss_log(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"missing loss log: {path}")
    with path.open() as fh:
        reader = csv.DictReader(fh)
        cols = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, val in row.items():
                cols[name].append(float(val))
    if "step" not in cols or not cols["step"]:
        raise ReportError(f"loss log {path} is empty or malformed")
    return {k: np.asarray(v) for k, v in cols.items()}


def render_weight_trajectory(log: dict[str, np.ndarray], out_base: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for col, label in (("lambda1", "fidelity"), ("lambda2", "edge region"),
                       ("lambda3", "distribution alignment")):
        ax.plot(log["step"], log[col], label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss weight")
    ax.set_title("Dynamic loss-weight trajectory")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save_fig(fig, out_base)


def render_loss_curves(log: dict[str, np.ndarray], out_base: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for col, label in (("L_Fid", "fidelity"), ("L_EAR", "edge region"),
                       ("L_SDA", "distribution alignment"), ("L_GAN", "adversarial")):
        vals = log[col]
        if np.any(vals > 0):
            ax.semilogy(log["step"], np.maximum(vals, 1e-12), label=label)
        else:
            ax.plot(log["step"], vals, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss value")
    ax.set_title("Training loss components")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save_fig(fig, out_base)


def _panel_strip(images: list[np.ndarray], gap: int = 4) -> np.ndarray:
    h = images[0].shape[0]
    peak = max(float(img.max()) for img in images) or 1.0
    sep = np.full((h, gap), peak)
    parts: list[np.ndarray] = []
    for i, img in enumerate(images):
        if i:
            parts.append(sep)
        parts.append(img)
    return np.concatenate(parts, axis=1)


def render_recon_panel(rec: torch.Tensor, zf: torch.Tensor, gt: torch.Tensor,
                       out_base: Path, title: str) -> None:
    """Write one zero-filled | reconstruction | truth | 5x-error panel."""
    gt_np, zf_np, rec_np = (x.detach().numpy() for x in (gt, zf, rec))
    err = np.clip(5.0 * np.abs(rec_np - gt_np), 0.0, float(gt_np.max()))
    write_pgm(out_base.with_suffix(".pgm"),
              _panel_strip([zf_np, rec_np, gt_np, err]), bits=16)

    fig, axes = plt.subplots(1, 4, figsize=(10, 3))
    for ax, img, name in zip(axes, (zf_np, rec_np, gt_np, err),
                             ("zero-filled", "reconstruction", "ground truth",
                              "5x |error|")):
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=float(gt_np.max()))
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    _save_fig(fig, out_base)


def generate_report(run_dir: str | Path, out_dir: str | Path,
                    data: str | Path | None = None,
                    accel: int | None = None, seed: int = 0) -> list[Path]:
    """Produce all report artifacts for a completed training run.

    Needs the run's loss log and final checkpoint; the dataset location
    is taken from the run's ``run_info.txt`` unless given explicitly.
    Returns the list of files written.
    """
    run = Path(run_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    log = read_loss_log(run / "loss_log.csv")
    traj_csv = out / "lambda_trajectory.csv"
    traj_csv.write_text((run / "loss_log.csv").read_text())
    written.append(traj_csv)
    render_weight_trajectory(log, out / "lambda_trajectory")
    written += [out / "lambda_trajectory.png", out / "lambda_trajectory.pgm"]
    render_loss_curves(log, out / "loss_curves")
    written += [out / "loss_curves.png", out / "loss_curves.pgm"]

    ckpt_path = run / "ckpt_final.gckp"
    if not ckpt_path.is_file():
        raise ReportError(f"missing checkpoint: {ckpt_path}")
    if data is None:
        info = run / "run_info.txt"
        if info.is_file():
            for line in info.read_text().splitlines():
                key, _, val = line.partition("=")
                if key.strip() == "data":
                    data = val.strip()
    if data is None:
        raise ReportError("dataset location unknown; pass it explicitly or keep "
                          "run_info.txt next to the checkpoint")

    state = load_checkpoint(ckpt_path)
    dataset = load_dataset(data)
    if accel is None:
        accel = state.cfg.accelerations[-1]
    sample = (dataset.unseen_samples() or dataset.samples)[0]
    hdr = dataset.header
    kg = sample.tensor("kG", state.gen_cfg.dtype)
    for t_idx, traj in enumerate(("uniform", "gaussian", "radial")):
        mask = make_mask(traj, hdr.h, hdr.w, hdr.frames, accel,
                         acs_lines=state.gen_cfg.acs_lines,
                         rng=Rng(seed, ("report", t_idx, accel)))
        mask_vol = mask.volume(sample.frame, hdr.adjacent).to(state.gen_cfg.dtype)
        rec, zf, gt = reconstruct_sample(state.gen, kg, mask_vol)
        base = out / f"recon_{traj}"
        render_recon_panel(rec, zf, gt, base,
                           title=f"{traj} sampling, {accel}x acceleration")
        written += [base.with_suffix(".png"), base.with_suffix(".pgm")]
    return written
