"""Training procedure and evaluation harness.

One iteration processes one sample end to end: run the unrolled
generator, accumulate per-stage fidelity / edge-region / domain-
alignment losses, update the discriminator once per stage on
(truth, reconstruction) pairs, add the adversarial generator term on the
final image, push loss values into trailing histories, refresh the
loss weights from their coefficients of variation, and take one
clipped AdamW step on the generator (map refiner included).

All per-iteration randomness (sample order, trajectory, acceleration,
mask) is re-derived from (seed, epoch, iteration) rather than drawn from
mutable generator state, which is what makes checkpoint resume bitwise
identical to an uninterrupted run.
"""

from __future__ import annotations

import os
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .dataset import Dataset, load_dataset
from .diffnet import ParamSet, adamw_step, clip_grad_norm, lr_schedule
from .gcmr import read_checkpoint_file, write_checkpoint_file
from .losses import (LABEL_FAKE, LABEL_REAL, FeatureBank, bce_loss, ear_loss,
                     fidelity_loss, nmse, psnr, sda_loss, ssim)
from .mri import coil_combine
from .numerics import Rng, ifft2c
from .sampling import make_mask
from .unroll import (Generator, GeneratorConfig, PatchDiscriminator,
                     discriminator_forward, generator_forward)

LOSS_CSV_HEADER = "step,L_Fid,L_EAR,L_SDA,L_GAN,lambda1,lambda2,lambda3"
EVAL_CSV_HEADER = ("domain,trajectory,accel,count,"
                  "ssim_mean,ssim_std,psnr_mean,psnr_std,nmse_mean,nmse_std,"
                  "zf_ssim_mean,zf_ssim_std,zf_psnr_mean,zf_psnr_std,"
                  "zf_nmse_mean,zf_nmse_std")


@dataclass
class LossWeights:
    """Dynamic weights of the three generator loss components."""

    fid: float = 1.0
    ear: float = 1.0
    sda: float = 1.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.fid, self.ear, self.sda)

    @classmethod
    def uniform(cls, active: tuple[bool, bool, bool] = (True, True, True)) -> "LossWeights":
        n = sum(active)
        if n == 0:
            raise ValueError("at least one loss component must be active")
        vals = [3.0 / n if a else 0.0 for a in active]
        return cls(*vals)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch: int = 1
    accelerations: tuple[int, ...] = (8, 16, 24)
    trajectories: tuple[str, ...] = ("uniform", "gaussian", "radial")
    seed: int = 0
    lr: float = 0.002
    weight_decay: float = 0.1
    clip_norm: float = 0.1
    lr_step: int = 11
    lr_gamma: float = 0.1
    cov_window: int = 50
    cov_floor: float = 0.01
    sda_window: int = 4
    use_cov: bool = True
    use_ear: bool = True
    use_sda: bool = True
    adversarial: bool = True
    max_iterations: int | None = None
    eval_at_end: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch != 1:
            raise ValueError("only batch size 1 is supported")
        accels = tuple(int(a) for a in self.accelerations)
        if accels != tuple(sorted(accels)) or len(set(accels)) != len(accels):
            raise ValueError("accelerations must be strictly ascending")
        self.accelerations = accels
        self.trajectories = tuple(self.trajectories)
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def active_mask(self) -> tuple[bool, bool, bool]:
        return (True, self.use_ear, self.use_sda)


def _floor_renormalize(vals: np.ndarray, floor: float, total: float) -> np.ndarray:
    """Clamp entries up to ``floor`` and rescale the rest to keep the sum."""
    vals = vals.astype(np.float64).copy()
    fixed = np.zeros(len(vals), dtype=bool)
    for _ in range(len(vals)):
        free = ~fixed
        budget = total - floor * fixed.sum()
        s = vals[free].sum()
        vals[free] = budget / free.sum() if s <= 0 else vals[free] * (budget / s)
        below = free & (vals < floor)
        if not below.any():
            break
        vals[below] = floor
        fixed |= below
    return vals


def cov_update_weights(hist_fid: "deque | list", hist_ear: "deque | list",
                       hist_sda: "deque | list", window: int = 50,
                       floor: float = 0.01,
                       active: tuple[bool, bool, bool] = (True, True, True),
                       current: LossWeights | None = None) -> LossWeights:
    """Reweight loss components by their trailing coefficients of variation.

    c_v,i = std_i / mean_i over the last ``window`` recorded values
    (mean floored at 1e-8); weights are 3 * c_v,i / sum_j c_v,j over the
    active components, then floored and renormalized so they still sum
    to 3. With fewer than 2 values per active series the current weights
    are kept; all-zero variation falls back to uniform.
    """
    series = [np.asarray(list(h)[-window:], dtype=np.float64)
              for h in (hist_fid, hist_ear, hist_sda)]
    if any(a and len(s) < 2 for a, s in zip(active, series)):
        return current if current is not None else LossWeights.uniform(active)
    cv = np.zeros(3)
    for i, (a, s) in enumerate(zip(active, series)):
        if a:
            cv[i] = s.std(ddof=0) / max(float(s.mean()), 1e-8)
    idx = [i for i, a in enumerate(active) if a]
    total_cv = cv[idx].sum()
    if total_cv <= 0:
        return LossWeights.uniform(active)
    lam = np.zeros(3)
    lam[idx] = _floor_renormalize(3.0 * cv[idx] / total_cv, floor, 3.0)
    return LossWeights(*lam.tolist())


def curriculum_schedule(epoch: int, epochs: int,
                        accelerations: tuple[int, ...]) -> tuple[int, ...]:
    """Enabled acceleration factors for an epoch (easy-to-hard phases).

    The run is split into len(accelerations) equal phases; phase p
    enables the first p+1 factors.
    """
    if not 0 <= epoch:
        raise ValueError("epoch must be >= 0")
    n = len(accelerations)
    phase = min(n - 1, epoch * n // max(epochs, 1))
    return tuple(accelerations[: phase + 1])


@dataclass
class TrainState:
    cfg: TrainConfig
    gen_cfg: GeneratorConfig
    gen: Generator
    gen_pset: ParamSet
    disc: PatchDiscriminator
    disc_pset: ParamSet
    banks: FeatureBank
    weights: LossWeights
    hist_fid: deque = field(default_factory=lambda: deque(maxlen=50))
    hist_ear: deque = field(default_factory=lambda: deque(maxlen=50))
    hist_sda: deque = field(default_factory=lambda: deque(maxlen=50))
    epoch: int = 0
    iteration: int = 0
    global_step: int = 0
    out_dir: Path | None = None


def init_state(cfg: TrainConfig, gen_cfg: GeneratorConfig) -> TrainState:
    gen_cfg = replace(gen_cfg, dtype=cfg.torch_dtype)
    rng = Rng(cfg.seed, ("init",))
    gen = Generator(gen_cfg, rng.split("gen"))
    disc = PatchDiscriminator(rng.split("disc"), dtype=cfg.torch_dtype)
    window = cfg.cov_window
    return TrainState(
        cfg=cfg, gen_cfg=gen_cfg,
        gen=gen, gen_pset=ParamSet.from_module(gen),
        disc=disc, disc_pset=ParamSet.from_module(disc),
        banks=FeatureBank(window=cfg.sda_window),
        weights=LossWeights.uniform(cfg.active_mask()),
        hist_fid=deque(maxlen=window), hist_ear=deque(maxlen=window),
        hist_sda=deque(maxlen=window))


def _zero(dtype: torch.dtype) -> torch.Tensor:
    return torch.zeros((), dtype=dtype)


def train_iteration(state: TrainState, kg: torch.Tensor, mask_vol: torch.Tensor,
                    domain_id: int) -> dict:
    """One full optimization step on one sample; returns the loss record."""
    cfg = state.cfg
    rdtype = cfg.torch_dtype
    lr = lr_schedule(state.epoch, cfg.lr, cfg.lr_step, cfg.lr_gamma)
    if mask_vol.ndim == 3:
        mask_vol = mask_vol.unsqueeze(1)
    k0 = kg * mask_vol.to(kg.real.dtype)

    state.banks.detach_all()
    trace = generator_forward(k0, mask_vol, state.gen)
    sens = trace.sens
    central = state.gen_cfg.adjacent // 2
    kg_c = kg[central]
    with torch.no_grad():
        # fixed RSS targets: the reference and the conditioning image must
        # not depend on the estimated maps, or the map refiner can lower
        # the image losses by warping the gauge instead of recovering k
        gt_mag = ifft2c(kg_c).abs().pow(2).sum(dim=0).sqrt()
        cond_mag = ifft2c(k0[central]).abs().pow(2).sum(dim=0).sqrt()

    fid_total, ear_total, sda_total = _zero(rdtype), _zero(rdtype), _zero(rdtype)
    disc_losses: list[float] = []
    for t in range(state.gen_cfg.unrolls):
        k_c = trace.k_steps[t]
        rec_mag = coil_combine(ifft2c(k_c), sens).abs()
        fid_total = fid_total + fidelity_loss(k_c, kg_c, sens)
        if cfg.use_ear:
            ear_total = ear_total + ear_loss(rec_mag, gt_mag)
        state.banks.insert(t, domain_id, trace.z_steps[t])
        if cfg.use_sda:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sda_t, _pairs = sda_loss(state.banks)
            sda_total = sda_total + sda_t.to(rdtype)
        if cfg.adversarial:
            real_logits = discriminator_forward(gt_mag, cond_mag, state.disc)
            fake_logits = discriminator_forward(rec_mag.detach(), cond_mag, state.disc)
            d_loss = bce_loss(real_logits, LABEL_REAL) + bce_loss(fake_logits, LABEL_FAKE)
            state.disc_pset.zero_grad()
            d_loss.backward()
            clip_grad_norm(state.disc_pset, cfg.clip_norm)
            adamw_step(state.disc_pset, lr, weight_decay=cfg.weight_decay)
            disc_losses.append(float(d_loss.detach()))

    if cfg.adversarial:
        final_logits = discriminator_forward(trace.final_image.abs(), cond_mag, state.disc)
        gan_gen = bce_loss(final_logits, LABEL_REAL)
    else:
        gan_gen = _zero(rdtype)

    lam = state.weights
    total = (lam.fid * fid_total + lam.ear * ear_total + lam.sda * sda_total + gan_gen)
    fid_v, ear_v, sda_v, gan_v, total_v = (
        float(x.detach()) for x in (fid_total, ear_total, sda_total, gan_gen, total))
    if not np.isfinite(total_v):
        if state.out_dir is not None:
            save_checkpoint(state.out_dir / "nan_snapshot.gckp", state)
        raise FloatingPointError(
            f"non-finite loss at step {state.global_step + 1}: "
            f"fid={fid_v} ear={ear_v} sda={sda_v} gan={gan_v}")

    state.gen_pset.zero_grad()
    total.backward()

    state.hist_fid.append(fid_v)
    state.hist_ear.append(ear_v)
    state.hist_sda.append(sda_v)
    if cfg.use_cov:
        state.weights = cov_update_weights(
            state.hist_fid, state.hist_ear, state.hist_sda,
            window=cfg.cov_window, floor=cfg.cov_floor,
            active=cfg.active_mask(), current=state.weights)

    clip_grad_norm(state.gen_pset, cfg.clip_norm)
    adamw_step(state.gen_pset, lr, weight_decay=cfg.weight_decay)

    state.global_step += 1
    state.iteration += 1
    return {
        "step": state.global_step,
        "fid": fid_v, "ear": ear_v, "sda": sda_v, "gan": gan_v,
        "lambda1": lam.fid, "lambda2": lam.ear, "lambda3": lam.sda,
        "disc": float(np.mean(disc_losses)) if disc_losses else 0.0,
        "total": total_v,
    }


def record_csv_row(rec: dict) -> str:
    return (f"{rec['step']},{rec['fid']:.10g},{rec['ear']:.10g},"
            f"{rec['sda']:.10g},{rec['gan']:.10g},"
            f"{rec['lambda1']:.10g},{rec['lambda2']:.10g},{rec['lambda3']:.10g}")


@dataclass
class PreparedSample:
    kg: torch.Tensor
    frame: int
    domain: int


@dataclass
class PreparedData:
    h: int
    w: int
    frames: int
    adjacent: int
    by_domain: dict[int, list[PreparedSample]]


def prepare_samples(dataset: Dataset, dtype: torch.dtype) -> PreparedData:
    """Preload all training-domain k-space stacks as tensors."""
    hdr = dataset.header
    by_domain: dict[int, list[PreparedSample]] = {}
    for s in dataset.train_samples():
        kg = s.tensor("kG", dtype)
        by_domain.setdefault(s.domain_id, []).append(
            PreparedSample(kg=kg, frame=s.frame, domain=s.domain_id))
    if not by_domain:
        raise ValueError("dataset has no training samples")
    return PreparedData(h=hdr.h, w=hdr.w, frames=hdr.frames,
                        adjacent=hdr.adjacent, by_domain=by_domain)


def epoch_sample_order(prepared: PreparedData, seed: int, epoch: int) -> list[PreparedSample]:
    """Domain-interleaved deterministic shuffle for one epoch.

    Each domain's samples are permuted independently, then the domains
    are interleaved round-robin so consecutive iterations cycle through
    domains — this is what fills every (stage, domain) feature-bank cell
    quickly.
    """
    perms = {}
    for d in sorted(prepared.by_domain):
        idx = Rng(seed, ("order", epoch, d)).permutation(len(prepared.by_domain[d]))
        perms[d] = [prepared.by_domain[d][i] for i in idx]
    order: list[PreparedSample] = []
    longest = max(len(v) for v in perms.values())
    for i in range(longest):
        for d in sorted(perms):
            if i < len(perms[d]):
                order.append(perms[d][i])
    return order


def iterations_per_epoch(prepared: PreparedData) -> int:
    return sum(len(v) for v in prepared.by_domain.values())


def run_steps(state: TrainState, prepared: PreparedData,
              n_steps: int | None = None,
              on_record: Callable[[dict], None] | None = None,
              on_epoch_end: Callable[[TrainState], None] | None = None) -> int:
    """Advance training from the state's current position.

    Stops after ``n_steps`` iterations (if given), when
    cfg.max_iterations is reached, or when all epochs complete. Returns
    the number of iterations executed.
    """
    cfg = state.cfg
    done = 0
    while state.epoch < cfg.epochs:
        enabled = curriculum_schedule(state.epoch, cfg.epochs, cfg.accelerations)
        order = epoch_sample_order(prepared, cfg.seed, state.epoch)
        while state.iteration < len(order):
            if n_steps is not None and done >= n_steps:
                return done
            if cfg.max_iterations is not None and state.global_step >= cfg.max_iterations:
                return done
            epoch, it = state.epoch, state.iteration
            sample = order[it]
            traj = str(Rng(cfg.seed, ("traj", epoch, it)).choice(list(cfg.trajectories)))
            accel = int(Rng(cfg.seed, ("accel", epoch, it)).choice(list(enabled)))
            mask = make_mask(traj, prepared.h, prepared.w, prepared.frames, accel,
                             acs_lines=state.gen_cfg.acs_lines,
                             rng=Rng(cfg.seed, ("mask", epoch, it)))
            mask_vol = mask.volume(sample.frame, prepared.adjacent).to(cfg.torch_dtype)
            rec = train_iteration(state, sample.kg, mask_vol, sample.domain)
            if on_record is not None:
                on_record(rec)
            done += 1
        state.iteration = 0
        state.epoch += 1
        if on_epoch_end is not None:
            on_epoch_end(state)
    return done


@dataclass
class EvalRow:
    domain: int
    trajectory: str
    accel: int
    count: int
    ssim_mean: float
    ssim_std: float
    psnr_mean: float
    psnr_std: float
    nmse_mean: float
    nmse_std: float
    zf_ssim_mean: float
    zf_ssim_std: float
    zf_psnr_mean: float
    zf_psnr_std: float
    zf_nmse_mean: float
    zf_nmse_std: float

    def to_csv(self) -> str:
        vals = [self.domain, self.trajectory, self.accel, self.count,
                self.ssim_mean, self.ssim_std, self.psnr_mean, self.psnr_std,
                self.nmse_mean, self.nmse_std, self.zf_ssim_mean, self.zf_ssim_std,
                self.zf_psnr_mean, self.zf_psnr_std, self.zf_nmse_mean, self.zf_nmse_std]
        return ",".join(f"{v:.8g}" if isinstance(v, float) else str(v) for v in vals)


def reconstruct_sample(gen: Generator, kg: torch.Tensor, mask_vol: torch.Tensor
                       ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Reconstruct one masked sample; returns (rec, zero-filled, reference).

    Reference and zero-filled are root-sum-of-squares combinations of the
    fully sampled / masked coil images, so the baseline and the target are
    independent of the model's sensitivity estimates.  The network output
    is combined with unit-power estimated maps and therefore carries the
    same coil-power shading as the RSS images.
    """
    if mask_vol.ndim == 3:
        mask_vol = mask_vol.unsqueeze(1)
    k0 = kg * mask_vol.to(kg.real.dtype)
    with torch.no_grad():
        trace = generator_forward(k0, mask_vol, gen)
        central = kg.shape[0] // 2
        gt = ifft2c(kg[central]).abs().pow(2).sum(dim=0).sqrt()
        zf = ifft2c(k0[central]).abs().pow(2).sum(dim=0).sqrt()
        rec = trace.final_image.abs()
    return rec, zf, gt


def evaluate(dataset: Dataset, gen: Generator,
             trajectories: tuple[str, ...], accelerations: tuple[int, ...],
             seed: int = 0, split: str = "train",
             max_samples: int | None = None) -> list[EvalRow]:
    """Deterministic metric table per (domain, trajectory, acceleration)."""
    if split == "train":
        pool = dataset.train_samples()
    elif split == "unseen":
        pool = dataset.unseen_samples()
    elif split == "all":
        pool = list(dataset.samples)
    else:
        raise ValueError(f"unknown split {split!r}")
    if not pool:
        raise ValueError(f"no samples in split {split!r}")
    hdr = dataset.header
    dtype = gen.config.dtype
    rows: list[EvalRow] = []
    domains = sorted({s.domain_id for s in pool})
    for domain in domains:
        dom_samples = [s for s in pool if s.domain_id == domain]
        if max_samples is not None:
            dom_samples = dom_samples[:max_samples]
        for t_idx, traj in enumerate(trajectories):
            for accel in accelerations:
                metrics = {k: [] for k in ("ssim", "psnr", "nmse",
                                           "zf_ssim", "zf_psnr", "zf_nmse")}
                for i, s in enumerate(dom_samples):
                    kg = s.tensor("kG", dtype)
                    mask = make_mask(traj, hdr.h, hdr.w, hdr.frames, accel,
                                     acs_lines=gen.config.acs_lines,
                                     rng=Rng(seed, ("eval", domain, t_idx, accel, i)))
                    mask_vol = mask.volume(s.frame, hdr.adjacent).to(dtype)
                    rec, zf, gt = reconstruct_sample(gen, kg, mask_vol)
                    dr = float(gt.max() - gt.min())
                    dr = dr if dr > 0 else 1.0
                    metrics["ssim"].append(float(ssim(rec, gt, data_range=dr)))
                    metrics["psnr"].append(psnr(rec, gt))
                    metrics["nmse"].append(nmse(rec, gt))
                    metrics["zf_ssim"].append(float(ssim(zf, gt, data_range=dr)))
                    metrics["zf_psnr"].append(psnr(zf, gt))
                    metrics["zf_nmse"].append(nmse(zf, gt))
                stats = {}
                for key, vals in metrics.items():
                    arr = np.asarray(vals, dtype=np.float64)
                    stats[key] = (float(arr.mean()), float(arr.std(ddof=0)))
                rows.append(EvalRow(
                    domain=domain, trajectory=str(traj), accel=int(accel),
                    count=len(dom_samples),
                    ssim_mean=stats["ssim"][0], ssim_std=stats["ssim"][1],
                    psnr_mean=stats["psnr"][0], psnr_std=stats["psnr"][1],
                    nmse_mean=stats["nmse"][0], nmse_std=stats["nmse"][1],
                    zf_ssim_mean=stats["zf_ssim"][0], zf_ssim_std=stats["zf_ssim"][1],
                    zf_psnr_mean=stats["zf_psnr"][0], zf_psnr_std=stats["zf_psnr"][1],
                    zf_nmse_mean=stats["zf_nmse"][0], zf_nmse_std=stats["zf_nmse"][1]))
    return rows


def write_eval_csv(rows: list[EvalRow], path: str | Path) -> None:
    lines = [EVAL_CSV_HEADER] + [r.to_csv() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Checkpointing

def _gen_cfg_to_dict(cfg: GeneratorConfig) -> dict:
    return {"unrolls": cfg.unrolls, "base_channels": cfg.base_channels,
            "prompt_channels": cfg.prompt_channels, "adjacent": cfg.adjacent,
            "acs_lines": cfg.acs_lines, "coils": cfg.coils,
            "residual": cfg.residual, "sme_refine": cfg.sme_refine,
            "dtype": "float64" if cfg.dtype == torch.float64 else "float32"}


def _gen_cfg_from_dict(d: dict) -> GeneratorConfig:
    d = dict(d)
    d["dtype"] = torch.float64 if d.get("dtype", "float64") == "float64" else torch.float32
    return GeneratorConfig(**d)


def _train_cfg_to_dict(cfg: TrainConfig) -> dict:
    return {"epochs": cfg.epochs, "batch": cfg.batch,
            "accelerations": list(cfg.accelerations),
            "trajectories": list(cfg.trajectories), "seed": cfg.seed,
            "lr": cfg.lr, "weight_decay": cfg.weight_decay,
            "clip_norm": cfg.clip_norm, "lr_step": cfg.lr_step,
            "lr_gamma": cfg.lr_gamma, "cov_window": cfg.cov_window,
            "cov_floor": cfg.cov_floor, "sda_window": cfg.sda_window,
            "use_cov": cfg.use_cov, "use_ear": cfg.use_ear,
            "use_sda": cfg.use_sda, "adversarial": cfg.adversarial,
            "max_iterations": cfg.max_iterations,
            "eval_at_end": cfg.eval_at_end, "dtype": cfg.dtype}


def _train_cfg_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["accelerations"] = tuple(d.get("accelerations", (8, 16, 24)))
    d["trajectories"] = tuple(d.get("trajectories", ("uniform", "gaussian", "radial")))
    return TrainConfig(**d)


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    arrays: dict[str, np.ndarray] = {}
    for prefix, pset in (("gen", state.gen_pset), ("disc", state.disc_pset)):
        for name, p in pset.params.items():
            arrays[f"{prefix}/{name}"] = p.detach().numpy()
            arrays[f"{prefix}_m/{name}"] = pset.exp_avg[name].numpy()
            arrays[f"{prefix}_v/{name}"] = pset.exp_avg_sq[name].numpy()
    arrays.update(state.banks.export_arrays())
    arrays["hist/fid"] = np.asarray(list(state.hist_fid), dtype=np.float64)
    arrays["hist/ear"] = np.asarray(list(state.hist_ear), dtype=np.float64)
    arrays["hist/sda"] = np.asarray(list(state.hist_sda), dtype=np.float64)
    arrays["lambda"] = np.asarray(state.weights.as_tuple(), dtype=np.float64)
    meta = {"kind": "train-state",
            "epoch": state.epoch, "iteration": state.iteration,
            "global_step": state.global_step,
            "gen_steps": state.gen_pset.step_count,
            "disc_steps": state.disc_pset.step_count,
            "train_config": _train_cfg_to_dict(state.cfg),
            "gen_config": _gen_cfg_to_dict(state.gen_cfg)}
    write_checkpoint_file(path, arrays, meta)


def load_checkpoint(path: str | Path) -> TrainState:
    arrays, meta = read_checkpoint_file(path)
    if meta.get("kind") != "train-state":
        raise ValueError(f"not a training checkpoint: {path}")
    cfg = _train_cfg_from_dict(meta["train_config"])
    gen_cfg = _gen_cfg_from_dict(meta["gen_config"])
    state = init_state(cfg, gen_cfg)
    for prefix, pset in (("gen", state.gen_pset), ("disc", state.disc_pset)):
        want = {f"{prefix}/{n}" for n in pset.params}
        have = {k for k in arrays if k.startswith(f"{prefix}/")}
        if want != have:
            raise ValueError(f"checkpoint parameter names do not match the "
                             f"{prefix} model (missing {sorted(want - have)[:3]}, "
                             f"extra {sorted(have - want)[:3]})")
        with torch.no_grad():
            for name, p in pset.params.items():
                p.copy_(torch.as_tensor(arrays[f"{prefix}/{name}"].copy()))
                pset.exp_avg[name] = torch.as_tensor(arrays[f"{prefix}_m/{name}"].copy())
                pset.exp_avg_sq[name] = torch.as_tensor(arrays[f"{prefix}_v/{name}"].copy())
    state.gen_pset.step_count = int(meta["gen_steps"])
    state.disc_pset.step_count = int(meta["disc_steps"])
    state.banks = FeatureBank.from_arrays(arrays, cfg.sda_window, dtype=cfg.torch_dtype)
    state.hist_fid = deque(arrays["hist/fid"].tolist(), maxlen=cfg.cov_window)
    state.hist_ear = deque(arrays["hist/ear"].tolist(), maxlen=cfg.cov_window)
    state.hist_sda = deque(arrays["hist/sda"].tolist(), maxlen=cfg.cov_window)
    lam = arrays["lambda"]
    state.weights = LossWeights(float(lam[0]), float(lam[1]), float(lam[2]))
    state.epoch = int(meta["epoch"])
    state.iteration = int(meta["iteration"])
    state.global_step = int(meta["global_step"])
    return state


# --------------------------------------------------------------------------
# Full runs

def apply_thread_env() -> None:
    """Respect the GENRE_THREADS env var for reproducible CPU parallelism."""
    val = os.environ.get("GENRE_THREADS")
    if val:
        torch.set_num_threads(max(1, int(val)))


def _trim_csv(path: Path, keep_steps: int) -> None:
    """Drop rows beyond a resumed position so the log stays gapless."""
    if not path.is_file():
        return
    lines = path.read_text().splitlines()
    kept = [lines[0]] if lines else [LOSS_CSV_HEADER]
    for line in lines[1:]:
        try:
            step = int(line.split(",", 1)[0])
        except ValueError:
            continue
        if step <= keep_steps:
            kept.append(line)
    path.write_text("\n".join(kept) + "\n")


def train_run(data: "Dataset | str | Path", out_dir: str | Path,
              cfg: TrainConfig, gen_cfg: GeneratorConfig | None = None,
              resume: str | Path | None = None,
              progress: Callable[[str], None] | None = None) -> TrainState:
    """Train from scratch or resume; writes checkpoints, loss CSV, eval table."""
    apply_thread_env()
    dataset = data if isinstance(data, Dataset) else load_dataset(data)
    hdr = dataset.header
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_info.txt").write_text(f"data = {Path(dataset.root).resolve()}\n")

    if resume is not None:
        state = load_checkpoint(resume)
    else:
        if gen_cfg is None:
            gen_cfg = GeneratorConfig(adjacent=hdr.adjacent, coils=hdr.coils)
        state = init_state(cfg, gen_cfg)
    state.out_dir = out

    csv_path = out / "loss_log.csv"
    if resume is not None:
        _trim_csv(csv_path, state.global_step)
        if not csv_path.is_file():
            csv_path.write_text(LOSS_CSV_HEADER + "\n")
    else:
        csv_path.write_text(LOSS_CSV_HEADER + "\n")

    prepared = prepare_samples(dataset, state.cfg.torch_dtype)

    with csv_path.open("a") as csv_file:
        def on_record(rec: dict) -> None:
            csv_file.write(record_csv_row(rec) + "\n")
            if progress is not None and rec["step"] % 25 == 0:
                progress(f"step {rec['step']}: total={rec['total']:.4f} "
                         f"lam=({rec['lambda1']:.2f},{rec['lambda2']:.2f},"
                         f"{rec['lambda3']:.2f})")

        def on_epoch_end(st: TrainState) -> None:
            save_checkpoint(out / f"ckpt_epoch{st.epoch:03d}.gckp", st)
            if progress is not None:
                progress(f"epoch {st.epoch} done (step {st.global_step})")

        run_steps(state, prepared, on_record=on_record, on_epoch_end=on_epoch_end)

    save_checkpoint(out / "ckpt_final.gckp", state)
    if state.cfg.eval_at_end:
        rows = evaluate(dataset, state.gen, state.cfg.trajectories,
                        state.cfg.accelerations, seed=state.cfg.seed, split="train")
        write_eval_csv(rows, out / "eval_train.csv")
    return state


# --------------------------------------------------------------------------
# Ablation harness

ABLATION_VARIANTS = ("full", "no-ear", "no-sda", "no-residual")
ABLATION_CSV_HEADER = ("variant,seeds,ssim_mean,ssim_std,psnr_mean,psnr_std,"
                       "nmse_mean,nmse_std")


def variant_configs(variant: str, cfg: TrainConfig,
                    gen_cfg: GeneratorConfig) -> tuple[TrainConfig, GeneratorConfig]:
    """Switch off one mechanism; unknown names are rejected."""
    if variant == "full":
        return cfg, gen_cfg
    if variant == "no-ear":
        return replace(cfg, use_ear=False), gen_cfg
    if variant == "no-sda":
        return replace(cfg, use_sda=False), gen_cfg
    if variant == "no-residual":
        return cfg, replace(gen_cfg, residual=False)
    raise ValueError(f"unknown ablation variant {variant!r}")


def summarize_rows(rows: list[EvalRow]) -> dict[str, float]:
    """Collapse an evaluation table to overall means (cells weighted equally)."""
    out = {}
    for key in ("ssim_mean", "psnr_mean", "nmse_mean",
                "zf_ssim_mean", "zf_psnr_mean", "zf_nmse_mean"):
        out[key.replace("_mean", "")] = float(np.mean([getattr(r, key) for r in rows]))
    return out


def run_ablation(data: "Dataset | str | Path", out_dir: str | Path,
                 base_cfg: TrainConfig, base_gen_cfg: GeneratorConfig,
                 variants: tuple[str, ...] = ABLATION_VARIANTS,
                 seeds: tuple[int, ...] = (0, 1, 2),
                 progress: Callable[[str], None] | None = None) -> list[dict]:
    """Train every variant with shared seeds; score on the held-out domain.

    Writes per-run directories plus ``ablation.csv`` (one row per
    variant, mean and std over seeds, and a zero-filled baseline row
    taken from the full variant's runs).
    """
    dataset = data if isinstance(data, Dataset) else load_dataset(data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {v!r}")

    per_variant: dict[str, list[dict]] = {v: [] for v in variants}
    for variant in variants:
        for seed in seeds:
            cfg_v, gen_v = variant_configs(
                variant, replace(base_cfg, seed=int(seed), eval_at_end=False),
                base_gen_cfg)
            run_dir = out / f"{variant.replace('-', '_')}_seed{seed}"
            state = train_run(dataset, run_dir, cfg_v, gen_cfg=gen_v)
            rows = evaluate(dataset, state.gen, cfg_v.trajectories,
                            cfg_v.accelerations, seed=cfg_v.seed, split="unseen")
            write_eval_csv(rows, run_dir / "eval_unseen.csv")
            per_variant[variant].append(summarize_rows(rows))
            if progress is not None:
                progress(f"{variant} seed {seed}: "
                         f"unseen ssim={per_variant[variant][-1]['ssim']:.4f}")

    table: list[dict] = []
    for variant in variants:
        runs = per_variant[variant]
        row = {"variant": variant, "seeds": len(runs)}
        for metric in ("ssim", "psnr", "nmse"):
            vals = np.asarray([r[metric] for r in runs])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_std"] = float(vals.std(ddof=0))
        table.append(row)
    if "full" in variants:
        runs = per_variant["full"]
        row = {"variant": "zero-filled", "seeds": len(runs)}
        for metric in ("ssim", "psnr", "nmse"):
            vals = np.asarray([r[f"zf_{metric}"] for r in runs])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_std"] = float(vals.std(ddof=0))
        table.append(row)

    lines = [ABLATION_CSV_HEADER]
    for row in table:
        lines.append(",".join([row["variant"], str(row["seeds"])] +
                              [f"{row[k]:.8g}" for k in
                               ("ssim_mean", "ssim_std", "psnr_mean", "psnr_std",
                                "nmse_mean", "nmse_std")]))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return table
