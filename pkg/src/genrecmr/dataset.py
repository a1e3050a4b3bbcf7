"""Dataset directories: generation, manifest bookkeeping, loading.

A dataset is a directory of binary tensor files plus a plain-text
manifest with one record per line::

    relative/path.gcmr<TAB>role<TAB>domain_id<TAB>frame

Roles per sample: ``k0`` (masked adjacent k-space stack), ``kG`` (fully
sampled stack), ``mask`` (the applied sampling pattern per adjacent
frame), ``sens-truth`` (simulated coil profiles), ``gt-image`` (combined
complex ground truth for the central frame). ``header.txt`` carries the
generation parameters as ``key = value`` lines and ``samples.txt``
records which trajectory/acceleration produced each stored mask.

Everything is a pure function of (parameters, seed): regenerating with
the same arguments reproduces every file byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .gcmr import read_gcmr, write_gcmr
from .numerics import Rng
from .phantom import UNSEEN_DOMAIN_ID, DOMAIN_TABLE, make_dynamic_phantom, simulate_coils, to_kspace_dataset
from .sampling import Trajectory, make_mask

ROLES = ("k0", "kG", "mask", "sens-truth", "gt-image")
DEFAULT_ACCELS = (4, 8)
DEFAULT_TRAJECTORIES = (Trajectory.UNIFORM, Trajectory.GAUSSIAN, Trajectory.RADIAL)


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetHeader:
    h: int = 64
    w: int = 64
    frames: int = 8
    coils: int = 4
    domains: int = 5
    samples_per_domain: int = 8
    adjacent: int = 5
    acs_lines: int = 16
    seed: int = 0
    accels: tuple[int, ...] = DEFAULT_ACCELS
    trajectories: tuple[str, ...] = tuple(t.value for t in DEFAULT_TRAJECTORIES)

    def to_text(self) -> str:
        lines = []
        for name in ("h", "w", "frames", "coils", "domains", "samples_per_domain",
                     "adjacent", "acs_lines", "seed"):
            lines.append(f"{name} = {getattr(self, name)}")
        lines.append("accels = " + ",".join(str(a) for a in self.accels))
        lines.append("trajectories = " + ",".join(self.trajectories))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetHeader":
        kv: dict[str, str] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"bad header line: {raw!r}")
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        hdr = cls()
        for name in ("h", "w", "frames", "coils", "domains", "samples_per_domain",
                     "adjacent", "acs_lines", "seed"):
            if name in kv:
                setattr(hdr, name, int(kv[name]))
        if "accels" in kv:
            hdr.accels = tuple(int(a) for a in kv["accels"].split(",") if a)
        if "trajectories" in kv:
            hdr.trajectories = tuple(t for t in kv["trajectories"].split(",") if t)
        return hdr


@dataclass
class SampleRecord:
    """One training/eval sample and the files backing it."""

    root: Path
    domain_id: int
    frame: int
    seq_index: int
    files: dict[str, str] = field(default_factory=dict)
    trajectory: str = ""
    accel: int = 0

    def load(self, role: str) -> np.ndarray:
        if role not in self.files:
            raise DatasetError(f"sample has no {role!r} tensor")
        return read_gcmr(self.root / self.files[role])

    def tensor(self, role: str, dtype: torch.dtype | None = None) -> torch.Tensor:
        arr = torch.from_numpy(np.ascontiguousarray(self.load(role)))
        if dtype is not None:
            if arr.is_complex():
                dtype = torch.complex128 if dtype == torch.float64 else torch.complex64
            arr = arr.to(dtype)
        return arr


@dataclass
class Dataset:
    root: Path
    header: DatasetHeader
    samples: list[SampleRecord]

    def domains_present(self) -> list[int]:
        return sorted({s.domain_id for s in self.samples})

    def train_samples(self) -> list[SampleRecord]:
        return [s for s in self.samples if s.domain_id < self.header.domains]

    def unseen_samples(self) -> list[SampleRecord]:
        return [s for s in self.samples if s.domain_id >= self.header.domains]

    def by_domain(self, domain_id: int) -> list[SampleRecord]:
        return [s for s in self.samples if s.domain_id == domain_id]


def _sample_stem(domain_id: int, seq: int, frame: int) -> str:
    return f"d{domain_id}/s{seq:02d}f{frame:02d}"


def _role_file(stem: str, role: str) -> str:
    return f"{stem}_{role.replace('-', '_')}.gcmr"


def gen_dataset(out_dir: str | Path, header: DatasetHeader | None = None, **overrides) -> Dataset:
    """Generate a full dataset directory; returns the loaded view of it.

    Training domains are ``0..domains-1``; the held-out domain (table
    entry 5) is always generated alongside for generalization tests.
    """
    hdr = header or DatasetHeader()
    for key, val in overrides.items():
        if not hasattr(hdr, key):
            raise TypeError(f"unknown dataset parameter {key!r}")
        setattr(hdr, key, val)
    if hdr.domains < 1 or hdr.domains > UNSEEN_DOMAIN_ID:
        raise DatasetError(f"domains must be in [1, {UNSEEN_DOMAIN_ID}], got {hdr.domains}")
    if hdr.samples_per_domain < 1:
        raise DatasetError("samples_per_domain must be >= 1")
    if hdr.adjacent % 2 == 0 or hdr.adjacent < 1:
        raise DatasetError(f"adjacent must be odd and positive, got {hdr.adjacent}")
    if len(DOMAIN_TABLE) <= UNSEEN_DOMAIN_ID:
        raise DatasetError("domain table too small")

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    base_rng = Rng(hdr.seed)

    combos = [(traj, accel) for traj in hdr.trajectories for accel in hdr.accels]
    manifest_lines: list[str] = []
    sample_lines: list[str] = []
    domain_ids = list(range(hdr.domains)) + [UNSEEN_DOMAIN_ID]
    n_seqs = math.ceil(hdr.samples_per_domain / hdr.frames)

    for domain_id in domain_ids:
        (root / f"d{domain_id}").mkdir(exist_ok=True)
        sequences = {}
        for seq in range(n_seqs):
            rng = base_rng.split("phantom", domain_id, seq)
            phs = make_dynamic_phantom(hdr.h, hdr.w, hdr.frames, domain_id, rng)
            mc, profiles = simulate_coils(phs, hdr.coils, base_rng.split("coils", domain_id, seq))
            sequences[seq] = (phs, mc, profiles)
        for j in range(hdr.samples_per_domain):
            seq, frame = divmod(j, hdr.frames)
            phs, mc, profiles = sequences[seq]
            traj, accel = combos[j % len(combos)]
            mask = make_mask(traj, hdr.h, hdr.w, hdr.frames, accel,
                             acs_lines=hdr.acs_lines,
                             rng=base_rng.split("mask", domain_id, j))
            k0_all, kg_all = to_kspace_dataset(mc, mask, hdr.adjacent)
            mask_vol = mask.volume(frame, hdr.adjacent)[:, 0]  # (A, h, w)

            stem = _sample_stem(domain_id, seq, frame)
            tensors = {
                "k0": k0_all[frame].numpy().astype(np.complex64),
                "kG": kg_all[frame].numpy().astype(np.complex64),
                "mask": mask_vol.numpy().astype(np.float32),
                "sens-truth": profiles.maps.numpy().astype(np.complex64),
                "gt-image": phs.frames[frame].numpy().astype(np.complex64),
            }
            for role in ROLES:
                rel = _role_file(stem, role)
                write_gcmr(root / rel, tensors[role])
                manifest_lines.append(f"{rel}\t{role}\t{domain_id}\t{frame}")
            sample_lines.append(f"{stem}\t{domain_id}\t{seq}\t{frame}\t{traj}\t{accel}")

    (root / "header.txt").write_text(hdr.to_text())
    (root / "manifest.txt").write_text("\n".join(manifest_lines) + "\n")
    (root / "samples.txt").write_text(
        "# stem\tdomain\tseq\tframe\ttrajectory\taccel\n" + "\n".join(sample_lines) + "\n")
    return load_dataset(root)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DatasetError(f"no manifest.txt under {root}")
    header = DatasetHeader.from_text((root / "header.txt").read_text()) \
        if (root / "header.txt").is_file() else DatasetHeader()

    meta: dict[str, tuple[str, int]] = {}
    if (root / "samples.txt").is_file():
        for raw in (root / "samples.txt").read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            stem, _dom, _seq, _frame, traj, accel = line.split("\t")
            meta[stem] = (traj, int(accel))

    grouped: dict[str, SampleRecord] = {}
    for lineno, raw in enumerate((manifest.read_text()).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DatasetError(f"manifest line {lineno}: expected 4 fields, got {len(parts)}")
        rel, role, domain_s, frame_s = parts
        if role not in ROLES:
            raise DatasetError(f"manifest line {lineno}: unknown role {role!r}")
        suffix = "_" + role.replace("-", "_") + ".gcmr"
        if not rel.endswith(suffix):
            raise DatasetError(f"manifest line {lineno}: path {rel!r} does not match role {role!r}")
        stem = rel[: -len(suffix)]
        rec = grouped.get(stem)
        if rec is None:
            seq = int(stem.split("/s")[1][:2]) if "/s" in stem else 0
            traj, accel = meta.get(stem, ("", 0))
            rec = SampleRecord(root=root, domain_id=int(domain_s), frame=int(frame_s),
                               seq_index=seq, trajectory=traj, accel=accel)
            grouped[stem] = rec
        if rec.domain_id != int(domain_s) or rec.frame != int(frame_s):
            raise DatasetError(f"manifest line {lineno}: inconsistent sample metadata")
        rec.files[role] = rel

    samples = []
    for stem in sorted(grouped):
        rec = grouped[stem]
        missing = [r for r in ROLES if r not in rec.files]
        if missing:
            raise DatasetError(f"sample {stem}: missing roles {missing}")
        samples.append(rec)
    if not samples:
        raise DatasetError(f"empty dataset at {root}")
    return Dataset(root=root, header=header, samples=samples)
