"""Reproducible dataset generation and loading.

Seed splitting rule: frame ``k`` of scheme index ``s`` at SNR index ``i`` in
split ``p`` (0 = train, 1 = test) draws from
``numpy.random.default_rng(SeedSequence([seed, p, s, i, k]))``, consuming in
order the symbol indices, the fading draw (when enabled) and the noise. Every
frame is therefore independent of generation order, of the worker that
produced it and of the requested image modes.

On-disk layout of a dataset directory::

    manifest.json             config, config hash, counts, sha256 of every file
    {split}_frames.npy        complex64 (N, L) received frames
    {split}_labels.npy        uint8 (N,) scheme index
    {split}_channel.npy       float64 (N, 3): amplitude a, phase theta0, snr_db
    {split}_{mode}.f32        little-endian float32 (N, H, W) images
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..features import iq_grid, iq_images, polar_grid, polar_images, read_image_blob, write_image_blob
from ..modem import ChannelParams, apply_channel, generate_frame, sample_fading
from .config import ExperimentConfig

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def frame_rng(seed: int, split: int, scheme: int, snr_index: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, split, scheme, snr_index, k]))


def synthesize_frame(cfg: ExperimentConfig, split: int, scheme, snr_index: int, k: int):
    """One received frame plus its channel ground truth ``(a, theta0, snr_db)``."""
    rng = frame_rng(cfg.seed, split, int(scheme), snr_index, k)
    frame = generate_frame(scheme, cfg.frame_length, rng)
    snr = float(cfg.snrs[snr_index])
    if cfg.fading:
        params = sample_fading(cfg.fading_distribution, rng, snr_db=snr)
    else:
        params = ChannelParams(snr_db=snr)
    received = apply_channel(frame, params, rng)
    return received.samples, (params.amplitude, params.phase_offset, snr)


def synthesize_split(cfg: ExperimentConfig, split: str):
    p = SPLITS.index(split)
    per_class = cfg.train_per_class if split == "train" else cfg.test_per_class
    schemes = cfg.scheme_list
    n = len(schemes) * len(cfg.snrs) * per_class
    frames = np.empty((n, cfg.frame_length), dtype=np.complex64)
    labels = np.empty(n, dtype=np.uint8)
    channel = np.empty((n, 3), dtype=np.float64)
    row = 0
    for scheme in schemes:
        for i in range(len(cfg.snrs)):
            for k in range(per_class):
                frames[row], channel[row] = synthesize_frame(cfg, p, scheme, i, k)
                labels[row] = int(scheme)
                row += 1
    return frames, labels, channel


def image_spec(cfg: ExperimentConfig, mode: str):
    return polar_grid(cfg.polar_resolution) if mode == "polar" else iq_grid(cfg.iq_resolution)


def rasterize(frames: np.ndarray, mode: str, cfg: ExperimentConfig, chunk: int = 512) -> np.ndarray:
    spec = image_spec(cfg, mode)
    fn = polar_images if mode == "polar" else iq_images
    out = np.empty((len(frames), spec.rows, spec.cols), dtype=np.float32)
    for start in range(0, len(frames), chunk):
        y = np.asarray(frames[start : start + chunk], dtype=np.complex128)
        out[start : start + chunk] = fn(y, spec)
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def generate_dataset(cfg: ExperimentConfig, out_dir) -> "Dataset":
    """Generate and persist every split; a failed run leaves no partial directory behind."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir.parent))
    try:
        files = {}
        counts = {}
        for split in SPLITS:
            frames, labels, channel = synthesize_split(cfg, split)
            counts[split] = int(len(labels))
            np.save(tmp / f"{split}_frames.npy", frames)
            np.save(tmp / f"{split}_labels.npy", labels)
            np.save(tmp / f"{split}_channel.npy", channel)
            for mode in cfg.image_modes:
                write_image_blob(rasterize(frames, mode, cfg), tmp / f"{split}_{mode}.f32")
            del frames
            log.info("generated %s split: %d frames", split, counts[split])
        for name in sorted(os.listdir(tmp)):
            files[name] = _sha256(tmp / name)
        manifest = {
            "format": FORMAT_VERSION,
            "config_hash": cfg.data_hash(),
            "config": cfg.data_dict(),
            "seed_rule": "SeedSequence([seed, split, scheme, snr_index, k])",
            "counts": counts,
            "image_shapes": {m: list(image_spec(cfg, m).shape) for m in cfg.image_modes},
            "frames_sha256": {s: files[f"{s}_frames.npy"] for s in SPLITS},
            "files": files,
        }
        with open(tmp / MANIFEST, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return Dataset(out_dir)


@dataclass
class Split:
    frames: np.ndarray
    labels: np.ndarray
    channel: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def snr(self) -> np.ndarray:
        return self.channel[:, 2]


class Dataset:
    def __init__(self, path):
        self.path = Path(path)
        manifest = self.path / MANIFEST
        if not manifest.exists():
            raise DataError(f"no dataset at {self.path} (missing {MANIFEST}); run `polaramc gen-data` first")
        with open(manifest) as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("format") != FORMAT_VERSION:
            raise DataError(f"{manifest}: unsupported dataset format")

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]

    @property
    def snrs(self) -> list[float]:
        return self.manifest["config"]["snrs"]

    def check_config(self, cfg: ExperimentConfig) -> None:
        if cfg.data_hash() != self.config_hash:
            raise DataError(
                f"dataset at {self.path} was generated from a different config "
                f"(hash {self.config_hash[:12]} != {cfg.data_hash()[:12]}); regenerate with gen-data"
            )

    def verify_files(self) -> None:
        for name, digest in self.manifest["files"].items():
            if _sha256(self.path / name) != digest:
                raise DataError(f"{self.path / name}: checksum mismatch")

    def split(self, name: str) -> Split:
        return Split(
            np.load(self.path / f"{name}_frames.npy", mmap_mode="r"),
            np.load(self.path / f"{name}_labels.npy").astype(np.int64),
            np.load(self.path / f"{name}_channel.npy"),
        )

    def images(self, split: str, mode: str) -> np.ndarray:
        shapes = self.manifest["image_shapes"]
        if mode not in shapes:
            raise DataError(f"dataset at {self.path} has no {mode!r} images; add it to image_modes and regenerate")
        n = self.manifest["counts"][split]
        return read_image_blob(self.path / f"{split}_{mode}.f32", (n, *shapes[mode]))


def validation_split(n: int, fraction: float, seed: int):
    """Sorted (train, validation) index arrays carved from ``n`` training items."""
    n_val = int(math.floor(n * fraction + 0.5))
    perm = np.random.default_rng([seed, 99]).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
