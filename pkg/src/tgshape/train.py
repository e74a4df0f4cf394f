"""Training pipeline: model bundle, four stages, and stage reports.

Stage order: ae (encoder + plain decoders), text (text encoder + spatial
decoders + attention, end to end), imle (generator alone), manipulation
(generator alone with the two-way cyclic term). Later stages restore the
previous stage's final checkpoint and freeze everything but their own
trainable group.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (NumericError, Tensor, concat_cols, concat_rows, l2_loss,
                       no_grad, slice_cols, transpose, trilinear_upsample)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Profile, save_config
from .corpus import Attributes, CorpusRecord, load_manifest
from .losses import (loss_ae, loss_cyc, loss_imle, loss_reg, manipulation_gate,
                     voxel_iou)
from .models import (DecoupledDecoder, ShapeEncoder, SpatialDecoder,
                     StyleGenerator, WLST, generate_feature_set, sample_noise,
                     tile_rows)
from .optim import Adam
from .text import TextEncoder, Vocab, tokenize
from .voxels import (SampleBatch, VoxelShape, downsample_majority, grid_sample,
                     load_voxels, surface_biased_sample)

STAGES = ("ae", "text", "imle", "manipulation")
_STAGE_IDX = {name: i + 1 for i, name in enumerate(STAGES)}
PREREQUISITE = {"ae": None, "text": "ae", "imle": "text", "manipulation": "imle"}

GROUP_PREFIXES = {
    "E": "E.", "Ds": "Ds.", "Dc": "Dc.", "B": "B.", "Dps": "Dps.",
    "Dpc": "Dpc.", "WLSTs": "WLSTs.", "WLSTc": "WLSTc.", "G": "G.",
}
STAGE_SAVED_GROUPS = {
    "ae": ["E", "Ds", "Dc"],
    "text": ["E", "Ds", "Dc", "B", "Dps", "Dpc", "WLSTs", "WLSTc"],
    "imle": ["E", "Ds", "Dc", "B", "Dps", "Dpc", "WLSTs", "WLSTc", "G"],
    "manipulation": ["E", "Ds", "Dc", "B", "Dps", "Dpc", "WLSTs", "WLSTc", "G"],
}
STAGE_TRAINED_GROUPS = {
    "ae": ["E", "Ds", "Dc"],
    "text": ["E", "B", "Dps", "Dpc", "WLSTs", "WLSTc"],
    "imle": ["G"],
    "manipulation": ["G"],
}


def grid_points_c(r: int) -> np.ndarray:
    """Cell centers in z-fastest order: a C-order reshape of the flat batch
    recovers an [x, y, z]-indexed grid."""
    c = (np.arange(r) + 0.5) / r - 0.5
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([x.reshape(-1), y.reshape(-1), z.reshape(-1)], axis=1)


def param_checksum(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, dtype=np.float32).tobytes())
    return h.hexdigest()[:16]


class Pipeline:
    """All networks of one run, built deterministically from a profile."""

    def __init__(self, profile: Profile, vocab: Vocab):
        self.profile = profile
        self.vocab = vocab
        self.dtype = np.float32 if profile.dtype == "float32" else np.float64
        p = profile

        def rng(tag: int) -> np.random.Generator:
            return np.random.default_rng(np.random.SeedSequence((p.seed, 999, tag)))

        self.enc = ShapeEncoder(rng(1), p.resolution, p.d, p.enc_base, dtype=self.dtype)
        self.dec = DecoupledDecoder(rng(2), p.d, p.decoder_widths, dtype=self.dtype)
        self.sdec = SpatialDecoder(rng(3), p.d, p.d_l, p.decoder_widths, dtype=self.dtype)
        self.wlst_s = WLST(rng(4), p.d + 3, p.d_b // 2, p.d_l, dtype=self.dtype)
        self.wlst_c = WLST(rng(5), p.d + 3, p.d_b // 2, p.d_l, dtype=self.dtype)
        self.text = TextEncoder(rng(6), len(vocab), p.d, p.d_b, p.text_layers,
                                p.text_heads, p.text_ff, p.max_len, dtype=self.dtype)
        self.gen = StyleGenerator(rng(7), p.d, p.d_z, p.g_width, p.g_map_width,
                                  dtype=self.dtype)

    # -- parameter bookkeeping ----------------------------------------------

    def all_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.enc.params("E"))
        out.update(self.dec.params())
        out.update(self.sdec.params())
        out.update(self.wlst_s.params("WLSTs"))
        out.update(self.wlst_c.params("WLSTc"))
        out.update(self.text.params("B"))
        out.update(self.gen.params("G"))
        return out

    def group_params(self, groups: list[str]) -> dict[str, Tensor]:
        prefixes = tuple(GROUP_PREFIXES[g] for g in groups)
        return {k: v for k, v in self.all_params().items() if k.startswith(prefixes)}

    def freeze_all_except(self, groups: list[str]) -> None:
        keep = tuple(GROUP_PREFIXES[g] for g in groups)
        for name, p in self.all_params().items():
            p.requires_grad = name.startswith(keep)

    def save(self, path: str | Path, groups: list[str]) -> None:
        save_checkpoint(path, self.group_params(groups))

    def load(self, path: str | Path) -> list[str]:
        """Restore every stored tensor that matches a current parameter.

        Returns the group names found in the file. Unknown names error;
        parameters absent from the file keep their initialization.
        """
        loaded = load_checkpoint(path)
        params = self.all_params()
        for name, arr in loaded.items():
            if name not in params:
                raise CheckpointError(f"checkpoint holds unknown parameter '{name}'")
            if arr.shape != params[name].data.shape:
                raise CheckpointError(
                    f"shape mismatch for '{name}': {arr.shape} vs {params[name].data.shape}")
            params[name].data = arr.astype(self.dtype)
        found = {g for g, pref in GROUP_PREFIXES.items()
                 if any(n.startswith(pref) for n in loaded)}
        return sorted(found)

    # -- forward helpers -----------------------------------------------------

    def encode_shape(self, shape: VoxelShape) -> tuple[Tensor, Tensor]:
        return self.enc(shape)

    def text_features(self, caption: str) -> tuple[Tensor, Tensor, Tensor]:
        seq = tokenize(caption, self.vocab, self.profile.max_len)
        return self.text.encode(seq)

    def local_features(self, f_spatial_s: Tensor, f_spatial_c: Tensor,
                       words: Tensor, pts: np.ndarray):
        """WLST features for both branches at the given points.

        Each branch queries attention with its own latent half, keeping the
        occupancy path free of f_c and the color path free of f_s.
        """
        n = pts.shape[0]
        p = Tensor(pts.astype(self.dtype))
        ws, wc = self.text.word_halves(words)
        loc_s, a_s, r_s = self.wlst_s(ws, concat_cols([tile_rows(f_spatial_s, n), p]))
        loc_c, a_c, r_c = self.wlst_c(wc, concat_cols([tile_rows(f_spatial_c, n), p]))
        return loc_s, r_s, loc_c, a_s, a_c

    def spatial_decode(self, f_dec_s: Tensor, f_dec_c: Tensor, f_spatial_s: Tensor,
                       f_spatial_c: Tensor, words: Tensor,
                       pts: np.ndarray) -> tuple[Tensor, Tensor]:
        loc_s, r_s, loc_c, _, _ = self.local_features(f_spatial_s, f_spatial_c,
                                                      words, pts)
        occ = self.sdec.occupancy(f_dec_s, pts, loc_s, r_s)
        rgb = self.sdec.color(f_dec_c, pts, loc_c)
        return occ, rgb

    def cyc_features(self, f_dec_s: Tensor, f_dec_c: Tensor, f_spatial_s: Tensor,
                     f_spatial_c: Tensor, words: Tensor) -> tuple[Tensor, Tensor]:
        """Decode a low-res grid, re-encode it, return the re-encoded features.

        The grid keeps raw occupancy values (no threshold) so the path stays
        differentiable; colors are gated by the predicted occupancy.
        """
        r = self.profile.cyc_res
        pts = grid_points_c(r)
        occ, rgb = self.spatial_decode(f_dec_s, f_dec_c, f_spatial_s, f_spatial_c,
                                       words, pts)
        occ3 = concat_cols([occ, occ, occ])
        rgb_masked = rgb * occ3
        rows = [transpose(occ)] + [transpose(slice_cols(rgb_masked, k, k + 1))
                                   for k in range(3)]
        grid = concat_rows(rows).reshape(4, r, r, r)
        up = trilinear_upsample(grid, self.profile.resolution)
        return self.enc.encode_grid(up)


# -- corpus bookkeeping ------------------------------------------------------


@dataclass
class ShapeEntry:
    path: str
    captions: list[str]
    attributes: Attributes | None


def group_records(records: list[CorpusRecord]) -> list[ShapeEntry]:
    by_path: dict[str, ShapeEntry] = {}
    for rec in records:
        entry = by_path.setdefault(rec.voxel_path,
                                   ShapeEntry(rec.voxel_path, [], rec.attributes))
        entry.captions.append(rec.caption)
    return list(by_path.values())


def train_val_split(entries: list[ShapeEntry]) -> tuple[list[ShapeEntry], list[ShapeEntry]]:
    """Deterministic 90/10 split by position (every tenth shape validates)."""
    train, val = [], []
    for i, e in enumerate(sorted(entries, key=lambda e: e.path)):
        (val if i % 10 == 9 else train).append(e)
    if not train:  # tiny corpora train on everything
        train = val
    return train, val or train[:1]


class ShapeCache:
    def __init__(self):
        self._full: dict[str, VoxelShape] = {}
        self._down: dict[tuple[str, int], VoxelShape] = {}

    def full(self, path: str) -> VoxelShape:
        if path not in self._full:
            self._full[path] = load_voxels(path)
        return self._full[path]

    def at_res(self, path: str, r: int) -> VoxelShape:
        shape = self.full(path)
        if r == shape.resolution:
            return shape
        key = (path, r)
        if key not in self._down:
            self._down[key] = downsample_majority(shape, r)
        return self._down[key]


def apply_caption_dropout(caption: str, attrs: Attributes | None,
                          rng: np.random.Generator, p_color: float,
                          p_full: float) -> str:
    """Deterministic augmentation putting under-specified captions in distribution."""
    if attrs is None:
        return caption
    u = rng.random()
    if u < p_full:
        return f"a {attrs.category}"
    if u < p_full + p_color:
        words = [w for w in caption.split() if w != attrs.primary_color]
        if words:
            return " ".join(words)
    return caption


def sample_points(shape: VoxelShape, res: int, n_points: int,
                  surface_fraction: float, seed: int, cache: ShapeCache,
                  path: str) -> SampleBatch:
    target = cache.at_res(path, res) if path else shape
    if res ** 3 <= n_points:
        return grid_sample(target, res)
    return surface_biased_sample(target, n_points, surface_fraction, rng_seed=seed)


# -- stage reports -----------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    losses: dict[str, float]
    seconds: float


@dataclass
class StageReport:
    stage: str
    config_fingerprint: str
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str = ""
    frozen_checksums: dict[str, dict[str, str]] = field(default_factory=dict)

    def loss_curve(self, key: str) -> list[float]:
        return [e.losses[key] for e in self.epochs if key in e.losses]


def write_report(report: StageReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"stage": report.stage,
                             "config_fingerprint": report.config_fingerprint}) + "\n")
        for e in report.epochs:
            fh.write(json.dumps({"epoch": e.epoch, "losses": e.losses,
                                 "seconds": round(e.seconds, 3)}) + "\n")
        fh.write(json.dumps({"checkpoint": report.checkpoint_path,
                             "frozen_checksums": report.frozen_checksums}) + "\n")


def load_report(path: str | Path) -> StageReport:
    lines = [json.loads(l) for l in Path(path).read_text(encoding="utf-8").splitlines() if l]
    head, tail = lines[0], lines[-1]
    report = StageReport(head["stage"], head["config_fingerprint"])
    for row in lines[1:-1]:
        report.epochs.append(EpochStats(row["epoch"], row["losses"], row["seconds"]))
    report.checkpoint_path = tail.get("checkpoint", "")
    report.frozen_checksums = tail.get("frozen_checksums", {})
    return report


def find_latest_checkpoint(out_dir: str | Path, stage: str) -> Path | None:
    best, best_epoch = None, -1
    for p in Path(out_dir).glob(f"{stage}-*.impw"):
        m = re.fullmatch(rf"{stage}-(\d+)\.impw", p.name)
        if m and int(m.group(1)) > best_epoch:
            best, best_epoch = p, int(m.group(1))
    return best


def _step_rng(seed: int, stage: str, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, _STAGE_IDX[stage], epoch, step)))


def _check_finite(name: str, value: float) -> float:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {name} loss: {value}")
    return float(value)


# -- the four stages ---------------------------------------------------------


def _prepare(stage: str, profile: Profile, corpus_dir: str | Path,
             out_dir: str | Path) -> tuple[Pipeline, list[ShapeEntry], list[ShapeEntry], Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(profile, out / "config.ini")
    records = load_manifest(Path(corpus_dir) / "manifest.jsonl")
    vocab = Vocab.from_captions([r.caption for r in records]
                                + [f"a {c}" for c in ("chair", "table")])
    vocab.save(out / "vocab.txt")
    pipe = Pipeline(profile, vocab)
    prereq = PREREQUISITE[stage]
    if prereq is not None:
        ckpt = find_latest_checkpoint(out, prereq)
        if ckpt is None:
            raise FileNotFoundError(
                f"stage '{stage}' needs a '{prereq}' checkpoint in {out}")
        pipe.load(ckpt)
    entries = group_records(records)
    train, val = train_val_split(entries)
    return pipe, train, val, out


def run_stage(stage: str, profile: Profile, corpus_dir: str | Path,
              out_dir: str | Path) -> StageReport:
    if stage not in STAGES:
        raise ValueError(f"unknown stage '{stage}'")
    runner = {"ae": _run_ae, "text": _run_text, "imle": _run_imle,
              "manipulation": _run_manipulation}[stage]
    report = runner(profile, corpus_dir, out_dir)
    write_report(report, Path(out_dir) / f"{stage}-report.jsonl")
    return report


def _save_epoch_checkpoint(pipe: Pipeline, out: Path, stage: str, epoch: int,
                           total: int) -> str:
    every = pipe.profile.checkpoint_every
    if epoch == total or (every > 0 and epoch % every == 0):
        path = out / f"{stage}-{epoch}.impw"
        pipe.save(path, STAGE_SAVED_GROUPS[stage])
        return str(path)
    return ""


def cosine_lr(base: float, epoch: int, total: int) -> float:
    """Cosine decay from base at epoch 1 to base/10 at the final epoch."""
    t = (epoch - 1) / max(total - 1, 1)
    floor = base * 0.1
    return floor + (base - floor) * 0.5 * (1.0 + math.cos(math.pi * t))


def _run_ae(profile: Profile, corpus_dir, out_dir) -> StageReport:
    # reconstruction pretraining uses every shape; the held-out slice only
    # matters for the caption stages
    pipe, train, val, out = _prepare("ae", profile, corpus_dir, out_dir)
    seen = {e.path for e in train}
    train = train + [e for e in val if e.path not in seen]
    pipe.freeze_all_except(STAGE_TRAINED_GROUPS["ae"])
    opt = Adam(pipe.group_params(STAGE_TRAINED_GROUPS["ae"]), lr=profile.ae_lr)
    cache = ShapeCache()
    report = StageReport("ae", profile.fingerprint())
    total = profile.ae_epochs1 + profile.ae_epochs2
    for epoch in range(1, total + 1):
        res = profile.ae_res1 if epoch <= profile.ae_epochs1 else profile.ae_res2
        opt.lr = cosine_lr(profile.ae_lr, epoch, total)
        t0 = time.perf_counter()
        order = _step_rng(profile.seed, "ae", epoch, 0).permutation(len(train))
        acc = 0.0
        for step, idx in enumerate(order):
            entry = train[idx]
            shape = cache.full(entry.path)
            for sub in range(profile.ae_batches):
                rng = _step_rng(profile.seed, "ae", epoch,
                                step * profile.ae_batches + sub + 1)
                batch = sample_points(shape, res, profile.n_points,
                                      profile.surface_fraction,
                                      int(rng.integers(2 ** 31)), cache, entry.path)
                f_s, f_c = pipe.encode_shape(shape)
                occ = pipe.dec.occupancy(f_s, batch.points)
                rgb = pipe.dec.color(f_c, batch.points)
                loss = loss_ae(occ, rgb, batch, profile.lambda_s, profile.lambda_c)
                opt.zero_grad()
                loss.backward()
                opt.step()
                acc += loss.item()
        steps_done = max(len(train) * profile.ae_batches, 1)
        stats = {"ae": _check_finite("ae", acc / steps_done), "res": float(res)}
        ckpt = _save_epoch_checkpoint(pipe, out, "ae", epoch, total)
        report.epochs.append(EpochStats(epoch, stats, time.perf_counter() - t0))
        if ckpt:
            report.checkpoint_path = ckpt
    return report


def _regression_gap(pipe: Pipeline, entries: list[ShapeEntry], cache: ShapeCache) -> float:
    """Mean squared distance between text features and encoder features."""
    gaps = []
    with no_grad():
        for entry in entries:
            f_s, f_c = pipe.encode_shape(cache.full(entry.path))
            _, fb_s, fb_c = pipe.text_features(entry.captions[0])
            gaps.append(float(((fb_s.data - f_s.data) ** 2).sum()
                              + ((fb_c.data - f_c.data) ** 2).sum()))
    return float(np.mean(gaps))


def _run_text(profile: Profile, corpus_dir, out_dir) -> StageReport:
    pipe, train, val, out = _prepare("text", profile, corpus_dir, out_dir)
    pipe.freeze_all_except(STAGE_TRAINED_GROUPS["text"])
    opt = Adam(pipe.group_params(STAGE_TRAINED_GROUPS["text"]), lr=profile.text_lr)
    cache = ShapeCache()
    report = StageReport("text", profile.fingerprint())
    report.epochs.append(EpochStats(0, {"val_reg": _regression_gap(pipe, val, cache)}, 0.0))
    total = profile.text_epochs1 + profile.text_epochs2
    for epoch in range(1, total + 1):
        res = profile.text_res1 if epoch <= profile.text_epochs1 else profile.text_res2
        t0 = time.perf_counter()
        order = _step_rng(profile.seed, "text", epoch, 0).permutation(len(train))
        acc = {"ae_prime": 0.0, "reg": 0.0, "cyc": 0.0}
        for step, idx in enumerate(order):
            entry = train[idx]
            shape = cache.full(entry.path)
            rng = _step_rng(profile.seed, "text", epoch, step + 1)
            caption = entry.captions[int(rng.integers(len(entry.captions)))]
            caption = apply_caption_dropout(caption, entry.attributes, rng,
                                            profile.caption_drop_color,
                                            profile.caption_drop_full)
            batch = sample_points(shape, res, profile.n_points,
                                  profile.surface_fraction,
                                  int(rng.integers(2 ** 31)), cache, entry.path)
            f_s, f_c = pipe.encode_shape(shape)
            words, fb_s, fb_c = pipe.text_features(caption)
            occ, rgb = pipe.spatial_decode(f_s, f_c, fb_s, fb_c, words, batch.points)
            l_ae = loss_ae(occ, rgb, batch, profile.lambda_s, profile.lambda_c)
            l_reg = loss_reg(fb_s, fb_c, f_s, f_c, profile.lambda_r)
            fcyc_s, fcyc_c = pipe.cyc_features(f_s, f_c, fb_s, fb_c, words)
            l_cyc = loss_cyc(fcyc_s, fcyc_c, f_s, f_c, profile.lambda_cyc)
            loss = l_ae + l_reg + l_cyc
            opt.zero_grad()
            loss.backward()
            opt.step()
            acc["ae_prime"] += l_ae.item()
            acc["reg"] += l_reg.item()
            acc["cyc"] += l_cyc.item()
        n = max(len(train), 1)
        stats = {k: _check_finite(k, v / n) for k, v in acc.items()}
        stats["res"] = float(res)
        stats["val_reg"] = _check_finite("val_reg", _regression_gap(pipe, val, cache))
        ckpt = _save_epoch_checkpoint(pipe, out, "text", epoch, total)
        report.epochs.append(EpochStats(epoch, stats, time.perf_counter() - t0))
        if ckpt:
            report.checkpoint_path = ckpt
    return report


FROZEN_GROUPS = {
    "E": ["E"], "B": ["B"],
    "Dprime": ["Dps", "Dpc", "WLSTs", "WLSTc"],
}


def _frozen_checksums(pipe: Pipeline) -> dict[str, str]:
    return {name: param_checksum(pipe.group_params(groups))
            for name, groups in FROZEN_GROUPS.items()}


def _run_imle(profile: Profile, corpus_dir, out_dir) -> StageReport:
    pipe, train, _, out = _prepare("imle", profile, corpus_dir, out_dir)
    pipe.freeze_all_except(STAGE_TRAINED_GROUPS["imle"])
    opt = Adam(pipe.group_params(["G"]), lr=profile.imle_lr)
    cache = ShapeCache()
    report = StageReport("imle", profile.fingerprint())
    report.frozen_checksums["start"] = _frozen_checksums(pipe)
    for epoch in range(1, profile.imle_epochs + 1):
        t0 = time.perf_counter()
        order = _step_rng(profile.seed, "imle", epoch, 0).permutation(len(train))
        acc = 0.0
        for step, idx in enumerate(order):
            entry = train[idx]
            rng = _step_rng(profile.seed, "imle", epoch, step + 1)
            caption = entry.captions[int(rng.integers(len(entry.captions)))]
            caption = apply_caption_dropout(caption, entry.attributes, rng,
                                            profile.caption_drop_color,
                                            profile.caption_drop_full)
            with no_grad():
                f_s, f_c = pipe.encode_shape(cache.full(entry.path))
                _, fb_s, fb_c = pipe.text_features(caption)
            f_bar = Tensor(np.concatenate([fb_s.data, fb_c.data], axis=1))
            feats, _ = generate_feature_set(pipe.gen, f_bar, profile.m,
                                            int(rng.integers(2 ** 31)))
            loss, _ = loss_imle(feats, f_s, f_c)
            opt.zero_grad()
            loss.backward()
            opt.step()
            acc += loss.item()
        stats = {"imle": _check_finite("imle", acc / max(len(train), 1))}
        ckpt = _save_epoch_checkpoint(pipe, out, "imle", epoch, profile.imle_epochs)
        report.epochs.append(EpochStats(epoch, stats, time.perf_counter() - t0))
        if ckpt:
            report.checkpoint_path = ckpt
    report.frozen_checksums["end"] = _frozen_checksums(pipe)
    return report


def _imle_loss_for(pipe: Pipeline, f_bar: Tensor, f_s: Tensor, f_c: Tensor,
                   noises: np.ndarray) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
    feats = [pipe.gen(f_bar, Tensor(noises[i:i + 1])) for i in range(noises.shape[0])]
    loss, _ = loss_imle(feats, f_s, f_c)
    return loss, feats


def _run_manipulation(profile: Profile, corpus_dir, out_dir) -> StageReport:
    pipe, train, _, out = _prepare("manipulation", profile, corpus_dir, out_dir)
    pipe.freeze_all_except(STAGE_TRAINED_GROUPS["manipulation"])
    opt = Adam(pipe.group_params(["G"]), lr=profile.mani_lr)
    cache = ShapeCache()
    report = StageReport("manipulation", profile.fingerprint())
    report.frozen_checksums["start"] = _frozen_checksums(pipe)
    by_cat: dict[str, list[ShapeEntry]] = {}
    for e in train:
        cat = e.attributes.category if e.attributes else "unknown"
        by_cat.setdefault(cat, []).append(e)
    cats = sorted(by_cat)
    for epoch in range(1, profile.mani_epochs + 1):
        t0 = time.perf_counter()
        acc = {"mani": 0.0, "gated": 0.0}
        for step in range(len(train)):
            rng = _step_rng(profile.seed, "manipulation", epoch, step + 1)
            cat = cats[int(rng.integers(len(cats)))]
            pool = by_cat[cat]
            if len(pool) < 2:
                continue
            i1, i2 = rng.choice(len(pool), size=2, replace=False)
            e1, e2 = pool[i1], pool[i2]
            mode = "shape-edit" if rng.random() < 0.5 else "color-edit"
            loss, gated = manipulation_step_loss(pipe, e1, e2, mode, cache, rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            acc["mani"] += loss.item()
            acc["gated"] += float(gated)
        n = max(len(train), 1)
        stats = {"mani": _check_finite("mani", acc["mani"] / n),
                 "gated_fraction": acc["gated"] / n}
        ckpt = _save_epoch_checkpoint(pipe, out, "manipulation", epoch,
                                      profile.mani_epochs)
        report.epochs.append(EpochStats(epoch, stats, time.perf_counter() - t0))
        if ckpt:
            report.checkpoint_path = ckpt
    report.frozen_checksums["end"] = _frozen_checksums(pipe)
    return report


def manipulation_step_loss(pipe: Pipeline, e1: ShapeEntry, e2: ShapeEntry,
                           mode: str, cache: ShapeCache,
                           rng: np.random.Generator) -> tuple[Tensor, bool]:
    """Two-way cyclic manipulation loss for one text pair (Eq. 8 structure).

    The mixed feature decodes through the frozen spatial decoder, is
    re-encoded, and its halves are pulled toward the corresponding generated
    halves; both captions additionally keep their own nearest-sample pull.
    """
    profile = pipe.profile
    cap1 = e1.captions[int(rng.integers(len(e1.captions)))]
    cap2 = e2.captions[int(rng.integers(len(e2.captions)))]
    with no_grad():
        f1_s, f1_c = pipe.encode_shape(cache.full(e1.path))
        f2_s, f2_c = pipe.encode_shape(cache.full(e2.path))
        w1, fb1_s, fb1_c = pipe.text_features(cap1)
        w2, fb2_s, fb2_c = pipe.text_features(cap2)
    fbar1 = Tensor(np.concatenate([fb1_s.data, fb1_c.data], axis=1))
    fbar2 = Tensor(np.concatenate([fb2_s.data, fb2_c.data], axis=1))
    w1 = Tensor(w1.data)
    w2 = Tensor(w2.data)

    noises = sample_noise(profile.d_z, profile.m, int(rng.integers(2 ** 31)),
                          dtype=pipe.dtype)
    l_g1, feats1 = _imle_loss_for(pipe, fbar1, f1_s, f1_c, noises)
    l_g2, feats2 = _imle_loss_for(pipe, fbar2, f2_s, f2_c, noises)
    # the first noise doubles as the manipulation latent: feats*[0] used z_0
    z0_s1, z0_c1 = feats1[0]
    z0_s2, z0_c2 = feats2[0]

    gate = manipulation_gate(cache.full(e1.path).occ, cache.full(e2.path).occ,
                             profile.iou_gate)
    if not gate:
        return l_g1 + l_g2, False

    if mode == "shape-edit":
        mixed = concat_cols([Tensor(fb2_s.data), Tensor(fb1_c.data)])
        words_shape, words_color = w2, w1
        target_s, target_c = z0_s2, z0_c1
    else:
        mixed = concat_cols([Tensor(fb1_s.data), Tensor(fb2_c.data)])
        words_shape, words_color = w1, w2
        target_s, target_c = z0_s1, z0_c2
    z0 = Tensor(noises[0:1])
    fhat_s, fhat_c = pipe.gen(mixed, z0)
    fdot_s, fdot_c = _cyc_mixed_words(pipe, fhat_s, fhat_c, words_shape, words_color)
    cyc = l2_loss(fdot_s, target_s) + l2_loss(fdot_c, target_c)
    return cyc + l_g1 + l_g2, True


def _cyc_mixed_words(pipe: Pipeline, f_s: Tensor, f_c: Tensor,
                     words_shape: Tensor, words_color: Tensor) -> tuple[Tensor, Tensor]:
    """cyc_features variant whose two branches condition on different captions."""
    r = pipe.profile.cyc_res
    pts = grid_points_c(r)
    n = pts.shape[0]
    p = Tensor(pts.astype(pipe.dtype))
    ws, _ = pipe.text.word_halves(words_shape)
    _, wc = pipe.text.word_halves(words_color)
    loc_s, _, r_s = pipe.wlst_s(ws, concat_cols([tile_rows(f_s, n), p]))
    loc_c, _, _ = pipe.wlst_c(wc, concat_cols([tile_rows(f_c, n), p]))
    occ = pipe.sdec.occupancy(f_s, pts, loc_s, r_s)
    rgb = pipe.sdec.color(f_c, pts, loc_c)
    occ3 = concat_cols([occ, occ, occ])
    rgb_masked = rgb * occ3
    rows = [transpose(occ)] + [transpose(slice_cols(rgb_masked, k, k + 1))
                               for k in range(3)]
    grid = concat_rows(rows).reshape(4, r, r, r)
    up = trilinear_upsample(grid, pipe.profile.resolution)
    return pipe.enc.encode_grid(up)
