"""Batch evaluation: runs the metric suite against a trained run directory.

Reconstruction metrics decode corpus shapes through the plain decoder pair;
distribution metrics score caption-conditioned samples with the trained
point-cloud classifier. Each metric is computed independently so a failure
in one (for example too few samples for a covariance estimate) still leaves
the others in the report.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .corpus import load_manifest
from .infer import InferenceSession, sample_seed
from .metrics import (MetricReport, attribute_consistency, consistency_rates,
                      emd_colored, frechet_style_distance,
                      inception_style_score, iou, r_precision,
                      sample_colored_points, train_metric_classifier)
from .train import group_records
from .voxels import VoxelShape, grid_points, load_voxels, voxelize_samples

CLOUD_POINTS = 128


def reconstruct(session: InferenceSession, shape: VoxelShape) -> VoxelShape:
    """Encode and decode a shape through the plain decoder pair."""
    pts = grid_points(shape.resolution)
    feat = session.encode_shape(shape)
    dtype = session.pipe.dtype
    with no_grad():
        occ = session.pipe.dec.occupancy(Tensor(feat.f_s.astype(dtype)), pts)
        rgb = session.pipe.dec.color(Tensor(feat.f_c.astype(dtype)), pts)
    return voxelize_samples(occ.data, rgb.data, shape.resolution)


def _entry_json(report: MetricReport) -> dict:
    return json.loads(report.to_json())


def _reconstruction_pairs(session, entries, samples):
    pairs = []
    for entry in entries[:samples]:
        gt = load_voxels(entry.path)
        pairs.append((gt, reconstruct(session, gt)))
    return pairs


def _metric_iou(session, entries, samples, seed, config_hash, shared):
    pairs = shared.setdefault(
        "pairs", _reconstruction_pairs(session, entries, samples))
    values = [iou(gt, rec) for gt, rec in pairs]
    return _entry_json(MetricReport(
        "reconstruction-iou", float(np.mean(values)), len(values), config_hash,
        spread=float(np.max(values) - np.min(values))))


def _metric_emd(session, entries, samples, seed, config_hash, shared):
    pairs = shared.setdefault(
        "pairs", _reconstruction_pairs(session, entries, samples))
    values, flags, skipped = [], set(), 0
    for gt, rec in pairs:
        try:
            report = emd_colored(gt, rec, n=64, config_hash=config_hash)
        except ValueError:
            skipped += 1
            continue
        values.append(report.value)
        flags.update(report.flags)
    if not values:
        raise ValueError("every reconstruction was empty")
    if skipped:
        flags.add(f"skipped-empty:{skipped}")
    return _entry_json(MetricReport(
        "reconstruction-emd", float(np.mean(values)), len(values), config_hash,
        flags=sorted(flags)))


def _metric_rprec(session, entries, samples, seed, config_hash, shared):
    feats_s, feats_t = [], []
    for entry in entries[:samples]:
        feats_s.append(session.encode_shape(load_voxels(entry.path)).concat[0])
        feats_t.append(session.text_features(entry.captions[0])[1].concat[0])
    captions = sorted({c for e in entries for c in e.captions})
    pool = np.stack([session.text_features(c)[1].concat[0] for c in captions])
    report = r_precision(np.stack(feats_s), np.stack(feats_t), pool,
                         pool_size=min(100, pool.shape[0]),
                         config_hash=config_hash)
    return _entry_json(report)


def _generated_set(session, entries, samples, seed, shared):
    if "generated" not in shared:
        out = []
        for i in range(samples):
            entry = entries[i % len(entries)]
            caption = entry.captions[0]
            shape = session.generate(caption, 1, sample_seed(seed, 1000 + i))[0]
            out.append((entry, shape))
        shared["generated"] = out
    return shared["generated"]


def _classifier(session, entries, seed, shared):
    if "classifier" not in shared:
        records = load_manifest(Path(shared["corpus_dir"]) / "manifest.jsonl")
        shared["classifier"] = train_metric_classifier(records, seed=seed)
    return shared["classifier"]


def _clouds(grids):
    clouds, skipped = [], 0
    for grid in grids:
        try:
            clouds.append(sample_colored_points(grid, CLOUD_POINTS))
        except ValueError:
            skipped += 1
    return clouds, skipped


def _metric_is(session, entries, samples, seed, config_hash, shared):
    clf, _ = _classifier(session, entries, seed, shared)
    generated = _generated_set(session, entries, samples, seed, shared)
    clouds, skipped = _clouds([s.grid for _, s in generated])
    if not clouds:
        raise ValueError("every generated shape was empty")
    probs = np.stack([clf.probabilities(c) for c in clouds])
    flags = [f"skipped-empty:{skipped}"] if skipped else []
    return _entry_json(MetricReport(
        "inception-style", inception_style_score(probs), len(clouds),
        config_hash, flags=flags))


def _metric_fpd(session, entries, samples, seed, config_hash, shared):
    clf, _ = _classifier(session, entries, seed, shared)
    generated = _generated_set(session, entries, samples, seed, shared)
    gen_clouds, skipped = _clouds([s.grid for _, s in generated])
    ref_clouds, _ = _clouds([load_voxels(e.path) for e in entries[:samples]])
    if not gen_clouds:
        raise ValueError("every generated shape was empty")

    def embed(clouds):
        with no_grad():
            return np.stack([clf.embedding(c).data[0] for c in clouds])

    value, regularized = frechet_style_distance(embed(gen_clouds),
                                                embed(ref_clouds))
    flags = []
    if regularized:
        flags.append("covariance-regularized")
    if skipped:
        flags.append(f"skipped-empty:{skipped}")
    return _entry_json(MetricReport(
        "frechet-style", value, len(gen_clouds), config_hash, flags=flags))


def _metric_consistency(session, entries, samples, seed, config_hash, shared):
    generated = _generated_set(session, entries, samples, seed, shared)
    results = [attribute_consistency(shape.grid, entry.attributes)
               for entry, shape in generated if entry.attributes is not None]
    if not results:
        raise ValueError("corpus manifest has no attribute labels")
    rates = consistency_rates(results)
    keys = ["leg_count", "seat_round", "color", "back"]
    return {"name": "attribute-consistency",
            "value": float(np.mean([rates[k] for k in keys])),
            "rates": rates, "sample_count": len(results),
            "config_hash": config_hash}


_METRIC_FNS = {"iou": _metric_iou, "emd": _metric_emd, "rprec": _metric_rprec,
               "is": _metric_is, "fpd": _metric_fpd,
               "consistency": _metric_consistency}


def evaluate_run(run_dir: str | Path, corpus_dir: str | Path,
                 metrics: list[str], samples: int = 16,
                 seed: int = 0) -> dict[str, dict]:
    """Compute the named metrics; unknown names raise before any work."""
    unknown = sorted(set(metrics) - set(_METRIC_FNS))
    if unknown:
        raise ValueError(f"unknown metrics: {', '.join(unknown)}")
    session = InferenceSession.from_run_dir(run_dir)
    entries = group_records(
        load_manifest(Path(corpus_dir) / "manifest.jsonl"))
    entries = sorted(entries, key=lambda e: e.path)
    config_hash = session.profile.fingerprint()
    shared: dict = {"corpus_dir": str(corpus_dir)}
    report: dict[str, dict] = {}
    for name in metrics:
        try:
            report[name] = _METRIC_FNS[name](session, entries, samples, seed,
                                             config_hash, shared)
        except (ValueError, ArithmeticError) as exc:
            report[name] = {"name": name, "error": str(exc)}
    return report
