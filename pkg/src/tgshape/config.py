"""Run profiles and config-file round trips.

Three built-in profiles share one schema: "paper" keeps the published
hyper-parameters verbatim, "desk" scales dimensions and schedules to hours on
one CPU core, "test" scales further to minutes for CI. Every field can be
overridden through a key = value INI file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Profile:
    name: str = "desk"
    # model dimensions
    d: int = 64
    d_l: int = 8
    d_b: int = 32
    d_z: int = 32
    text_layers: int = 2
    text_heads: int = 4
    text_ff: int = 64
    max_len: int = 32
    decoder_widths: list[int] = field(default_factory=lambda: [128, 128, 128, 64, 64, 32])
    enc_base: int = 8
    g_width: int = 128
    g_map_width: int = 128
    resolution: int = 32
    # loss weights and sampling
    lambda_s: float = 2.0
    lambda_c: float = 1.0
    lambda_r: float = 1.0
    lambda_cyc: float = 0.005
    iou_gate: float = 0.01
    m: int = 16
    n_points: int = 2048
    surface_fraction: float = 0.5
    cyc_res: int = 16
    caption_drop_color: float = 0.3
    caption_drop_full: float = 0.15
    # schedules
    ae_epochs1: int = 100
    ae_epochs2: int = 100
    ae_res1: int = 16
    ae_res2: int = 32
    ae_lr: float = 5e-4
    ae_batches: int = 1  # point batches drawn per shape visit
    text_epochs1: int = 40
    text_epochs2: int = 40
    text_res1: int = 16
    text_res2: int = 32
    text_lr: float = 5e-4
    imle_epochs: int = 20
    imle_lr: float = 1e-3
    mani_epochs: int = 20
    mani_lr: float = 1e-3
    # corpus and runtime
    corpus_count: int = 128
    seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 0  # 0 = final epoch only

    def fingerprint(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def paper_profile() -> Profile:
    return Profile(
        name="paper", d=256, d_l=32, d_b=128, d_z=128,
        text_layers=2, text_heads=4, text_ff=256,
        decoder_widths=[512, 512, 512, 256, 256, 128], enc_base=32,
        g_width=512, g_map_width=512, resolution=64,
        m=16, n_points=4096, cyc_res=16,
        ae_epochs1=500, ae_epochs2=500, ae_res1=16, ae_res2=32, ae_lr=1e-4,
        text_epochs1=200, text_epochs2=200, text_res1=32, text_res2=64, text_lr=1e-4,
        imle_epochs=100, imle_lr=1e-3, mani_epochs=100, mani_lr=1e-3,
        corpus_count=1024, dtype="float32")


def desk_profile() -> Profile:
    return Profile(name="desk")


def test_profile() -> Profile:
    return Profile(
        name="test", d=32, d_l=4, d_b=16, d_z=16,
        text_layers=1, text_heads=2, text_ff=32,
        decoder_widths=[64, 64, 64, 32, 32, 16], enc_base=8,
        g_width=64, g_map_width=64, resolution=32,
        m=8, n_points=1024, cyc_res=16,
        ae_epochs1=60, ae_epochs2=100, ae_res1=16, ae_res2=32, ae_lr=1e-3,
        text_epochs1=12, text_epochs2=12, text_res1=16, text_res2=32, text_lr=1e-3,
        imle_epochs=10, imle_lr=1e-3, mani_epochs=8, mani_lr=1e-3,
        corpus_count=16, dtype="float32")


PROFILES = {"paper": paper_profile, "desk": desk_profile, "test": test_profile}


def get_profile(name: str) -> Profile:
    if name not in PROFILES:
        raise ValueError(f"unknown profile '{name}' (have: {', '.join(PROFILES)})")
    return PROFILES[name]()


_SECTIONS = {
    "model": ["d", "d_l", "d_b", "d_z", "text_layers", "text_heads", "text_ff",
              "max_len", "decoder_widths", "enc_base", "g_width", "g_map_width",
              "resolution"],
    "loss": ["lambda_s", "lambda_c", "lambda_r", "lambda_cyc", "iou_gate", "m",
             "n_points", "surface_fraction", "cyc_res", "caption_drop_color",
             "caption_drop_full"],
    "ae": ["ae_epochs1", "ae_epochs2", "ae_res1", "ae_res2", "ae_lr",
           "ae_batches"],
    "text": ["text_epochs1", "text_epochs2", "text_res1", "text_res2", "text_lr"],
    "imle": ["imle_epochs", "imle_lr"],
    "manipulation": ["mani_epochs", "mani_lr"],
    "run": ["name", "corpus_count", "seed", "dtype", "checkpoint_every"],
}


def save_config(profile: Profile, path: str | Path) -> None:
    cp = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        cp[section] = {}
        for key in keys:
            value = getattr(profile, key)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            cp[section][key] = str(value)
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def load_config(path: str | Path) -> Profile:
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ValueError(f"config file {path} is not valid INI: {exc}") from exc
    base = Profile()
    fields = {f.name: f for f in dataclasses.fields(Profile)}
    values: dict[str, object] = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SECTIONS[section]:
                raise ValueError(f"unknown key '{key}' in section [{section}]")
            f = fields[key]
            if f.name == "decoder_widths":
                values[key] = [int(v) for v in raw.split(",") if v]
            elif f.type == "int":
                values[key] = int(raw)
            elif f.type == "float":
                values[key] = float(raw)
            else:
                values[key] = raw
    return dataclasses.replace(base, **values)
