import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tgshape.config import Profile
from tgshape.corpus import CorpusConfig, generate_synthetic_corpus


def micro_profile(**overrides) -> Profile:
    base = dict(
        name="micro", d=16, d_l=4, d_b=8, d_z=8, text_layers=1, text_heads=2,
        text_ff=16, decoder_widths=[16, 16, 16, 8, 8, 8], enc_base=4,
        g_width=16, g_map_width=16, resolution=32, m=2, n_points=128,
        cyc_res=4, ae_epochs1=1, ae_epochs2=1, ae_res1=16, ae_res2=32,
        ae_lr=1e-3, text_epochs1=1, text_epochs2=0, text_res1=16, text_res2=32,
        text_lr=1e-3, imle_epochs=1, imle_lr=1e-3, mani_epochs=1, mani_lr=1e-3,
        corpus_count=4, seed=0, dtype="float32")
    base.update(overrides)
    return Profile(**base)


@pytest.fixture(scope="session")
def micro_run(shared_corpus, tmp_path_factory):
    """All four stages once on the shared corpus, reused by read-only checks."""
    from tgshape.train import run_stage
    corpus_root, _ = shared_corpus
    out = tmp_path_factory.mktemp("micro_run")
    profile = micro_profile()
    reports = {stage: run_stage(stage, profile, corpus_root, out)
               for stage in ("ae", "text", "imle", "manipulation")}
    return corpus_root, out, profile, reports


@pytest.fixture(scope="session")
def shared_corpus(tmp_path_factory):
    """One 24-shape corpus reused by metric and pipeline tests."""
    root = tmp_path_factory.mktemp("corpus24")
    records = generate_synthetic_corpus(
        CorpusConfig(count=24, resolution=32, out_dir=str(root)), rng_seed=11)
    return root, records


@pytest.fixture(scope="session")
def big_corpus(tmp_path_factory):
    """Default-scale 128-shape corpus for classifier and trend checks."""
    root = tmp_path_factory.mktemp("corpus128")
    records = generate_synthetic_corpus(
        CorpusConfig(count=128, resolution=32, out_dir=str(root)), rng_seed=5)
    return root, records
