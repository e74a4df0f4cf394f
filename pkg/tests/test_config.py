"""Profile defaults, INI round trips, and fingerprint stability."""

import dataclasses

import pytest

from tgshape.config import (PROFILES, Profile, get_profile, load_config,
                            paper_profile, save_config)
from tgshape.config import test_profile as tiny_profile


class TestProfiles:
    def test_registry_names(self):
        assert set(PROFILES) == {"desk", "paper", "test"}
        assert get_profile("desk") == Profile()
        with pytest.raises(ValueError):
            get_profile("nope")

    def test_paper_profile_core_sizes(self):
        p = paper_profile()
        assert (p.d, p.d_l, p.d_b, p.d_z) == (256, 32, 128, 128)
        assert p.decoder_widths == [512, 512, 512, 256, 256, 128]
        assert p.resolution == 64
        assert p.n_points == 4096
        assert (p.lambda_s, p.lambda_c, p.lambda_r, p.lambda_cyc) == (2.0, 1.0, 1.0, 0.005)
        assert p.ae_epochs1 == p.ae_epochs2 == 500
        assert p.imle_lr == pytest.approx(1e-3)
        assert p.ae_lr == pytest.approx(1e-4)

    def test_test_profile_is_small(self):
        p = tiny_profile()
        assert p.d <= 64 and p.corpus_count <= 16
        assert p.resolution == 32

    def test_desk_defaults_are_the_dataclass_defaults(self):
        assert get_profile("desk") == Profile()


class TestFingerprint:
    def test_stable_across_instances(self):
        assert Profile().fingerprint() == Profile().fingerprint()
        assert len(Profile().fingerprint()) == 16

    def test_sensitive_to_any_field(self):
        base = Profile().fingerprint()
        changed = dataclasses.replace(Profile(), lambda_cyc=0.006)
        assert changed.fingerprint() != base
        renamed = dataclasses.replace(Profile(), name="other")
        assert renamed.fingerprint() != base


class TestIniRoundTrip:
    @pytest.mark.parametrize("name", ["desk", "paper", "test"])
    def test_round_trip(self, name, tmp_path):
        p = get_profile(name)
        path = tmp_path / "run.ini"
        save_config(p, path)
        q = load_config(path)
        assert q == p

    def test_round_trip_preserves_widths_list(self, tmp_path):
        p = dataclasses.replace(Profile(), decoder_widths=[7, 5, 3])
        save_config(p, tmp_path / "w.ini")
        assert load_config(tmp_path / "w.ini").decoder_widths == [7, 5, 3]

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        save_config(Profile(), path)
        text = path.read_text()
        path.write_text(text.replace("[model]", "[model]\nbogus_knob = 3"))
        with pytest.raises(ValueError):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad2.ini"
        save_config(Profile(), path)
        path.write_text(path.read_text() + "\n[mystery]\nx = 1\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "partial.ini"
        path.write_text("[model]\nd = 48\n")
        p = load_config(path)
        assert p.d == 48
        assert p.d_l == Profile().d_l
