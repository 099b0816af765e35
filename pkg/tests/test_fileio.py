import numpy as np
import pytest

from bwsembed import fileio
from bwsembed.trial_data import Item, Trial


class TestTrials:
    def test_round_trip(self, tmp_path, small_dataset):
        trials = small_dataset[1]
        fileio.write_trials(tmp_path / "t.jsonl", trials)
        assert fileio.read_trials(tmp_path / "t.jsonl") == trials

    def test_malformed_line_reports_location(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text('{"attribute": "a", "item_ids": ["x", "y", "z"], "best": 0, "worst": 1}\n{"oops": 1}\n')
        with pytest.raises(ValueError, match="t.jsonl:2"):
            fileio.read_trials(path)

    def test_unnamed_trials_get_line_names(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text('{"attribute": "a", "item_ids": ["x", "y", "z"], "best": 0, "worst": 1}\n')
        assert fileio.read_trials(path)[0].name == "t:1"


class TestFeatures:
    def test_round_trip_is_exact(self, tmp_path, rng):
        f = rng.standard_normal((6, 4)) * 1e3
        fileio.write_features(tmp_path / "a.feat", f, {"sr": 16000, "hop": 200})
        back, meta = fileio.read_features(tmp_path / "a.feat")
        np.testing.assert_array_equal(back, f)
        assert meta == {"sr": "16000", "hop": "200"}

    def test_single_frame(self, tmp_path):
        fileio.write_features(tmp_path / "a.feat", np.ones((1, 3)))
        assert fileio.read_features(tmp_path / "a.feat")[0].shape == (1, 3)

    def test_header_mismatch(self, tmp_path):
        (tmp_path / "a.feat").write_text("2 3\n1 2 3\n")
        with pytest.raises(ValueError, match="2x3"):
            fileio.read_features(tmp_path / "a.feat")


class TestItemsAndLatents:
    def test_directory_round_trip(self, tmp_path, small_dataset):
        items = small_dataset[0]
        fileio.write_items(tmp_path / "items", items)
        back = fileio.read_items(tmp_path / "items")
        assert [it.id for it in back] == sorted(it.id for it in items)
        by_id = {it.id: it for it in items}
        assert all(np.array_equal(it.features, by_id[it.id].features) for it in back)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            fileio.read_items(tmp_path / "nope")

    def test_latents(self, tmp_path):
        items = [Item("a", np.ones((1, 1)), 0.1), Item("b", np.ones((1, 1)), 2 / 3)]
        fileio.write_latents(tmp_path / "l.csv", items)
        assert fileio.read_latents(tmp_path / "l.csv") == {"a": 0.1, "b": 2 / 3}


def test_trial_with_unicode_attribute(tmp_path):
    t = [Trial("émotion", ("a", "b", "c"), 2, 0, "n")]
    fileio.write_trials(tmp_path / "t.jsonl", t)
    assert fileio.read_trials(tmp_path / "t.jsonl") == t
