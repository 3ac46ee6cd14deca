import csv
import json

import numpy as np
import pytest

from ngfalign.cli import main
from ngfalign.harness import PhantomSpec, gen_phantom_pair
from ngfalign.volume import full_mask, save_volume

QUICK_CONFIG = {
    "levels": 2,
    "d": [2, 1],
    "sigma": [1.5, 0.0],
    "u": [15.0, 4.0],
    "a": [40, 20],
    "p": [1, 4],
}


@pytest.fixture()
def phantom_files(tmp_path):
    spec = PhantomSpec(
        dims=(24, 24, 24), n_blobs=10, blob_radius=(3.0, 7.0),
        smooth_a=0.8, smooth_b=0.8, seed=5,
    )
    a, b = gen_phantom_pair(spec)
    ref = tmp_path / "ref.json"
    flo = tmp_path / "flo.json"
    save_volume(a, full_mask(a.dims), ref)
    save_volume(b, full_mask(b.dims), flo)
    return ref, flo


class TestRegister:
    def test_self_registration_json(self, tmp_path, phantom_files, capsys):
        ref, _ = phantom_files
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(QUICK_CONFIG))
        out = tmp_path / "result.json"
        rc = main(["register", str(ref), str(ref),
                   "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        assert "score=" in capsys.readouterr().out
        payload = json.loads(out.read_text())
        assert np.abs(payload["euler_deg"]).max() < 2.0
        assert np.abs(payload["translation_vx"]).max() < 1.0
        assert len(payload["per_level"]) == 2
        assert payload["wall_time_s"] > 0

    def test_missing_config_is_usage_error(self, phantom_files, tmp_path):
        ref, flo = phantom_files
        rc = main(["register", str(ref), str(flo),
                   "--config", str(tmp_path / "nope.json")])
        assert rc == 1

    def test_missing_volume_is_runtime_error(self, tmp_path):
        rc = main(["register", str(tmp_path / "a.json"), str(tmp_path / "b.json")])
        assert rc == 2

    def test_same_seed_same_result(self, tmp_path, phantom_files):
        ref, flo = phantom_files
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(QUICK_CONFIG))
        payloads = []
        for name in ("r1.json", "r2.json"):
            out = tmp_path / name
            assert main(["register", str(ref), str(flo), "--config", str(cfg),
                         "--seed", "3", "--out", str(out)]) == 0
            payload = json.loads(out.read_text())
            del payload["wall_time_s"]
            payloads.append(payload)
        assert payloads[0] == payloads[1]


class TestCsngfMap:
    def test_identity_peak(self, tmp_path, phantom_files, capsys):
        ref, _ = phantom_files
        out = tmp_path / "map.json"
        rc = main(["csngf-map", str(ref), str(ref), "--out", str(out)])
        assert rc == 0
        assert "chi=(0, 0, 0)" in capsys.readouterr().out
        header = json.loads(out.read_text())
        assert header["dims"] == [47, 47, 47]
        assert header["origin_chi"] == [23, 23, 23]
        assert header["measure"] == "squared"
        raw = np.fromfile(tmp_path / header["data"], dtype="<f8")
        scores = raw.reshape(header["dims"], order="F")
        peak = np.unravel_index(np.nanargmax(scores), scores.shape)
        assert list(peak) == header["origin_chi"]

    def test_gamma_one_offset_masks_runtime_error(self, tmp_path):
        # disjoint thin masks: with gamma=1 only the best-overlap shifts
        # survive, but fully empty overlap at every lattice point is an error
        from ngfalign.volume import Mask, Volume

        rng = np.random.default_rng(0)
        v = Volume(rng.normal(0, 1, (6, 6, 6)))
        empty = np.zeros((6, 6, 6), dtype=bool)
        with pytest.raises(ValueError):
            Mask(empty)  # the format itself refuses empty masks

        bits = empty.copy()
        bits[0, 0, 0] = True
        ref = tmp_path / "r.json"
        save_volume(v, Mask(bits), ref)
        out = tmp_path / "m.json"
        # a single-voxel mask has no valid gradient anywhere, so every
        # score is 0 but the map still exists; command must succeed
        rc = main(["csngf-map", str(ref), str(ref), "--gamma", "1.0",
                   "--out", str(out)])
        assert rc == 0

    def test_unsquared_measure_header(self, tmp_path, phantom_files):
        ref, flo = phantom_files
        out = tmp_path / "map.json"
        rc = main(["csngf-map", str(ref), str(flo),
                   "--measure", "unsquared", "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["measure"] == "unsquared"


class TestDatasetRoundtrip:
    def _spec(self):
        return {
            "n": 2,
            "seed": 4,
            "phantom": {
                "dims": [32, 32, 32], "n_blobs": 10, "blob_radius": [3.0, 8.0],
                "smooth_a": 0.8, "smooth_b": 0.8,
            },
            "trial": {
                "rot_range_deg": 8.0, "shift_range_vx": 3.0,
                "block_dims": [24, 24, 24], "interp": "trilinear",
            },
        }

    def test_gen_then_evaluate(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(self._spec()))
        ds = tmp_path / "ds"
        assert main(["gen-dataset", str(spec), str(ds)]) == 0
        assert (ds / "dataset.json").is_file()
        for i in range(2):
            tdir = ds / f"trial_{i:03d}"
            assert (tdir / "ref.json").is_file()
            assert (tdir / "flo.json").is_file()
            assert json.loads((tdir / "gt.json").read_text()).keys() == {
                "euler_deg", "translation_vx", "center_vx"
            }

        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(QUICK_CONFIG))
        out = tmp_path / "eval"
        assert main(["evaluate", str(ds), "--config", str(cfg),
                     "--out", str(out)]) == 0
        assert "success_rate[squared]" in capsys.readouterr().out
        with open(out / "trials.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert all(r[-2] == "1" for r in rows[1:])  # easy trials must succeed
        assert (out / "cumulative.csv").is_file()

    def test_evaluate_missing_dataset(self, tmp_path):
        rc = main(["evaluate", str(tmp_path / "empty"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_gen_dataset_bad_spec(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text("{not json")
        rc = main(["gen-dataset", str(spec), str(tmp_path / "ds")])
        assert rc == 1


class TestBenchCommand:
    def test_two_sizes(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--sizes", "8,12", "--repeats", "1",
                   "--out", str(out)])
        assert rc == 0
        assert "ratio=" in capsys.readouterr().out
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["size", "t_direct_s", "t_fft_s", "ratio"]
        assert [r[0] for r in rows[1:]] == ["8", "12"]

    def test_bad_sizes(self, tmp_path):
        rc = main(["bench", "--sizes", "8,x", "--out", str(tmp_path / "b.csv")])
        assert rc == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1
