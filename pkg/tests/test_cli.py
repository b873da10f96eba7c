import json
from pathlib import Path

import numpy as np
import pytest

from conftest import fake_server_cmd
from evex import cli
from evex.imaging import Image, load_png, save_png
from evex.lime import LimeConfig
from evex.moo import GAConfig


@pytest.fixture(scope="module")
def toy_png(tmp_path_factory):
    from evex.fixtures import toy_blob_image

    image, _ = toy_blob_image()
    path = tmp_path_factory.mktemp("img") / "toy.png"
    save_png(image, path)
    return path


def desk_config(tmp_path, toy_png, seeds=(42,), **ga_overrides):
    ga = dict(GAConfig(population_size=8, max_generations=5, patience=70).to_json())
    ga.update(ga_overrides)
    cfg = {
        "image": str(toy_png),
        "classifier": {"kind": "builtin-blob"},
        "target_class": 1,
        "ga": ga,
        "lime": LimeConfig(n_samples=16).to_json(),
        "seeds": list(seeds),
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestInit:
    def test_writes_full_defaults(self, tmp_path):
        target = tmp_path / "cfg.json"
        assert cli.main(["init", "--config", str(target)]) == 0
        data = json.loads(target.read_text())
        assert data["seeds"] == [42, 43, 44, 45]
        assert data["ga"]["population_size"] == 80
        assert data["ga"]["max_generations"] == 200
        assert data["ga"]["patience"] == 70
        assert data["lime"]["n_samples"] == 200
        assert data["classifier"]["kind"] == "builtin-blob"

    def test_idempotent(self, tmp_path):
        target = tmp_path / "cfg.json"
        cli.main(["init", "--config", str(target)])
        first = target.read_bytes()
        cli.main(["init", "--config", str(target)])
        assert target.read_bytes() == first


class TestSegment:
    def test_writes_artifacts(self, tmp_path, toy_png):
        out = tmp_path / "seg"
        rc = cli.main([
            "segment", "--image", str(toy_png),
            "--scale", "50", "--sigma", "0.8", "--min-size", "30",
            "--out", str(out),
        ])
        assert rc == 0
        assert (out / "overlay.png").exists()
        assert (out / "segmap.evexseg").exists()

    def test_uniform_image_overlay_unchanged(self, tmp_path):
        img_path = tmp_path / "u.png"
        save_png(Image(np.full((16, 16, 3), 77, dtype=np.uint8)), img_path)
        out = tmp_path / "seg"
        cli.main([
            "segment", "--image", str(img_path),
            "--scale", "10", "--sigma", "0", "--min-size", "15",
            "--out", str(out),
        ])
        assert np.array_equal(load_png(out / "overlay.png").pixels, load_png(img_path).pixels)

    def test_bad_scale_is_usage_error(self, tmp_path, toy_png, capsys):
        rc = cli.main([
            "segment", "--image", str(toy_png),
            "--scale", "0", "--sigma", "0.5", "--min-size", "30",
            "--out", str(tmp_path / "x"),
        ])
        assert rc == 1
        assert "--scale" in capsys.readouterr().err


class TestExplain:
    def test_constant_classifier_all_white_heatmap(self, tmp_path, toy_png):
        cfg = {
            "image": str(toy_png),
            "classifier": {"kind": "builtin-constant", "class_count": 2,
                           "probabilities": [0.3, 0.7]},
            "lime": {"n_samples": 16},
        }
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "ex"
        rc = cli.main([
            "explain", "--image", str(toy_png), "--config", str(cfg_path),
            "--scale", "50", "--sigma", "0.8", "--min-size", "30",
            "--seed", "42", "--out", str(out),
        ])
        assert rc == 0
        assert np.all(load_png(out / "heatmap.png").pixels == 255)

    def test_deterministic_bytes(self, tmp_path, toy_png):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = cli.main([
                "explain", "--image", str(toy_png),
                "--scale", "50", "--sigma", "0.8", "--min-size", "30",
                "--seed", "42", "--out", str(out),
            ])
            assert rc == 0
            outs.append(out)
        for name in ("explanation.json", "heatmap.png", "pixel-grid.evexmap"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_degenerate_segmentation_is_validation_error(self, tmp_path, capsys):
        img_path = tmp_path / "flat.png"
        save_png(Image(np.full((16, 16, 3), 77, dtype=np.uint8)), img_path)
        rc = cli.main([
            "explain", "--image", str(img_path),
            "--scale", "100", "--sigma", "0", "--min-size", "100",
            "--seed", "1", "--out", str(tmp_path / "o"),
        ])
        assert rc == 1
        assert "nothing to explain" in capsys.readouterr().err

    def test_blob_fixture_blue_over_blob(self, tmp_path, toy_png):
        from evex.fixtures import toy_blob_image

        _, mask = toy_blob_image()
        out = tmp_path / "ex"
        cli.main([
            "explain", "--image", str(toy_png),
            "--scale", "50", "--sigma", "0.8", "--min-size", "30",
            "--seed", "42", "--out", str(out),
        ])
        heat = load_png(out / "heatmap.png").pixels
        blob = heat[mask]
        # supporting (positive) weights render blue: B channel saturated, R faded
        assert (blob[:, 2] == 255).all()
        assert (blob[:, 0] < 255).any()


class TestEvolve:
    def test_artifacts_and_determinism(self, tmp_path, toy_png):
        cfg = desk_config(tmp_path, toy_png, seeds=(42,))
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli.main(["evolve", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert cli.main(["evolve", "--config", str(cfg), "--out", str(out_b)]) == 0
        for rel in ("run.json", "averaged.evexmap", "hv.csv",
                    "heatmap-fixed.png", "heatmap-auto.png"):
            pa = out_a / "seed-42" / rel
            pb = out_b / "seed-42" / rel
            assert pa.exists(), rel
            assert pa.read_bytes() == pb.read_bytes(), rel
        record = json.loads((out_a / "seed-42" / "run.json").read_text())
        assert record["seed"] == 42
        assert record["termination"] in ("early-stop", "max-generations")
        front_dir = out_a / "seed-42" / "front"
        assert len(list(front_dir.glob("front-*.evexmap"))) == len(record["final_front"])

    def test_seed_flag_overrides_config(self, tmp_path, toy_png):
        cfg = desk_config(tmp_path, toy_png, seeds=(42, 43))
        out = tmp_path / "o"
        assert cli.main(["evolve", "--config", str(cfg), "--seed", "7",
                         "--out", str(out)]) == 0
        assert (out / "seed-7" / "run.json").exists()
        assert not (out / "seed-42").exists()

    def test_parallel_jobs_match_sequential(self, tmp_path, toy_png):
        cfg = desk_config(tmp_path, toy_png, seeds=(42, 43), max_generations=3)
        seq = tmp_path / "seq"
        par = tmp_path / "par"
        assert cli.main(["evolve", "--config", str(cfg), "--out", str(seq)]) == 0
        assert cli.main(["evolve", "--config", str(cfg), "--jobs", "2",
                         "--out", str(par)]) == 0
        for seed in (42, 43):
            assert (seq / f"seed-{seed}" / "run.json").read_bytes() == \
                (par / f"seed-{seed}" / "run.json").read_bytes()

    def test_missing_classifier_fails_before_work(self, tmp_path, toy_png, capsys):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "image": str(toy_png),
            "classifier": {"kind": "external", "command": ["/no/such/server"],
                           "class_count": 2},
            "ga": {"population_size": 8, "max_generations": 3},
            "lime": {"n_samples": 16},
            "seeds": [42],
        }))
        out = tmp_path / "o"
        rc = cli.main(["evolve", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 2
        assert not out.exists()

    def test_missing_image_is_usage_error(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({"image": str(tmp_path / "nope.png"), "seeds": [1]}))
        assert cli.main(["evolve", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 1


@pytest.fixture(scope="module")
def four_seed_runs(tmp_path_factory, toy_png):
    tmp = tmp_path_factory.mktemp("runs")
    cfg = desk_config(tmp, toy_png, seeds=(42, 43, 44, 45), max_generations=4)
    out = tmp / "out"
    assert cli.main(["evolve", "--config", str(cfg), "--out", str(out)]) == 0
    return [out / f"seed-{s}" / "run.json" for s in (42, 43, 44, 45)]


class TestRsd:
    def test_artifacts(self, tmp_path, four_seed_runs):
        out = tmp_path / "rsd"
        rc = cli.main(["rsd", *map(str, four_seed_runs),
                       "--thresholds", "0.1,0.5", "--out", str(out)])
        assert rc == 0
        for rel in ("sd.evexmap", "sd.png", "mean.evexmap", "mean.png",
                    "rsd-0.1.evexmap", "rsd-0.1.png", "rsd-0.5.evexmap",
                    "rsd-0.5.png", "sweep.csv", "report.json"):
            assert (out / rel).exists(), rel
        rows = (out / "sweep.csv").read_text().strip().splitlines()
        assert rows[0] == "threshold,max_rsd,excluded_fraction"
        assert len(rows) == 3

    def test_single_record_rejected(self, tmp_path, four_seed_runs):
        assert cli.main(["rsd", str(four_seed_runs[0]), "--out", str(tmp_path / "x")]) == 1

    def test_dimension_mismatch_rejected(self, tmp_path, four_seed_runs):
        other = tmp_path / "other"
        other.mkdir()
        (other / "run.json").write_text(json.dumps(
            {"seed": 1, "averaged_grid_path": "g.evexmap"}
        ))
        (other / "g.evexmap").write_text("EVEXMAP 1\n2 2\n0 0 0 0\n")
        rc = cli.main(["rsd", str(four_seed_runs[0]), str(other / "run.json"),
                       "--out", str(tmp_path / "x")])
        assert rc == 1

    def test_descending_thresholds_rejected(self, tmp_path, four_seed_runs):
        rc = cli.main(["rsd", *map(str, four_seed_runs[:2]),
                       "--thresholds", "0.8,0.5", "--out", str(tmp_path / "x")])
        assert rc == 1


class TestHvCurve:
    def test_one_row_per_generation(self, tmp_path, four_seed_runs):
        out = tmp_path / "hv"
        assert cli.main(["hv-curve", str(four_seed_runs[0]), "--out", str(out)]) == 0
        rows = (out / "hv-curve.csv").read_text().strip().splitlines()
        record = json.loads(four_seed_runs[0].read_text())
        assert rows[0] == "generation,hypervolume,archive_hypervolume,front_size,evaluations"
        assert len(rows) == len(record["generations"]) + 1

    def test_archive_column_non_decreasing(self, tmp_path, four_seed_runs):
        out = tmp_path / "hv"
        cli.main(["hv-curve", str(four_seed_runs[1]), "--out", str(out)])
        rows = (out / "hv-curve.csv").read_text().strip().splitlines()[1:]
        archive = [float(r.split(",")[2]) for r in rows]
        assert all(b >= a for a, b in zip(archive, archive[1:]))

    def test_empty_record_rejected(self, tmp_path):
        rec = tmp_path / "r.json"
        rec.write_text(json.dumps({"generations": []}))
        assert cli.main(["hv-curve", str(rec), "--out", str(tmp_path / "x")]) == 1

    def test_malformed_record_rejected(self, tmp_path):
        rec = tmp_path / "r.json"
        rec.write_text(json.dumps({"generations": [{"generation": 0}]}))
        assert cli.main(["hv-curve", str(rec), "--out", str(tmp_path / "x")]) == 1


class TestExitCodes:
    def test_missing_image_is_io_error(self, tmp_path):
        rc = cli.main(["segment", "--image", str(tmp_path / "nope.png"),
                       "--scale", "10", "--sigma", "0", "--min-size", "20",
                       "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_unknown_subcommand_is_usage_error(self):
        assert cli.main(["frobnicate"]) == 1

    def test_external_config_round_trip(self, tmp_path, toy_png):
        # config with an external classifier parses and handshakes
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "image": str(toy_png),
            "classifier": {"kind": "external", "command": list(fake_server_cmd("blob")),
                           "class_count": 2},
            "ga": {"population_size": 4, "max_generations": 2},
            "lime": {"n_samples": 8},
            "seeds": [5],
        }))
        out = tmp_path / "o"
        assert cli.main(["evolve", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "seed-5" / "run.json").exists()
