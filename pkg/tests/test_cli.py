import json

import numpy as np
import pytest

from rotdet import cascade, cli, imageio, synth
from rotdet.geometry import Box
from rotdet.pipeline import DetectedFace


class TestImageIO:
    def test_ppm_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, (13, 17, 3), dtype=np.uint8)
        path = tmp_path / "x.ppm"
        imageio.write_ppm(path, img)
        assert np.array_equal(imageio.read_ppm(path), img)

    def test_ppm_header_comments(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n2 1\n# another\n255\n" + bytes(6))
        img = imageio.read_ppm(path)
        assert img.shape == (1, 2, 3)

    def test_ppm_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(imageio.ImageReadError, match="P6"):
            imageio.read_ppm(path)

    def test_ppm_truncated(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(5))
        with pytest.raises(imageio.ImageReadError, match="truncated"):
            imageio.read_ppm(path)

    def test_annotate_draws_box(self):
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        out = imageio.annotate(img, [DetectedFace(box=Box(4, 4, 16),
                                                  theta_rip=0.0, score=1.0)])
        assert np.array_equal(out[4, 4], imageio.BOX_COLOR)
        assert np.array_equal(out[19, 19], imageio.BOX_COLOR)
        assert not img.any()  # input untouched
        # upward tick from the center
        assert (out == imageio.TICK_COLOR).all(axis=-1).any()


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory):
    """A briefly trained cascade shared by the CLI tests."""
    path = tmp_path_factory.mktemp("model") / "tiny.pcn"
    rc = cli.main(["train", "--out", str(path), "--seed", "3",
                   "--iters", "30", "--n-images", "12", "--eval-images", "0"])
    assert rc == cli.EXIT_OK
    return str(path)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    synth.save_corpus(synth.gen_synthetic(4, seed=5), d)
    return str(d)


class TestTrainCommand:
    def test_zero_iters_roundtrip(self, tmp_path):
        path = tmp_path / "m.pcn"
        rc = cli.main(["train", "--out", str(path), "--iters", "0",
                       "--n-images", "6", "--eval-images", "0"])
        assert rc == cli.EXIT_OK
        nets = cascade.load_cascade(path)
        assert set(nets) == {1, 2, 3}

    def test_deterministic_model_bytes(self, tmp_path):
        paths = [tmp_path / "a.pcn", tmp_path / "b.pcn"]
        for p in paths:
            rc = cli.main(["train", "--out", str(p), "--seed", "11",
                           "--iters", "15", "--n-images", "8",
                           "--eval-images", "0"])
            assert rc == cli.EXIT_OK
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_unwritable_output(self, tmp_path):
        rc = cli.main(["train", "--out", str(tmp_path / "no" / "dir" / "m.pcn"),
                       "--iters", "0", "--n-images", "6", "--eval-images", "0"])
        assert rc == cli.EXIT_DATA

    def test_missing_corpus_dir(self, tmp_path):
        rc = cli.main(["train", "--out", str(tmp_path / "m.pcn"),
                       "--data", str(tmp_path / "nowhere"), "--iters", "0"])
        assert rc == cli.EXIT_DATA


class TestDetectCommand:
    def test_jsonl_output(self, tiny_model, corpus_dir, tmp_path):
        img = f"{corpus_dir}/img_00000.ppm"
        out = tmp_path / "dets.jsonl"
        rc = cli.main(["detect", "--model", tiny_model, "--in", img,
                       "--json", str(out)])
        assert rc == cli.EXIT_OK
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(recs) == 1
        assert recs[0]["path"] == img
        for f in recs[0]["faces"]:
            assert set(f) == {"a", "b", "w", "theta", "score"}
            assert -180 < f["theta"] <= 180

    def test_deterministic_jsonl(self, tiny_model, corpus_dir, tmp_path):
        img = f"{corpus_dir}/img_00001.ppm"
        outs = [tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"]
        for o in outs:
            assert cli.main(["detect", "--model", tiny_model, "--in", img,
                             "--json", str(o)]) == cli.EXIT_OK
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_annotated_copy_written(self, tiny_model, corpus_dir, tmp_path):
        img = f"{corpus_dir}/img_00002.ppm"
        ann = tmp_path / "ann"
        rc = cli.main(["detect", "--model", tiny_model, "--in", img,
                       "--json", str(tmp_path / "d.jsonl"),
                       "--annotate", str(ann)])
        assert rc == cli.EXIT_OK
        assert (ann / "img_00002_det.ppm").exists()

    def test_bad_input_exit_code(self, tiny_model, tmp_path):
        rc = cli.main(["detect", "--model", tiny_model,
                       "--in", str(tmp_path / "missing.ppm"),
                       "--json", str(tmp_path / "d.jsonl")])
        assert rc == cli.EXIT_DATA

    def test_bad_model_exit_code(self, tmp_path, corpus_dir):
        bad = tmp_path / "junk.pcn"
        bad.write_bytes(b"not a model")
        rc = cli.main(["detect", "--model", str(bad),
                       "--in", f"{corpus_dir}/img_00000.ppm"])
        assert rc == cli.EXIT_DATA

    def test_threaded_matches_serial(self, tiny_model, corpus_dir, tmp_path,
                                     monkeypatch):
        imgs = [f"{corpus_dir}/img_0000{i}.ppm" for i in range(3)]
        serial = tmp_path / "serial.jsonl"
        threaded = tmp_path / "threaded.jsonl"
        assert cli.main(["detect", "--model", tiny_model, "--in", *imgs,
                         "--json", str(serial)]) == cli.EXIT_OK
        monkeypatch.setenv("PCN_THREADS", "3")
        assert cli.main(["detect", "--model", tiny_model, "--in", *imgs,
                         "--json", str(threaded)]) == cli.EXIT_OK
        assert serial.read_bytes() == threaded.read_bytes()


class TestEvalCommand:
    def test_metrics_printed(self, tiny_model, corpus_dir, capsys):
        rc = cli.main(["eval", "--model", tiny_model, "--data", corpus_dir,
                       "--fp-budget", "2"])
        assert rc == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "stage-1 orientation accuracy" in out
        assert "stage-3 mean abs angle error" in out
        for rot in (0, 90, 180, 270):
            assert f"rotated {rot:3d} deg" in out

    def test_missing_corpus(self, tiny_model, tmp_path):
        rc = cli.main(["eval", "--model", tiny_model,
                       "--data", str(tmp_path / "nope")])
        assert rc == cli.EXIT_DATA


class TestBenchCommand:
    def test_reports_throughput(self, tiny_model, capsys):
        rc = cli.main(["bench", "--model", tiny_model, "--width", "96",
                       "--height", "72", "--runs", "2"])
        assert rc == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "FPS mean" in out
        assert "candidates: proposed" in out
        assert "frame builds per image: 1.0" in out


class TestUsage:
    def test_no_command(self):
        assert cli.main([]) == cli.EXIT_USAGE

    def test_unknown_flag(self):
        assert cli.main(["train", "--nope"]) == cli.EXIT_USAGE

    def test_help_is_ok(self):
        assert cli.main(["--help"]) == cli.EXIT_OK
