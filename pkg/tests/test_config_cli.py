import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfhodg import cli
from mfhodg.config import PipelineConfig, load_config, resolve_channels, save_config
from mfhodg.descriptors import DescriptorSet, write_descriptor_dump
from mfhodg.encoding import GmmCodebook, save_codebook
from mfhodg.errors import ConfigError, DataError, NumericError, StageError


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.block_size, cfg.search_range, cfg.tau, cfg.stride) == (16, 7, 1.0, 5)
    assert (cfg.K, cfg.C, cfg.pca_dim) == (64, 100.0, None)
    assert cfg.channel_list == ("hog", "hof", "mbhx", "mbhy", "hodg")


def test_channel_selections():
    assert resolve_channels("rgb-trio") == ("hog", "hof", "mbhx", "mbhy")
    assert resolve_channels("hodg-only") == ("hodg",)
    assert resolve_channels("hodg,hog") == ("hog", "hodg")
    with pytest.raises(ConfigError):
        resolve_channels("depth")


@settings(max_examples=40, deadline=None)
@given(bs=st.integers(2, 32), sr=st.integers(1, 15), tau=st.floats(0, 10),
       K=st.integers(1, 256), C=st.floats(1e-3, 1e3), ch=st.sampled_from(["rgb-trio", "hodg",
                                                                           "rgb+hodg", "hof"]),
       pca=st.one_of(st.none(), st.integers(1, 64)), seed=st.integers(0, 2**31))
def test_config_round_trip(bs, sr, tau, K, C, ch, pca, seed):
    cfg = PipelineConfig(block_size=bs, search_range=sr, tau=tau, K=K, C=C, channels=ch,
                         pca_dim=pca, gmm_seed=seed)
    text = json.dumps(cfg.to_dict())
    back = PipelineConfig.from_dict(json.loads(text))
    assert back == cfg
    assert json.dumps(back.to_dict()) == text


def test_config_file_errors(tmp_path):
    p = tmp_path / "c.json"
    save_config(p, PipelineConfig(K=8))
    assert load_config(p).K == 8
    doc = json.loads(p.read_text())
    doc["kk"] = 3
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="unknown config keys: kk"):
        load_config(p)
    del doc["kk"]
    doc["version"] = 0
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="version"):
        load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")


@pytest.mark.parametrize("bad", [dict(K=0), dict(C=-1.0), dict(tau=-0.1), dict(stride=0),
                                 dict(grid=(3, 2, 3)), dict(channels="rgbd"),
                                 dict(block_size=2.5), dict(pca_dim=0)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        PipelineConfig(**bad)


def test_error_exit_codes():
    assert ConfigError("x").exit_code == 2
    assert DataError("x").exit_code == 3
    assert NumericError("x").exit_code == 4
    err = StageError("encode", NumericError("nan"))
    assert err.exit_code == 4 and "[encode]" in str(err)


def test_cli_missing_manifest(tmp_path, capsys):
    code = cli.main(["extract", str(tmp_path / "none.json"), "--out", str(tmp_path / "d.bin")])
    assert code == 3
    assert "manifest not found" in capsys.readouterr().err


def test_cli_bad_config_flag(tmp_path):
    assert cli.main(["bench", str(tmp_path / "m.json"), "--channels", "depth"]) == 2
    assert cli.main(["bench", str(tmp_path / "m.json"), "--K", "0"]) == 2


def test_cli_stale_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"format": "mfhodg-config", "version": 7}))
    assert cli.main(["run", "--split", str(tmp_path / "s.json"), "--config", str(p)]) == 2


def test_cli_stage_chain(tmp_path, capsys):
    """synth -> motion-estimate -> extract -> train-gmm -> encode -> train-svm -> eval."""
    corpus = tmp_path / "corpus"
    assert cli.main(["synth", "--corpus", "--out", str(corpus), "--train", "2", "--test", "1",
                     "--size", "96", "--frames", "20"]) == 0
    split = json.loads((corpus / "split.json").read_text())
    side = tmp_path / "motion.txt"
    first = str(corpus / split["train"][0]["manifest"])
    assert cli.main(["motion-estimate", first, "--out", str(side)]) == 0
    assert side.read_text().startswith("MF 0 6 6 16")

    dumps = {}
    for part in ("train", "test"):
        for i, entry in enumerate(split[part]):
            out = tmp_path / f"{part}{i}.bin"
            assert cli.main(["extract", str(corpus / entry["manifest"]), "--out", str(out),
                             "--channels", "hodg"]) == 0
            dumps.setdefault(part, []).append((str(out), entry["label"]))
    cb = tmp_path / "cb.json"
    assert cli.main(["train-gmm", *[d for d, _ in dumps["train"]], "--channel", "hodg",
                     "--K", "2", "--out", str(cb)]) == 0
    classes = "approach,rotate,translate"
    for part in ("train", "test"):
        items = [a for d, lab in dumps[part] for a in ("--item", d, lab)]
        assert cli.main(["encode", "--codebook", str(cb), *items, "--classes", classes,
                         "--out", str(tmp_path / f"fv_{part}.bin")]) == 0
    model = tmp_path / "model.json"
    assert cli.main(["train-svm", str(tmp_path / "fv_train.bin"), "--classes", classes,
                     "--out", str(model)]) == 0
    report = tmp_path / "report.json"
    assert cli.main(["eval", str(tmp_path / "fv_test.bin"), "--model", str(model),
                     "--out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["format"] == "mfhodg-report" and 0 <= doc["map"] <= 1
    assert "mAP" in capsys.readouterr().out

    bench_json = tmp_path / "bench.json"
    assert cli.main(["bench", first, "--pipeline", "hodg", "--repeats", "1", "--warmup", "0",
                     "--json", str(bench_json)]) == 0
    assert json.loads(bench_json.read_text())["pipeline"] == "hodg"


def test_cli_encode_unknown_label(tmp_path):
    save_codebook(tmp_path / "cb.json",
                  GmmCodebook(np.ones(1), np.zeros((1, 96)), np.ones((1, 96)), channel="hodg"))
    write_descriptor_dump(tmp_path / "d.bin",
                          DescriptorSet({"hodg": np.zeros((1, 96))}, np.zeros(1, int),
                                        np.zeros((1, 2))))
    code = cli.main(["encode", "--codebook", str(tmp_path / "cb.json"), "--item",
                     str(tmp_path / "d.bin"), "jump", "--classes", "walk,run",
                     "--out", str(tmp_path / "fv.bin")])
    assert code == 2
