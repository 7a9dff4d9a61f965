import json

import numpy as np
import pytest

from gazesum.cli import main, read_config_file, resolve_config, split_by_project
from gazesum.exceptions import ConfigError
from gazesum.synth import make_corpus, synthetic_gaze, write_fixations, write_jsonl
from pipeline_util import EYE, gz, run_pipeline


def lines(path):
    return [json.loads(l) for l in open(path, encoding="utf-8")]


@pytest.fixture(scope="module")
def pipe(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipe"), n_methods=80, n_gaze=4, n_prog=3,
                        seeds="1,2,3,4,5")


def test_top_fraction_keeps_ten_percent(tmp_path):
    write_jsonl(tmp_path / "c.jsonl", make_corpus(100, 6, seed=2))
    gz("corpus-prepare", "--corpus", tmp_path / "c.jsonl", "--dedup", "false",
       "--top-fraction", "0.1", "--out", tmp_path / "o")
    kept = sum(len(lines(tmp_path / "o" / f"{s}.jsonl")) for s in ("train", "val", "test"))
    assert kept == 10
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert set(man["outputs"]) >= {"train.jsonl", "val.jsonl", "test.jsonl", "ast_vocab.json"}


def test_dedup_exclusion_and_disjoint_splits(tmp_path):
    recs = make_corpus(60, 5, seed=3)
    recs.append(dict(recs[0], id="zz_dup", project="proj99"))
    recs.append(dict(recs[1], id="m9999", project="projX"))
    write_jsonl(tmp_path / "c.jsonl", recs)
    gz("corpus-prepare", "--corpus", tmp_path / "c.jsonl", "--top-fraction", "1",
       "--exclude-projects", "projX", "--out", tmp_path / "o")
    parts = {s: lines(tmp_path / "o" / f"{s}.jsonl") for s in ("train", "val", "test")}
    allrec = [r for p in parts.values() for r in p]
    ids = [r["id"] for r in allrec]
    assert "zz_dup" not in ids and "m9999" not in ids
    assert len({r["source"] for r in allrec}) == len(allrec)
    projects = [{r["project"] for r in p} for p in parts.values()]
    assert all(p for p in projects)
    assert not (projects[0] & projects[1] or projects[0] & projects[2] or projects[1] & projects[2])


def test_too_few_projects_exit_code(tmp_path):
    write_jsonl(tmp_path / "c.jsonl", make_corpus(20, 2, seed=0))
    assert main(["corpus-prepare", "--corpus", str(tmp_path / "c.jsonl"), "--top-fraction", "1",
                 "--out", str(tmp_path / "o")]) == 11


def test_split_by_project():
    parts = split_by_project({f"p{i}": 10 for i in range(20)})
    assert [len(p) for p in parts] == [18, 1, 1]
    parts = split_by_project({"a": 100, "b": 1, "c": 1})
    assert sorted(map(len, parts)) == [1, 1, 1]
    with pytest.raises(ConfigError):
        split_by_project({"a": 1, "b": 2})


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("# comment\ntop_fraction = 0.5\nseed = 9\nvocab-size=77\n")
    vals = read_config_file(cfg_file)
    cfg = resolve_config("corpus-prepare", vals, {"top_fraction": "0.25"}, None)
    assert cfg["top_fraction"] == 0.25 and cfg["vocab_size"] == 77 and cfg["seed"] == 9
    assert resolve_config("corpus-prepare", vals, {}, 3)["seed"] == 3
    with pytest.raises(ConfigError):
        resolve_config("corpus-prepare", {"bogus": "1"}, {}, None)
    with pytest.raises(ConfigError):
        resolve_config("corpus-prepare", {"top_fraction": "lots"}, {}, None)


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["train-eye", "--config", str(bad), "--out", str(tmp_path / "o")]) == 31
    assert main(["train-eye", "--ptgt", str(tmp_path / "missing.jsonl"), "--corpus",
                 str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 36
    (tmp_path / "broken.jsonl").write_text("{not json\n")
    assert main(["corpus-prepare", "--corpus", str(tmp_path / "broken.jsonl"),
                 "--out", str(tmp_path / "o")]) == 12
    with pytest.raises(SystemExit) as e:
        main(["train-eye", "--no-such-flag", "1"])
    assert e.value.code == 2


def test_manifest_reproducible(tmp_path):
    write_jsonl(tmp_path / "c.jsonl", make_corpus(40, 5, seed=1))
    for d in ("a", "b"):
        gz("corpus-prepare", "--corpus", tmp_path / "c.jsonl", "--top-fraction", "1",
           "--seed", "4", "--out", tmp_path / d)
    a = (tmp_path / "a" / "manifest.json").read_text()
    assert a == (tmp_path / "b" / "manifest.json").read_text()
    assert json.loads(a)["config"]["seed"] == 4


def test_eval_eye_table(tmp_path):
    recs = make_corpus(4, 2, seed=8)
    write_jsonl(tmp_path / "c.jsonl", recs)
    progs = [f"P{i}" for i in range(9)]
    write_fixations(tmp_path / "f.csv", synthetic_gaze(recs, progs, seed=2))
    gz("gaze-ingest", "--fixations", tmp_path / "f.csv", "--corpus", tmp_path / "c.jsonl",
       "--out", tmp_path / "g")
    inter = json.loads((tmp_path / "g" / "inter_programmer.json").read_text())
    assert set(inter) >= set(progs)
    gz("eval-eye", "--ptgt", tmp_path / "g" / "ptgt.jsonl", "--corpus", tmp_path / "c.jsonl",
       *EYE[:4], "--epochs", "2", "--out", tmp_path / "e")
    table = (tmp_path / "e" / "table.txt").read_text().splitlines()
    assert len(table) == 1 + 4 + 2
    assert table[-2].startswith("m. avg.") and table[-1].startswith("p. avg.")
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert len(man["results"]["mean_curve"]) == 2


def test_pipeline_outputs(pipe):
    attn = lines(pipe["attn"] / "attention.jsonl")
    assert all(len(r["ptgt_hat"]) == len(r["node_labels"]) for r in attn)
    assert all(min(r["ptgt_hat"]) > 0 and max(r["ptgt_hat"]) < 1 for r in attn)
    for name in ("ebase", "eaug"):
        rep = json.loads((pipe[name] / "report.json").read_text())
        assert len(rep["meteor_scores"]) == len(rep["metadata"]["method_ids"])
        assert 0 <= rep["bleu"] <= 100 and rep["metadata"]["name"] in ("baseline", "augmented")
    assert (pipe["rep"] / "report.txt").read_text().strip()
    assert (pipe["eye"] / "eye.ckpt").exists()


def test_control_random_five_seeds(pipe):
    files = sorted(p.name for p in pipe["ctl"].glob("attention_seed*.jsonl"))
    assert files == [f"attention_seed{s}.jsonl" for s in range(1, 6)]
    vecs = [np.array(lines(pipe["ctl"] / f)[0]["ptgt_hat"]) for f in files]
    assert all(abs(v.mean() - 1) < 1e-9 for v in vecs)
    assert not np.array_equal(vecs[0], vecs[1])
    rep = json.loads((pipe["ctl"] / "control_report.json").read_text())
    assert len(rep["seeds"]) == 5 and {"min", "mean", "max"} <= set(rep["summary"]["mean_meteor"])
    losses = {r["final_loss"] for r in rep["seeds"].values()}
    assert len(losses) == 5


def test_heatmap_output(pipe):
    mid = pipe["gaze_methods"][0]["id"]
    doc = (pipe["heat"] / f"heatmap_{mid}.html").read_text()
    assert doc.startswith("<!DOCTYPE html>") and 'class="tok"' in doc
    out = pipe["root"] / "heat_h"
    gz("heatmap", "--corpus", pipe["root"] / "gaze_corpus.jsonl", "--method-id", mid,
       "--attention-source", "human", "--attention", pipe["gaze"] / "ptgt.jsonl", "--out", out)
    assert (out / f"heatmap_{mid}.html").exists()
    assert main(["heatmap", "--corpus", str(pipe["root"] / "gaze_corpus.jsonl"), "--method-id",
                 "nope", "--attention", str(pipe["attn"] / "attention.jsonl"),
                 "--out", str(out)]) == 95
