import json

import numpy as np
import pytest

from mgcn.cli import main
from mgcn.graph import load_anchor_links, load_graph
from mgcn.predictor import (ClassifierConfig, load_report, pair_features,
                            save_classifier, train_classifier)


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def twin_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("twins")
    code = run_cli("datagen", "--kind", "preferential-attachment",
                   "--nodes", 150, "--param", "m=3", "--alpha-s", "0.9",
                   "--alpha-c", "0.9", "--seed", 5, "--out", out)
    assert code == 0
    return out


def test_datagen_outputs(twin_dir):
    for name in ("base.txt", "g1.txt", "g2.txt", "anchors.txt",
                 "manifest.json"):
        assert (twin_dir / name).exists(), name
    g1, labels1 = load_graph(twin_dir / "g1.txt")
    assert labels1 is not None and len(labels1) == g1.node_count
    manifest = json.loads((twin_dir / "manifest.json").read_text())
    assert manifest["alpha_s"] == 0.9
    pairs, labels = load_anchor_links(twin_dir / "anchors.txt")
    assert len(pairs) == len(labels) > 0


def test_run_subcommand_end_to_end(twin_dir, tmp_path):
    work = tmp_path / "run"
    code = run_cli("run", "--graph1", twin_dir / "g1.txt",
                   "--graph2", twin_dir / "g2.txt",
                   "--anchors", twin_dir / "anchors.txt",
                   "--workdir", work, "--partitions", "1",
                   "--dim", 8, "--epochs", 12, "--hidden", 16,
                   "--clf-epochs", 50, "--seed", 7)
    assert code == 0
    report = load_report(work / "report.txt")
    assert report.tp + report.fp + report.fn + report.tn > 0
    saved = json.loads((work / "config.json").read_text())
    assert saved["model"]["dim"] == 8
    assert saved["train"]["epochs"] == 12
    assert saved["partitions"] == "single"


def test_run_config_file_with_flag_override(twin_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "graph1": str(twin_dir / "g1.txt"),
        "graph2": str(twin_dir / "g2.txt"),
        "anchors": str(twin_dir / "anchors.txt"),
        "workdir": str(tmp_path / "run"),
        "partitions": "single",
        "model": {"dim": 8},
        "train": {"epochs": 10},
        "classifier": {"hidden": 16, "epochs": 40},
    }))
    code = run_cli("--config", cfg, "run", "--epochs", 14, "--seed", 7)
    assert code == 0
    saved = json.loads((tmp_path / "run" / "config.json").read_text())
    assert saved["model"]["dim"] == 8, "file setting must survive"
    assert saved["train"]["epochs"] == 14, "flag must beat file setting"


def test_staged_subcommands_chain(twin_dir, tmp_path):
    h1 = tmp_path / "h1.npz"
    h2 = tmp_path / "h2.npz"
    assert run_cli("build-hypergraph", "--graph", twin_dir / "g1.txt",
                   "--hops", 1, "--decay", "0.1", "--out", h1) == 0
    assert run_cli("build-hypergraph", "--graph", twin_dir / "g2.txt",
                   "--hops", 1, "--decay", "0.1", "--out", h2) == 0
    e1, e2 = tmp_path / "e1.npz", tmp_path / "e2.npz"
    for graph, hyper, model, emb in (
            (twin_dir / "g1.txt", h1, tmp_path / "m1.npz", e1),
            (twin_dir / "g2.txt", h2, tmp_path / "m2.npz", e2)):
        assert run_cli("train", "--graph", graph, "--hypergraph", hyper,
                       "--dim", 8, "--epochs", 8, "--seed", 7,
                       "--model-out", model, "--embeddings-out", emb) == 0
    amap = tmp_path / "amap.npz"
    assert run_cli("reconcile", "--phase", "anchor",
                   "--embeddings1", e1, "--embeddings2", e2,
                   "--anchors", twin_dir / "anchors.txt",
                   "--out", amap) == 0

    # a classifier checkpoint for the predict step
    with np.load(e1) as d:
        x1 = d["embeddings"]
    with np.load(e2) as d:
        x2 = d["embeddings"]
    pairs, labels = load_anchor_links(twin_dir / "anchors.txt")
    pos = np.array([(int(a), int(b)) for a, b in pairs], dtype=np.int64)
    # shifted pairs are distinct from each other and from the positives,
    # which sit near the diagonal after twin remapping
    left = np.arange(100, dtype=np.int64) % x1.shape[0]
    neg = np.column_stack([left, (left + 7) % x2.shape[0]])
    seen = {tuple(p) for p in pos.tolist()}
    neg = np.array([p for p in neg.tolist() if tuple(p) not in seen],
                   dtype=np.int64)
    all_pairs = np.concatenate([pos, neg])
    all_labels = np.concatenate([np.ones(len(pos), dtype=np.int64),
                                 np.zeros(len(neg), dtype=np.int64)])
    clf = train_classifier(pair_features(x1, x2, all_pairs), all_labels,
                           ClassifierConfig(hidden=16, epochs=40))
    clf_path = tmp_path / "clf.npz"
    save_classifier(clf_path, clf)

    truth = tmp_path / "truth.txt"
    lines = [f"{a} {b} {l}" for (a, b), l in zip(all_pairs, all_labels)]
    truth.write_text("\n".join(lines) + "\n")
    preds = tmp_path / "preds.txt"
    assert run_cli("predict", "--classifier", clf_path,
                   "--embeddings1", e1, "--embeddings2", e2,
                   "--anchor-map", amap, "--pairs", truth,
                   "--out", preds) == 0
    evals = tmp_path / "eval.txt"
    assert run_cli("evaluate", "--predictions", preds, "--truth", truth,
                   "--out", evals) == 0
    report = load_report(evals)
    assert (report.tp + report.fp + report.fn + report.tn
            == len(all_pairs))


def test_partition_subcommand(twin_dir, tmp_path):
    out = tmp_path / "parts.txt"
    code = run_cli("partition", "--graph", twin_dir / "g1.txt",
                   "--n-min", 40, "--n-max", 80, "--shared", 15,
                   "--seed", 3, "--out", out)
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("mgcn-partitions")
    shared = [ln for ln in lines if ln.startswith("s ")]
    owners = {ln.split()[1] for ln in lines if ln.startswith("p ")}
    assert len(shared) == 15
    assert len(owners) >= 2


def test_reconcile_partition_phase(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(60, 6))
    ids1 = np.arange(40)
    ids2 = np.arange(20, 60)
    rot = np.linalg.qr(rng.normal(size=(6, 6)))[0]
    np.savez(tmp_path / "p0.npz", embeddings=x[ids1], node_ids=ids1)
    np.savez(tmp_path / "p1.npz", embeddings=x[ids2] @ rot + 0.5,
             node_ids=ids2)
    shared = tmp_path / "shared.txt"
    shared.write_text("\n".join(str(v) for v in range(20, 40)))
    merged = tmp_path / "merged.npz"
    code = run_cli("reconcile", "--phase", "partition",
                   "--embeddings", tmp_path / "p0.npz", tmp_path / "p1.npz",
                   "--shared", shared, "--node-count", 60,
                   "--out", tmp_path / "maps.npz", "--merged-out", merged)
    assert code == 0
    with np.load(merged) as d:
        assert d["embeddings"].shape == (60, 6)


def test_bench_subcommand(tmp_path):
    out = tmp_path / "bench.csv"
    code = run_cli("bench", "--scales", "120", "--models", "gcn,mgcn",
                   "--repeats", 2, "--out", out)
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "model,nodes,seconds"
    assert len(lines) == 3


def test_exit_code_config_error(twin_dir, tmp_path):
    code = run_cli("run", "--graph1", tmp_path / "missing.txt",
                   "--graph2", twin_dir / "g2.txt",
                   "--anchors", twin_dir / "anchors.txt",
                   "--workdir", tmp_path / "run")
    assert code == 2
    code = run_cli("--config", tmp_path / "missing.json", "run")
    assert code == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("--config", bad, "run") == 2


def test_exit_code_data_error(twin_dir, tmp_path):
    code = run_cli("train", "--graph", tmp_path / "missing.txt",
                   "--hypergraph", tmp_path / "missing.npz",
                   "--model-out", tmp_path / "m.npz",
                   "--embeddings-out", tmp_path / "e.npz")
    assert code == 3
    bad = tmp_path / "bad_anchors.txt"
    bad.write_text("alice bob 1\n")
    code = run_cli("reconcile", "--phase", "anchor",
                   "--embeddings1", tmp_path / "missing1.npz",
                   "--embeddings2", tmp_path / "missing2.npz",
                   "--anchors", bad, "--out", tmp_path / "amap.npz")
    assert code == 3


def test_global_flags_both_sides_of_subcommand(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert run_cli("--seed", 4, "datagen", "--nodes", 60, "--out", out1) == 0
    assert run_cli("datagen", "--nodes", 60, "--seed", 4, "--out", out2) == 0
    assert (out1 / "g1.txt").read_text() == (out2 / "g1.txt").read_text()
