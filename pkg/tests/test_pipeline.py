import dataclasses
import json

import numpy as np
import pytest

from mgcn.datagen import TwinConfig, generate_twins, synth_graph
from mgcn.errors import ConfigError, DataError
from mgcn.hypergraph import Hypergraph
from mgcn.model import ModelConfig
from mgcn.pipeline import (PipelineConfig, RunManifest, bench_csv,
                           bench_forward, build_hypergraph,
                           load_run_manifest, run_pipeline,
                           save_run_manifest)
from mgcn.predictor import ClassifierConfig, EvalReport
from mgcn.training import TrainConfig

SINGLE_STAGES = ["load", "split-anchors",
                 "g1:partition", "g1:hypergraph", "g1:train", "g1:merge",
                 "g2:partition", "g2:hypergraph", "g2:train", "g2:merge",
                 "anchor-map", "pairs", "classifier", "evaluate", "baseline"]


@pytest.fixture(scope="module")
def small_twins():
    base = synth_graph("preferential-attachment", 150, {"m": 3}, seed=5)
    return generate_twins(base, TwinConfig(alpha_s=0.9, alpha_c=0.9, seed=5))


def fast_config(workdir, **overrides):
    defaults = dict(
        workdir=str(workdir),
        model=ModelConfig(layers=2, dim=8, activation="tanh"),
        train=TrainConfig(epochs=15, batch_size=512, seed=0),
        classifier=ClassifierConfig(hidden=16, epochs=60),
        partitions="single",
        seed=11,
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


def test_single_partition_run_stages_and_artifacts(small_twins, tmp_path):
    config = fast_config(tmp_path / "run")
    manifest = run_pipeline(config, small_twins.g1, small_twins.g2,
                            small_twins.anchors)
    assert manifest.failed_stage is None
    assert manifest.stage_names() == SINGLE_STAGES
    assert isinstance(manifest.report, EvalReport)
    assert isinstance(manifest.baseline, EvalReport)
    total = (manifest.report.tp + manifest.report.fp
             + manifest.report.fn + manifest.report.tn)
    n_test = len(small_twins.anchors) - int(
        round(0.5 * len(small_twins.anchors)))
    assert total == 2 * n_test
    for name in ("config.json", "run.json", "anchors_train.txt",
                 "anchors_test.txt", "g1_embeddings.npz",
                 "g2_embeddings.npz", "anchor_map.npz", "classifier.npz",
                 "predictions.txt", "report.txt", "baseline_report.txt"):
        assert (tmp_path / "run" / name).exists(), name
    back = load_run_manifest(tmp_path / "run" / "run.json")
    assert back.report == manifest.report
    assert back.stage_names() == SINGLE_STAGES


def test_run_is_deterministic_for_fixed_seed(small_twins, tmp_path):
    reports = []
    embeddings = []
    for tag in ("a", "b"):
        config = fast_config(tmp_path / tag)
        manifest = run_pipeline(config, small_twins.g1, small_twins.g2,
                                small_twins.anchors)
        reports.append(manifest.report)
        with np.load(tmp_path / tag / "g1_embeddings.npz") as d:
            embeddings.append(d["embeddings"].copy())
    assert reports[0] == reports[1]
    assert np.array_equal(embeddings[0], embeddings[1])


def test_seed_changes_the_run(small_twins, tmp_path):
    embeddings = []
    for tag, seed in (("a", 11), ("b", 12)):
        config = fast_config(tmp_path / tag, seed=seed)
        run_pipeline(config, small_twins.g1, small_twins.g2,
                     small_twins.anchors)
        with np.load(tmp_path / tag / "g1_embeddings.npz") as d:
            embeddings.append(d["embeddings"].copy())
    assert not np.array_equal(embeddings[0], embeddings[1])


def test_multi_partition_run_covers_every_node(tmp_path):
    base = synth_graph("preferential-attachment", 240, {"m": 3}, seed=9)
    twins = generate_twins(base, TwinConfig(alpha_s=0.9, alpha_c=0.9,
                                            seed=9))
    config = fast_config(tmp_path / "run", partitions="auto", n_min=60,
                         n_max=120, n_shared=40,
                         train=TrainConfig(epochs=10, batch_size=512))
    manifest = run_pipeline(config, twins.g1, twins.g2, twins.anchors)
    assert manifest.failed_stage is None
    models = list((tmp_path / "run").glob("g1_model_*.npz"))
    assert len(models) >= 2
    assert (tmp_path / "run" / "g1_partition_maps.npz").exists()
    with np.load(tmp_path / "run" / "g1_embeddings.npz") as d:
        x = d["embeddings"]
    assert x.shape == (twins.g1.node_count, 8)
    assert np.isfinite(x).all()
    # merged rows must carry signal, not zero-fill
    assert np.linalg.norm(x, axis=1).min() > 0.0


def test_failed_stage_is_recorded(small_twins, tmp_path):
    # negative-pair sampling cannot satisfy an absurd ratio, so the
    # pairs stage fails and the manifest on disk must say so
    config = fast_config(tmp_path / "run", neg_ratio=1e6)
    with pytest.raises(DataError):
        run_pipeline(config, small_twins.g1, small_twins.g2,
                     small_twins.anchors)
    manifest = load_run_manifest(tmp_path / "run" / "run.json")
    assert manifest.failed_stage == "pairs"
    assert "DataError" in manifest.error
    assert manifest.report is None
    done = manifest.stage_names()
    assert "anchor-map" in done and "pairs" not in done


def test_pipeline_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig(hyper_strategy="bogus")
    with pytest.raises(ConfigError):
        PipelineConfig(partitions="two")
    with pytest.raises(ConfigError):
        PipelineConfig(mode="both")
    with pytest.raises(ConfigError):
        PipelineConfig(train_fraction=1.0)
    with pytest.raises(ConfigError):
        PipelineConfig(neg_ratio=0.0)
    with pytest.raises(ConfigError):
        PipelineConfig(jobs=0)
    with pytest.raises(ConfigError):
        PipelineConfig(graph1=str(tmp_path / "missing.txt"))


def test_run_manifest_roundtrip(tmp_path):
    report = EvalReport(tp=3, fp=1, fn=2, tn=4, macro_precision=0.7,
                        macro_recall=0.6, macro_f1=0.64)
    manifest = RunManifest(config={"seed": 3}, versions={"package": "x"},
                           stages=[{"name": "load", "seconds": 0.1,
                                    "outputs": []}],
                           report=report)
    path = tmp_path / "m.json"
    save_run_manifest(path, manifest)
    back = load_run_manifest(path)
    assert back.report == report
    assert back.baseline is None
    assert back.config == {"seed": 3}
    assert back.stage_names() == ["load"]


def test_build_hypergraph_dispatch(small_twins):
    g = small_twins.g1
    h = build_hypergraph(g, "neighborhood", {"hops": 1, "decay": 0.5})
    assert isinstance(h, Hypergraph)
    with pytest.raises(ConfigError):
        build_hypergraph(g, "bogus", {})
    with pytest.raises(DataError):
        build_hypergraph(g, "anchor", {"hops": 1}, anchor_nodes=None)
    ha = build_hypergraph(g, "anchor", {"hops": 1},
                          anchor_nodes=np.arange(10))
    assert 0 < ha.edge_count <= 10


def test_jobs_parallel_training_matches_serial(tmp_path):
    base = synth_graph("preferential-attachment", 200, {"m": 3}, seed=13)
    twins = generate_twins(base, TwinConfig(alpha_s=0.9, alpha_c=0.9,
                                            seed=13))
    embeddings = []
    for tag, jobs in (("serial", 1), ("parallel", 3)):
        config = fast_config(tmp_path / tag, partitions="auto", n_min=50,
                             n_max=100, n_shared=30, jobs=jobs,
                             train=TrainConfig(epochs=8, batch_size=512))
        run_pipeline(config, twins.g1, twins.g2, twins.anchors)
        with np.load(tmp_path / tag / "g1_embeddings.npz") as d:
            embeddings.append(d["embeddings"].copy())
    assert np.array_equal(embeddings[0], embeddings[1])


def test_bench_forward_rows_and_csv():
    rows = bench_forward([150], models=("gcn", "mgcn"), repeats=3, dim=8,
                         seed=2)
    assert [r["model"] for r in rows] == ["gcn", "mgcn"]
    assert all(r["nodes"] == 150 for r in rows)
    assert all(r["seconds"] > 0.0 for r in rows)
    text = bench_csv(rows)
    lines = text.strip().splitlines()
    assert lines[0] == "model,nodes,seconds"
    assert len(lines) == 3


def test_bench_rejects_unknown_model():
    with pytest.raises(ConfigError):
        bench_forward([100], models=("transformer",), repeats=1)


def test_config_to_dict_is_json_ready(tmp_path):
    config = fast_config(tmp_path)
    text = json.dumps(config.to_dict())
    data = json.loads(text)
    assert data["model"]["dim"] == 8
    assert data["partitions"] == "single"
    rebuilt = PipelineConfig(
        model=ModelConfig(**data.pop("model")),
        train=TrainConfig(**data.pop("train")),
        classifier=ClassifierConfig(**data.pop("classifier")),
        **data)
    assert dataclasses.asdict(rebuilt) == config.to_dict()
