import csv
from dataclasses import replace

import numpy as np
import pytest
import torch

from cddg.data import leave_one_out
from cddg.evaluation import (ABLATION_VARIANTS, ProbeError, RunResult, accuracy, export_embeddings,
                             export_projection, fit_probe, format_mean_std, parameter_hash, probe_disentanglement,
                             run_ablation, run_benchmark, summarize, trend_flags)
from cddg.networks import init_bundle


def test_format_mean_std():
    assert format_mean_std(0.875, 0.005) == "87.5 ± 0.5"


def test_summary_uses_sample_std():
    records = [RunResult("a", "TDVS", s, "full_comb", acc, "h", "c") for s, acc in enumerate([0.8, 0.9, 1.0])]
    (row,) = summarize(records)
    assert row.mean == pytest.approx(0.9)
    assert row.std == pytest.approx(0.1)
    assert row.n == 3


def test_single_seed_has_zero_std():
    (row,) = summarize([RunResult("a", "TDVS", 0, "erm", 0.5, "h", "c")])
    assert row.std == 0.0


def test_accuracy_on_examples(tiny_ds, tiny_spec):
    bundle = init_bundle(tiny_spec, tiny_ds.space, seed=0)
    examples = tiny_ds.examples[:20]
    acc = accuracy(bundle, examples)
    assert 0.0 <= acc <= 1.0
    assert accuracy(bundle, examples + examples) == acc
    with pytest.raises(ValueError):
        accuracy(bundle, ())


def test_benchmark_shape(tiny_ds, tiny_config):
    result = run_benchmark(tiny_config, tiny_ds, seeds=[0, 1])
    assert len(result.records) == 3 * 2 * 2
    assert {(r.target, r.method) for r in result.summary} == {
        (t, m) for t in tiny_ds.domain_names for m in ("TDVS", "Oracle")}
    assert all(r.n == 2 for r in result.summary)
    assert "±" in result.render()
    again = run_benchmark(tiny_config, tiny_ds, seeds=[0, 1])
    assert again.records == result.records
    with pytest.raises(ValueError):
        run_benchmark(tiny_config, tiny_ds, seeds=[])


def test_summary_matches_records(tiny_ds, tiny_config):
    result = run_benchmark(tiny_config, tiny_ds, seeds=[0, 1])
    for row in result.summary:
        accs = [r.accuracy for r in result.records if (r.target, r.method) == (row.target, row.method)]
        assert row.mean == pytest.approx(np.mean(accs))
        assert row.std == pytest.approx(np.std(accs, ddof=1))


def test_ablation_shape(tiny_ds, tiny_config):
    result = run_ablation(replace(tiny_config, steps=3), tiny_ds, seeds=[0])
    assert {r.variant for r in result.benchmark.records} == set(ABLATION_VARIANTS)
    assert len(result.benchmark.records) == 4 * 3 * 2
    table = result.render()
    for label in ("CDDG", "w/ L_dscl_ind", "w/o L_dscl_comb", "w/o L_ce_dis"):
        assert label in table
    assert set(result.flags) == {"full_comb >= disentangle_only", "full_comb >= full_ind",
                                 "full_comb >= contrastive_only"}


def test_trend_flags():
    records = [RunResult("a", "TDVS", 0, v, acc, "h", "c")
               for v, acc in (("full_comb", 0.8), ("disentangle_only", 0.7), ("full_ind", 0.9),
                              ("contrastive_only", 0.8))]
    flags = trend_flags(records)
    assert flags["full_comb >= disentangle_only"]["holds"]
    assert not flags["full_comb >= full_ind"]["holds"]
    assert flags["full_comb >= contrastive_only"]["holds"]


def test_probe_chance_and_frozen_weights(tiny_ds, tiny_spec):
    bundle = init_bundle(tiny_spec, tiny_ds.space, seed=0)
    before = parameter_hash(bundle)
    plan = leave_one_out(tiny_ds, "domain0", seed=0)
    reports = probe_disentanglement(bundle, plan, tiny_ds)
    assert parameter_hash(bundle) == before
    assert [(r.branch, r.target) for r in reports] == [("g_v", "class"), ("g_v", "domain"),
                                                       ("g_s", "class"), ("g_s", "domain")]
    for r in reports:
        assert r.chance == pytest.approx(1 / 3 if r.target == "class" else 1 / 2)
        assert 0.0 <= r.accuracy <= 1.0


def test_probe_on_constant_features_is_near_chance():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 4, 400)
    x = np.ones((400, 5))
    acc = fit_probe(x[:200], y[:200], x[200:], y[200:])
    assert acc <= 0.25 + 0.1


def test_probe_single_label():
    with pytest.raises(ProbeError):
        fit_probe(np.zeros((4, 2)), np.zeros(4), np.zeros((2, 2)), np.zeros(2))


def test_export_formats(tiny_ds, tiny_spec, tmp_path):
    bundle = init_bundle(tiny_spec, tiny_ds.space, seed=0)
    ids = [e.example_id for e in tiny_ds.examples[:5]]
    path = export_embeddings(bundle, tiny_ds, ids, tmp_path / "emb.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["example_id", "branch", "class_label", "domain_label"] + [f"e{i}" for i in range(8)]
    assert len(rows) == 1 + 2 * 5
    assert [r[1] for r in rows[1:3]] == ["g_v", "g_s"]
    x, _, _ = tiny_ds.tensors(ids[:1])
    with torch.no_grad():
        z = bundle.encode(x).z_v[0].double().numpy()
    assert np.allclose([float(v) for v in rows[1][4:]], z, rtol=1e-6)
    proj = list(csv.reader(export_projection(bundle, tiny_ds, ids, tmp_path / "p.csv").open()))
    assert proj[0][-2:] == ["pc1", "pc2"] and len(proj) == 11
