import json

import numpy as np
import pytest

import vlmprobe


def brute_force(tokens, num_layers, num_heads, input_len, n_vision):
    """Straight numpy reference: per-token reduction, partition, then mean."""
    triples = []
    for g, block in enumerate(tokens, start=1):
        w = np.asarray(block, dtype=np.float64).reshape(num_layers, num_heads, input_len + g - 1)
        a = w.mean(axis=(0, 1))
        triples.append([a[:n_vision].sum(), a[n_vision:input_len].sum(), a[input_len:].sum()] / a.sum())
    m = np.mean(triples, axis=0)
    return m / m.sum()


@pytest.fixture(scope="module")
def circles(tmp_path_factory):
    config = vlmprobe.default_dataset_config()
    config["shapes"] = ["circle"]
    out = tmp_path_factory.mktemp("dataset")
    manifest = vlmprobe.generate_dataset(out, config)
    return out, manifest


def test_prompts_fill_shape_slot():
    templates = vlmprobe.prompt_templates("synthetic")
    assert [t["level"] for t in templates] == [1, 2, 3]
    assert "<shape>" in templates[1]["text"]
    text = vlmprobe.instantiate_prompt("synthetic", 2, "star")
    assert text == templates[1]["text"].replace("<shape>", "stars")
    with pytest.raises(vlmprobe.VlmprobeError) as err:
        vlmprobe.instantiate_prompt("synthetic", 2)
    assert err.value.kind == "MissingShapeError"


def test_parsers_round_trip():
    for n in (0, 1, 9, 50, 1000):
        p = vlmprobe.parse_curly_count(vlmprobe.render_curly_answer(n))
        assert (p["status"], p["predicted_count"]) == ("ok", n)
    p = vlmprobe.parse_json_detections(vlmprobe.render_detection_answer(7, True, 3))
    assert (p["status"], p["predicted_count"], p["declared_count"]) == ("ok", 7, 7)
    assert vlmprobe.parse_curly_count("no number here")["status"] == "unparseable"


def test_attention_matches_numpy_reference():
    rng = np.random.default_rng(5)
    for _ in range(50):
        layers, heads = rng.integers(1, 4, size=2)
        input_len = int(rng.integers(2, 20))
        n_vision = int(rng.integers(0, input_len))
        gen = int(rng.integers(1, 6))
        tokens = [
            (rng.random(layers * heads * (input_len + g)) + 1e-3).astype(np.float32).tolist() for g in range(gen)
        ]
        got = vlmprobe.attention_proportions(int(layers), int(heads), input_len, tokens, n_vision)
        want = brute_force(tokens, layers, heads, input_len, n_vision)
        assert got["image"] == pytest.approx(want[0], abs=1e-12)
        assert got["prompt"] == pytest.approx(want[1], abs=1e-12)
        assert got["generated"] == pytest.approx(want[2], abs=1e-12)


def test_dataset_manifest(circles):
    out, manifest = circles
    entries = manifest["entries"]
    assert len(entries) == 50
    assert json.loads((out / "manifest.json").read_text())["entries"] == entries
    corpus = vlmprobe.load_corpus(out / "manifest.json")
    assert corpus["task_class"] == "synthetic"
    assert [e["ground_truth_count"] for e in corpus["entries"]] == [e["ground_truth_count"] for e in entries]


def test_mock_run_resume_and_report(circles, tmp_path):
    dataset, _ = circles
    manifests = [dataset / "manifest.json"]
    first = vlmprobe.run_mock(manifests, tmp_path, "overestimate", max_trials=40)
    assert (first["planned"], first["ok"]) == (150, 40)
    rest = vlmprobe.run_mock(manifests, tmp_path, "overestimate", parallelism=2)
    assert (rest["skipped"], rest["ok"], rest["failed"]) == (40, 110, 0)

    trials = vlmprobe.load_trials(tmp_path / "trials.jsonl")
    assert len(trials) == 150 and all(t["status"] == "ok" for t in trials)

    report = vlmprobe.analyze(tmp_path / "trials.jsonl")
    assert len(report["files"]) == 10
    # overestimate by +3 never hits the ground truth
    assert set(report["accuracy"].values()) == {0.0}
    assert (tmp_path / "report" / "accuracy.csv").read_text().startswith("# vlmprobe report")


def test_errors_carry_kind(tmp_path):
    with pytest.raises(vlmprobe.VlmprobeError) as err:
        vlmprobe.load_corpus(tmp_path / "missing.json")
    assert err.value.kind
    with pytest.raises(vlmprobe.VlmprobeError) as err:
        vlmprobe.run_mock([], tmp_path, "no-such-preset")
    assert err.value.kind == "UnknownPreset"
