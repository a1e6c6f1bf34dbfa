import math

import numpy as np
import pytest

import pathm3


def softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_exact_attention_matches_numpy():
    rng = np.random.default_rng(0)
    q, k, v = (rng.standard_normal((7, 4)) for _ in range(3))
    want = softmax_rows(q @ k.T / 2.0) @ v
    np.testing.assert_allclose(pathm3.exact_attention(q, k, v), want, atol=1e-12)


def test_nystrom_full_landmarks_is_exact():
    rng = np.random.default_rng(1)
    q, k, v = (rng.standard_normal((16, 8)) for _ in range(3))
    got = pathm3.nystrom_attention(q, k, v, landmarks=16, pinv_iterations=30)
    np.testing.assert_allclose(got, pathm3.exact_attention(q, k, v), atol=1e-6)


def test_pinv_of_softmax_matrix():
    rng = np.random.default_rng(2)
    a = softmax_rows(rng.standard_normal((12, 12)))
    np.testing.assert_allclose(pathm3.pinv(a, iterations=30), np.linalg.pinv(a), atol=1e-6)


def test_bleu4_hand_example():
    assert pathm3.bleu4([1, 2, 3, 4, 5], [[1, 2, 3, 4, 6]]) == pytest.approx(0.2 ** 0.25, abs=1e-12)
    assert pathm3.mean_bleu4([[1, 2, 3, 4]], [[1, 2, 3, 4]]) == pytest.approx(1.0)


def test_loglog_slope():
    x = [1.0, 2.0, 4.0, 8.0]
    assert pathm3.loglog_slope(x, [v * v for v in x]) == pytest.approx(2.0)


def test_config_presets_and_overrides():
    assert "desk" in pathm3.preset_names()
    cfg = pathm3.config("desk", alpha=0.25, use_correlation=False)
    assert cfg["alpha"] == 0.25
    assert cfg["use_correlation"] is False
    names = {k["name"] for k in pathm3.config_keys()}
    assert {"alpha", "d_model", "landmark_count"} <= names
    with pytest.raises(pathm3.Error, match="alpha"):
        pathm3.config("desk", alpha=1.5)


def test_grad_check_tiny():
    rep = pathm3.grad_check("tiny")
    assert rep["passed"]
    assert rep["max_rel_error"] < 1e-2


def test_feature_round_trip(tmp_path):
    rows = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    path = tmp_path / "bag.pm3f"
    pathm3.write_features(rows, path)
    np.testing.assert_array_equal(pathm3.read_features(path), rows)


def test_bench_rows():
    rows = pathm3.bench([32, 64], landmarks=8, repeats=1, head_dim=8)
    assert {r["method"] for r in rows} == {"exact", "nystrom"}
    assert all(r["wall_ms"] >= 0 for r in rows)


def test_cli_pipeline(tmp_path):
    data, runs = str(tmp_path / "data"), str(tmp_path / "runs")
    common = ["--preset", "tiny", "--data_dir", data, "--runs_dir", runs]
    code, out, err = pathm3.run_cli(["gen-data", *common])
    assert code == 0, err
    code, out, err = pathm3.run_cli(["train", *common])
    assert code == 0, err
    code, out, err = pathm3.run_cli(["eval", *common])
    assert code == 0, err
    assert (tmp_path / "runs").is_dir()
    code, _, err = pathm3.run_cli(["nonsense"])
    assert code == 1
