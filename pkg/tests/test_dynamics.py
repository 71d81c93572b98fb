"""Features, the dynamics predictor, top-K selection, and feature files."""

import struct
import zlib

import numpy as np
import pytest

from conftest import identity_motion_embeddings, make_obs
from xicm.demo_store import Observation
from xicm.dynamics import (
    BASE_MODE_TAG,
    D_LANG,
    D_VIS,
    DemoEmbedding,
    DynamicsFeature,
    DynamicsPredictor,
    FeatureMode,
    TrainConfig,
    baseline_vis_feature,
    constant_mean_loss,
    cosine_similarity,
    dynamics_feature,
    embed_dataset,
    embed_demo,
    embed_query,
    export_features,
    gradient_check,
    import_features,
    lang_feature,
    load_embeddings,
    pool_features,
    read_feature_file,
    save_embeddings,
    select_top_k,
    train_dynamics_predictor,
    training_matrices,
    write_feature_file,
)
from xicm.errors import (
    DimensionMismatch,
    FeatureFileError,
    TrainingDiverged,
    TrainingFailed,
    XicmError,
)


# -- visual pooling


def test_pooling_exact_on_divisible_image():
    # 16x16: every 8x8 cell covers a uniform 2x2 patch with a known color
    img = np.zeros((16, 16, 3), dtype=np.uint8)
    for i in range(8):
        for j in range(8):
            img[2 * i:2 * i + 2, 2 * j:2 * j + 2] = (10 + i, 20 + j, 3 * (i * 8 + j))
    obs = Observation(width=16, height=16, rgb=img.tobytes(), joint_velocities=(0.0,), gripper_open=True, timestep=0)
    feat = baseline_vis_feature(obs)
    assert feat.shape == (192,)
    assert feat.dtype == np.float32
    expected = np.zeros(192, dtype=np.float64)
    for i in range(8):
        for j in range(8):
            base = (i * 8 + j) * 3
            expected[base:base + 3] = [(10 + i) / 255.0, (20 + j) / 255.0, 3 * (i * 8 + j) / 255.0]
    assert np.array_equal(feat, expected.astype(np.float32))


def test_pooling_partitions_non_divisible_image():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(10, 10, 3), dtype=np.uint8)
    obs = Observation(width=10, height=10, rgb=img.tobytes(), joint_velocities=(0.0,), gripper_open=True, timestep=0)
    feat = baseline_vis_feature(obs)

    edges = [(i * 10) // 8 for i in range(9)]
    expected = np.zeros((8, 8, 3), dtype=np.float64)
    as_float = img.astype(np.float64)
    for i in range(8):
        for j in range(8):
            cell = as_float[edges[i]:edges[i + 1], edges[j]:edges[j + 1]]
            expected[i, j] = cell.mean(axis=(0, 1))
    assert np.array_equal(feat, (expected.reshape(-1) / 255.0).astype(np.float32))


def test_pooling_rejects_too_small_image():
    obs = Observation(width=4, height=8, rgb=b"\x00" * 96, joint_velocities=(0.0,), gripper_open=True, timestep=0)
    with pytest.raises(DimensionMismatch):
        baseline_vis_feature(obs)


# -- language hashing


def test_lang_feature_matches_independent_recomputation():
    text = "push the button"
    expected = np.zeros(D_LANG, dtype=np.float64)
    grams = ["push", "the", "button", "push the", "the button"]
    for gram in grams:
        expected[zlib.crc32(gram.encode("utf-8")) % D_LANG] += 1.0
    expected /= np.linalg.norm(expected)
    assert np.array_equal(lang_feature(text), expected.astype(np.float32))


def test_lang_feature_normalization_and_empty():
    assert np.linalg.norm(lang_feature("stack the cup on the other cup")) == pytest.approx(1.0, abs=1e-6)
    assert not lang_feature("").any()
    assert not lang_feature("?!").any()


def test_lang_feature_case_and_punctuation_invariant():
    assert np.array_equal(lang_feature("Push, THE button!"), lang_feature("push the button"))


def test_lang_feature_discriminates():
    assert not np.array_equal(lang_feature("push the button"), lang_feature("open the drawer"))


# -- embeddings


def test_embed_demo_and_query_shapes(small_dataset):
    demo = small_dataset.demos[0]
    emb = embed_demo(demo)
    assert emb.demo_id == demo.id
    assert emb.vis_first.shape == (D_VIS,)
    assert emb.vis_last.shape == (D_VIS,)
    assert emb.lang.shape == (D_LANG,)

    q = embed_query(demo.observations[0], demo.language)
    assert q.vis_last is None
    assert np.array_equal(q.vis_first, emb.vis_first)
    assert np.array_equal(q.lang, emb.lang)


def test_embed_dataset_aligned_with_demos(small_dataset, small_embeddings):
    assert [e.demo_id for e in small_embeddings] == [d.id for d in small_dataset.demos]


# -- predictor math


def _toy_problem(seed=3, n=5, d_vis=6, d_lang=4, hidden=5):
    rng = np.random.default_rng(seed)
    pred = DynamicsPredictor(d_vis=d_vis, d_lang=d_lang, hidden=hidden, seed=seed)
    x = rng.normal(size=(n, d_vis + d_lang))
    t = rng.normal(size=(n, d_vis))
    return pred, x, t


def test_analytic_gradients_match_finite_differences():
    pred, x, t = _toy_problem()
    rng = np.random.default_rng(17)
    sizes = {"w1": pred.w1.size, "b1": pred.b1.size, "w2": pred.w2.size, "b2": pred.b2.size}
    coords = []
    for _ in range(10):
        name = ["w1", "b1", "w2", "b2"][int(rng.integers(0, 4))]
        coords.append((name, int(rng.integers(0, sizes[name]))))
    assert gradient_check(pred, x, t, coords) < 1e-4


def test_manual_finite_difference_single_coordinate():
    pred, x, t = _toy_problem(seed=8)
    _, grads = pred.loss_and_grads(x, t)
    step = 1e-6
    orig = pred.b2[0]
    pred.b2[0] = orig + step
    plus = pred.loss(x, t)
    pred.b2[0] = orig - step
    minus = pred.loss(x, t)
    pred.b2[0] = orig
    fd = (plus - minus) / (2 * step)
    assert grads["b2"][0] == pytest.approx(fd, rel=1e-5)


def test_predict_shape_and_dimension_check():
    pred, x, _ = _toy_problem()
    out = pred.predict(x[0, :6], x[0, 6:])
    assert out.shape == (6,)
    with pytest.raises(DimensionMismatch):
        pred.predict(np.zeros(5), np.zeros(4))


def test_constant_mean_loss_hand_value():
    assert constant_mean_loss(np.array([[0.0], [2.0]])) == pytest.approx(1.0)
    assert constant_mean_loss(np.array([[3.0], [3.0]])) == 0.0


def test_training_matrices_require_final_frames(small_embeddings):
    x, t = training_matrices(small_embeddings)
    assert x.shape == (24, D_VIS + D_LANG)
    assert t.shape == (24, D_VIS)
    broken = [DemoEmbedding("q", small_embeddings[0].vis_first, small_embeddings[0].lang)]
    with pytest.raises(XicmError):
        training_matrices(broken)


# -- training behavior


def test_identity_motion_fixture_trains_below_threshold(small_embeddings):
    fixture = identity_motion_embeddings(small_embeddings)
    pred, history = train_dynamics_predictor(fixture)
    assert pred.final_loss < 1e-3
    assert pred.final_loss < pred.baseline_loss
    assert len(history) == TrainConfig().epochs
    assert pred.final_loss == history[-1]


def test_training_is_bit_reproducible(small_embeddings):
    # short run: mechanics only, so the quality gate stays out of the way
    cfg = TrainConfig(epochs=50, check_beats_baseline=False)
    a, hist_a = train_dynamics_predictor(small_embeddings, cfg)
    b, hist_b = train_dynamics_predictor(small_embeddings, cfg)
    assert hist_a == hist_b
    for name in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_training_seed_changes_weights(small_embeddings):
    cfg = TrainConfig(epochs=20, check_beats_baseline=False)
    a, _ = train_dynamics_predictor(small_embeddings, cfg)
    b, _ = train_dynamics_predictor(small_embeddings, TrainConfig(
        epochs=20, seed=1, check_beats_baseline=False))
    assert not np.array_equal(a.w1, b.w1)


def test_training_diverges_on_absurd_learning_rate(small_embeddings):
    with np.errstate(over="ignore"), pytest.raises(TrainingDiverged):
        train_dynamics_predictor(
            small_embeddings,
            TrainConfig(learning_rate=1e12, epochs=60, check_beats_baseline=False),
        )


def test_untrained_predictor_fails_baseline_check(small_embeddings):
    with pytest.raises(TrainingFailed):
        train_dynamics_predictor(small_embeddings, TrainConfig(epochs=0))
    # the check can be disabled for degenerate fixtures
    pred, history = train_dynamics_predictor(
        small_embeddings, TrainConfig(epochs=0, check_beats_baseline=False)
    )
    assert history == []
    assert pred.final_loss >= pred.baseline_loss


def test_predictor_save_load_round_trip(small_predictor, tmp_path):
    path = tmp_path / "pred.npz"
    small_predictor.save(path)
    again = DynamicsPredictor.load(path)
    for name in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(again, name), getattr(small_predictor, name))
    assert again.final_loss == small_predictor.final_loss
    assert again.baseline_loss == small_predictor.baseline_loss
    x = np.zeros(D_VIS)
    lang = lang_feature("push the button")
    assert np.array_equal(again.predict(x, lang), small_predictor.predict(x, lang))


# -- similarity and selection


def _lang_feat(demo_id: str, vec) -> DynamicsFeature:
    return DynamicsFeature(
        demo_id=demo_id,
        mode=FeatureMode.LANG,
        vis=np.zeros(0, dtype=np.float32),
        lang=np.asarray(vec, dtype=np.float32),
    )


def test_cosine_hand_values():
    a = _lang_feat("a", [1.0, 0.0])
    b = _lang_feat("b", [0.0, 2.0])
    c = _lang_feat("c", [3.0, 0.0])
    d = _lang_feat("d", [-1.0, 0.0])
    assert cosine_similarity(a, b) == pytest.approx(0.0)
    assert cosine_similarity(a, c) == pytest.approx(1.0)
    assert cosine_similarity(a, d) == pytest.approx(-1.0)


def test_cosine_zero_vector_scores_zero():
    a = _lang_feat("a", [0.0, 0.0])
    b = _lang_feat("b", [1.0, 1.0])
    assert cosine_similarity(a, b) == 0.0


def test_cosine_rejects_incompatible_features():
    a = _lang_feat("a", [1.0, 0.0])
    b = _lang_feat("b", [1.0, 0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        cosine_similarity(a, b)
    c = DynamicsFeature("c", FeatureMode.VIS_IN, np.ones(2, dtype=np.float32), np.zeros(0, dtype=np.float32))
    with pytest.raises(DimensionMismatch):
        cosine_similarity(a, c)


def test_select_top_k_matches_bruteforce_oracle():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(1, 201))
        k = int(rng.integers(1, n + 1))
        dim = int(rng.integers(2, 25))
        vectors = rng.normal(size=(n, dim)).astype(np.float32)
        # force exact duplicates so tie-breaking gets exercised
        for i in range(n):
            if i and rng.random() < 0.15:
                vectors[i] = vectors[int(rng.integers(0, i))]
        pool = [_lang_feat(f"d{i}", vectors[i]) for i in range(n)]
        query = _lang_feat("q", rng.normal(size=dim).astype(np.float32))

        scores = [cosine_similarity(query, p) for p in pool]
        expected = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
        result = select_top_k(query, pool, k)
        assert list(result.indices) == expected
        assert list(result.scores) == [scores[i] for i in expected]


def test_select_top_k_invariant_to_positive_scaling():
    rng = np.random.default_rng(43)
    for _ in range(20):
        n = int(rng.integers(2, 60))
        vectors = rng.normal(size=(n, 12)).astype(np.float32)
        pool = [_lang_feat(f"d{i}", vectors[i]) for i in range(n)]
        query = _lang_feat("q", rng.normal(size=12).astype(np.float32))
        base = select_top_k(query, pool, int(rng.integers(1, n + 1)))

        # power-of-two scales keep every float op exact
        scales = 2.0 ** rng.integers(-3, 4, size=n)
        scaled_pool = [_lang_feat(f"d{i}", vectors[i] * scales[i]) for i in range(n)]
        scaled = select_top_k(query, scaled_pool, len(base.indices))
        assert scaled.indices == base.indices
        assert scaled.scores == base.scores


def test_select_top_k_tie_break_prefers_lower_index():
    v = np.array([1.0, 1.0], dtype=np.float32)
    pool = [_lang_feat("a", v), _lang_feat("b", 2 * v), _lang_feat("c", [1.0, 0.0])]
    result = select_top_k(_lang_feat("q", v), pool, 2)
    assert result.indices == (0, 1)


def test_select_top_k_validates_k():
    pool = [_lang_feat("a", [1.0, 0.0])]
    query = _lang_feat("q", [1.0, 0.0])
    with pytest.raises(XicmError):
        select_top_k(query, pool, 0)
    with pytest.raises(XicmError):
        select_top_k(query, pool, 2)


# -- feature assembly


def test_dynamics_feature_segments(small_embeddings, small_predictor):
    emb = small_embeddings[0]
    for mode, vis_len, lang_len in [
        (FeatureMode.VIS_IN, D_VIS, 0),
        (FeatureMode.VIS_OUT, D_VIS, 0),
        (FeatureMode.LANG, 0, D_LANG),
        (FeatureMode.VIS_OUT_LANG, D_VIS, D_LANG),
        (FeatureMode.VIS_IN_LANG, D_VIS, D_LANG),
        (FeatureMode.VIS_IN_VIS_OUT, 2 * D_VIS, 0),
        (FeatureMode.ALL, 2 * D_VIS, D_LANG),
    ]:
        feat = dynamics_feature(emb, small_predictor, mode)
        assert (len(feat.vis), len(feat.lang)) == (vis_len, lang_len)
        assert feat.dim == vis_len + lang_len
        assert feat.vector().shape == (feat.dim,)


def test_vis_out_mode_requires_predictor(small_embeddings):
    with pytest.raises(XicmError):
        dynamics_feature(small_embeddings[0], None, FeatureMode.VIS_OUT_LANG)
    feat = dynamics_feature(small_embeddings[0], None, FeatureMode.VIS_IN_LANG)
    assert feat.dim == D_VIS + D_LANG


def test_feature_mode_parse():
    assert FeatureMode.parse("vis_out+lang") is FeatureMode.VIS_OUT_LANG
    with pytest.raises(XicmError):
        FeatureMode.parse("nope")


# -- feature files


def test_export_import_round_trip(small_embeddings, small_predictor, tmp_path):
    features = pool_features(small_embeddings, small_predictor, FeatureMode.VIS_OUT_LANG)
    path = tmp_path / "feat.bin"
    export_features(features, path, source="unit-test")
    again = import_features(path)
    assert len(again) == len(features)
    for orig, back in zip(features, again):
        assert back.demo_id == orig.demo_id
        assert back.mode is orig.mode
        assert np.array_equal(back.vis, orig.vis)
        assert np.array_equal(back.lang, orig.lang)
    assert read_feature_file(path).source == "unit-test"


def test_save_load_embeddings_round_trip(small_embeddings, tmp_path):
    path = tmp_path / "base.bin"
    save_embeddings(small_embeddings, path)
    again = load_embeddings(path)
    assert [e.demo_id for e in again] == [e.demo_id for e in small_embeddings]
    for orig, back in zip(small_embeddings, again):
        assert np.array_equal(back.vis_first, orig.vis_first)
        assert np.array_equal(back.vis_last, orig.vis_last)
        assert np.array_equal(back.lang, orig.lang)


def test_import_rejects_base_file_and_vice_versa(small_embeddings, small_predictor, tmp_path):
    base_path = tmp_path / "base.bin"
    save_embeddings(small_embeddings, base_path)
    with pytest.raises(FeatureFileError):
        import_features(base_path)

    sel_path = tmp_path / "sel.bin"
    export_features(pool_features(small_embeddings, small_predictor), sel_path)
    with pytest.raises(FeatureFileError):
        load_embeddings(sel_path)


def test_import_external_wide_features(tmp_path):
    # a hypothetical heavyweight video model exporting 1024-dim latents
    rng = np.random.default_rng(1)
    entries = [(f"ext-{i}", rng.normal(size=1024).astype(np.float32)) for i in range(3)]
    path = tmp_path / "wide.bin"
    write_feature_file(path, "vis_out", d_vis=1024, d_lang=0, entries=entries)
    feats = import_features(path)
    assert len(feats) == 3
    assert feats[0].mode is FeatureMode.VIS_OUT
    assert feats[0].vis.shape == (1024,)
    assert feats[0].lang.shape == (0,)
    assert np.array_equal(feats[2].vis, entries[2][1])


def test_write_rejects_bad_entries(tmp_path):
    path = tmp_path / "bad.bin"
    with pytest.raises(FeatureFileError):
        write_feature_file(path, "lang", 0, 4, [("a", np.zeros(3, dtype=np.float32))])
    with pytest.raises(FeatureFileError):
        write_feature_file(path, "lang", 0, 2, [("a", np.array([1.0, np.nan], dtype=np.float32))])


def test_export_rejects_mixed_modes(small_embeddings, small_predictor, tmp_path):
    a = dynamics_feature(small_embeddings[0], small_predictor, FeatureMode.VIS_OUT_LANG)
    b = dynamics_feature(small_embeddings[1], None, FeatureMode.LANG)
    with pytest.raises(FeatureFileError):
        export_features([a, b], tmp_path / "mixed.bin")
    with pytest.raises(FeatureFileError):
        export_features([], tmp_path / "empty.bin")


def test_read_rejects_bad_magic(tmp_path):
    path = tmp_path / "feat.bin"
    write_feature_file(path, "lang", 0, 2, [("a", np.array([1.0, 2.0], dtype=np.float32))])
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FeatureFileError) as err:
        read_feature_file(path)
    assert err.value.offset == 0
    assert "magic" in str(err.value)


def test_read_rejects_unsupported_version(tmp_path):
    path = tmp_path / "feat.bin"
    write_feature_file(path, "lang", 0, 2, [("a", np.array([1.0, 2.0], dtype=np.float32))])
    data = bytearray(path.read_bytes())
    data[8:12] = struct.pack("<I", 9)
    path.write_bytes(bytes(data))
    with pytest.raises(FeatureFileError) as err:
        read_feature_file(path)
    assert "version" in str(err.value)
    assert err.value.offset == 8


def test_read_reports_truncation_offset(tmp_path):
    path = tmp_path / "feat.bin"
    write_feature_file(path, "lang", 0, 2, [("a", np.array([1.0, 2.0], dtype=np.float32))])
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(FeatureFileError) as err:
        read_feature_file(path)
    assert "truncated" in str(err.value)
    assert err.value.offset == len(data) - 8  # vector read starts before the cut


def test_read_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "feat.bin"
    write_feature_file(path, "lang", 0, 2, [("a", np.array([1.0, 2.0], dtype=np.float32))])
    data = path.read_bytes()
    path.write_bytes(data + b"\x00")
    with pytest.raises(FeatureFileError) as err:
        read_feature_file(path)
    assert "trailing" in str(err.value)
    assert err.value.offset == len(data)


def test_read_rejects_nan_payload(tmp_path):
    path = tmp_path / "feat.bin"
    write_feature_file(path, "lang", 0, 2, [("a", np.array([1.0, 2.0], dtype=np.float32))])
    data = bytearray(path.read_bytes())
    vec_offset = len(data) - 8
    data[vec_offset:vec_offset + 4] = struct.pack("<f", np.nan)
    path.write_bytes(bytes(data))
    with pytest.raises(FeatureFileError) as err:
        read_feature_file(path)
    assert "NaN" in str(err.value)
    assert err.value.offset == vec_offset


def test_read_rejects_unknown_mode_tag(tmp_path):
    path = tmp_path / "feat.bin"
    # hand-assemble a header with a bogus mode tag
    blob = b"XICMFEAT" + struct.pack("<I", 1)
    for text in ("bogus", "src"):
        raw = text.encode()
        blob += struct.pack("<H", len(raw)) + raw
    blob += struct.pack("<III", 0, 2, 0)
    path.write_bytes(blob)
    with pytest.raises(FeatureFileError):
        read_feature_file(path)


def test_save_embeddings_requires_final_frames(tmp_path):
    emb = DemoEmbedding("q", np.zeros(2, dtype=np.float32), np.zeros(3, dtype=np.float32))
    with pytest.raises(FeatureFileError):
        save_embeddings([emb], tmp_path / "x.bin")


def test_base_mode_tag_reserved():
    assert BASE_MODE_TAG == "base"
    with pytest.raises(XicmError):
        FeatureMode.parse(BASE_MODE_TAG)
