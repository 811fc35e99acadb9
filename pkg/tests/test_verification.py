import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verilime import (
    DatasetManifest,
    EmbFileEmbedder,
    ImageRef,
    Pair,
    ProjectionEmbedder,
    ScoreSet,
    Subject,
    eer,
    fuse_score_sets,
    fuse_scores,
    fusion_sweep,
    generate_pairs,
    load_manifest,
    save_image,
    score_pairs,
    scores_from_csv,
    scores_to_csv,
    verification_descriptor,
)
from verilime.embedding import emb_write
from verilime.errors import DataError
from verilime.raster import load_image

from conftest import random_image
from oracles import eer_brute_force


def make_manifest(spec):
    """spec: list of (subject_id, [(path, pose), ...])."""
    return DatasetManifest(
        subjects=tuple(
            Subject(id=sid, images=tuple(ImageRef(path=p, pose=pose) for p, pose in images))
            for sid, images in spec
        )
    )


class TestGeneratePairs:
    def test_genuine_combinations(self):
        manifest = make_manifest(
            [
                ("u1", [("A", "untagged"), ("B", "untagged"), ("C", "untagged")]),
                ("u2", [("D", "untagged"), ("E", "untagged")]),
            ]
        )
        genuine, _ = generate_pairs(manifest)
        u1_pairs = {(p.image_a, p.image_b) for p in genuine if p.subject_a == "u1"}
        assert u1_pairs == {("A", "B"), ("A", "C"), ("B", "C")}

    def test_three_subject_wraparound(self):
        manifest = make_manifest(
            [
                ("u1", [("u1.1", "untagged"), ("u1.2", "untagged")]),
                ("u2", [("u2.1", "untagged"), ("u2.2", "untagged")]),
                ("u3", [("u3.1", "untagged"), ("u3.2", "untagged")]),
            ]
        )
        _, impostor = generate_pairs(manifest)
        got = [(p.image_a, p.image_b) for p in impostor]
        assert got == [
            ("u1.1", "u2.2"),
            ("u1.1", "u3.2"),
            ("u2.1", "u3.2"),
            ("u2.1", "u1.2"),
            ("u3.1", "u1.2"),
            ("u3.1", "u2.2"),
        ]

    def test_protocol_scale_counts(self):
        manifest = make_manifest(
            [
                (f"s{i:03d}", [(f"s{i:03d}_{j:02d}", "untagged") for j in range(30)])
                for i in range(368)
            ]
        )
        genuine, impostor = generate_pairs(manifest)
        assert len(genuine) == 368 * (30 * 29 // 2) == 160080
        assert len(impostor) == 368 * 100
        as_sets = [frozenset((p.image_a, p.image_b)) for p in genuine + impostor]
        assert len(set(as_sets)) == len(as_sets)  # no duplicates
        assert all(p.image_a != p.image_b for p in genuine + impostor)

    def test_pose_filter_cross(self):
        manifest = make_manifest(
            [
                ("u1", [("f1", "frontal"), ("f2", "frontal"),
                        ("p1", "profile"), ("p2", "profile")]),
                ("u2", [("f3", "frontal"), ("f4", "frontal"),
                        ("p3", "profile"), ("p4", "profile")]),
            ]
        )
        genuine, impostor = generate_pairs(manifest, ("frontal", "profile"))
        assert {(p.image_a, p.image_b) for p in genuine} == {
            ("f1", "p1"), ("f1", "p2"), ("f2", "p1"), ("f2", "p2"),
            ("f3", "p3"), ("f3", "p4"), ("f4", "p3"), ("f4", "p4"),
        }
        # probe with the 1st frontal, against the 2nd profile of the next user
        assert [(p.image_a, p.image_b) for p in impostor] == [("f1", "p4"), ("f3", "p2")]

    def test_pose_filter_same(self):
        manifest = make_manifest(
            [
                ("u1", [("f1", "frontal"), ("f2", "frontal"), ("p1", "profile")]),
                ("u2", [("f3", "frontal"), ("f4", "frontal"), ("p2", "profile")]),
            ]
        )
        genuine, impostor = generate_pairs(manifest, ("frontal", "frontal"))
        assert {(p.image_a, p.image_b) for p in genuine} == {("f1", "f2"), ("f3", "f4")}
        assert len(impostor) == 2

    def test_single_subject_rejected(self):
        manifest = make_manifest([("u1", [("A", "untagged"), ("B", "untagged")])])
        with pytest.raises(DataError):
            generate_pairs(manifest)

    def test_short_subject_rejected(self):
        manifest = make_manifest(
            [
                ("u1", [("A", "untagged"), ("B", "untagged")]),
                ("u2", [("C", "untagged")]),
            ]
        )
        with pytest.raises(DataError, match="impostor role"):
            generate_pairs(manifest)

    def test_empty_filter_rejected(self):
        manifest = make_manifest(
            [
                ("u1", [("A", "frontal"), ("B", "frontal")]),
                ("u2", [("C", "frontal"), ("D", "frontal")]),
            ]
        )
        with pytest.raises(DataError):
            generate_pairs(manifest, ("profile", "profile"))


class TestManifestLoading:
    def test_roundtrip_with_relative_paths(self, tmp_path):
        (tmp_path / "imgs").mkdir()
        doc = {
            "subjects": [
                {"id": "s1", "images": [
                    {"path": "imgs/a.png", "pose": "frontal"},
                    {"path": "imgs/b.png"},
                ]}
            ]
        }
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(doc))
        manifest = load_manifest(str(mpath))
        assert manifest.subjects[0].images[0].path == str(tmp_path / "imgs" / "a.png")
        assert manifest.subjects[0].images[1].pose == "untagged"

    def test_malformed_rejected(self, tmp_path):
        mpath = tmp_path / "bad.json"
        mpath.write_text("{not json")
        with pytest.raises(DataError):
            load_manifest(str(mpath))
        mpath.write_text(json.dumps({"no_subjects": []}))
        with pytest.raises(DataError):
            load_manifest(str(mpath))

    def test_duplicate_subjects_rejected(self):
        with pytest.raises(DataError):
            make_manifest(
                [
                    ("u1", [("A", "untagged"), ("B", "untagged")]),
                    ("u1", [("C", "untagged"), ("D", "untagged")]),
                ]
            )

    def test_bad_pose_rejected(self):
        with pytest.raises(DataError):
            ImageRef(path="x.png", pose="sideways")


class TestScorePairs:
    @pytest.fixture
    def small_dataset(self, rng, tmp_path):
        spec = []
        for s in range(3):
            images = []
            for j in range(2):
                path = str(tmp_path / f"s{s}_{j}.png")
                save_image(path, random_image(rng, 8, 8, 3))
                images.append((path, "untagged"))
            spec.append((f"s{s}", images))
        return make_manifest(spec)

    def test_same_image_scores_one(self, rng, tmp_path):
        path = str(tmp_path / "same.png")
        save_image(path, random_image(rng, 8, 8, 3))
        pair = Pair("a", path, "b", path)
        scores, failures = score_pairs([pair], [pair], ProjectionEmbedder(dim=8, seed=0))
        assert not failures
        assert scores.genuine[0][1] == 1.0

    def test_failures_reported_and_excluded(self, small_dataset):
        genuine, impostor = generate_pairs(small_dataset)
        broken = Pair("x", "/nonexistent/img.png", "y", genuine[0].image_b)
        scores, failures = score_pairs(
            genuine + [broken], impostor, ProjectionEmbedder(dim=8, seed=0)
        )
        assert len(failures) == 1
        assert failures[0].pair == broken
        assert len(scores.genuine) == len(genuine)

    def test_emb_file_matches_live_scoring(self, small_dataset, tmp_path):
        live = ProjectionEmbedder(dim=16, seed=4)
        genuine, impostor = generate_pairs(small_dataset)
        live_scores, _ = score_pairs(genuine, impostor, live)

        paths = small_dataset.image_paths()
        rows = np.stack([verification_descriptor(live, load_image(p)) for p in paths])
        emb_path = str(tmp_path / "batch.emb")
        emb_write(emb_path, rows, paths)
        file_scores, failures = score_pairs(genuine, impostor, EmbFileEmbedder(emb_path))
        assert not failures
        assert scores_to_csv(file_scores) == scores_to_csv(live_scores)


class TestEer:
    def test_perfectly_separated(self):
        value, threshold = eer(_scoreset([0.9, 0.8], [0.1, 0.2]))
        assert value == 0.0
        assert 0.2 < threshold <= 0.8

    def test_indistinguishable_singletons(self):
        value, _ = eer(_scoreset([0.5], [0.5]))
        assert value == 50.0

    def test_three_vs_three(self):
        value, threshold = eer(_scoreset([0.9, 0.6, 0.4], [0.5, 0.3, 0.1]))
        assert value == pytest.approx(100 / 3, abs=1e-9)
        assert 0.4 < threshold <= 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            eer(_scoreset([], [0.1]))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            n_g = int(rng.integers(1, 40))
            n_i = int(rng.integers(1, 40))
            gen = rng.normal(0.6, 0.3, n_g)
            imp = rng.normal(0.3, 0.3, n_i)
            ours, _ = eer(_scoreset(gen, imp))
            assert ours == pytest.approx(eer_brute_force(gen, imp), abs=1e-9)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_invariant_under_monotone_relabeling(self, seed):
        rng = np.random.default_rng(seed)
        gen = rng.normal(0.5, 0.4, int(rng.integers(2, 25)))
        imp = rng.normal(0.1, 0.4, int(rng.integers(2, 25)))
        base, _ = eer(_scoreset(gen, imp))
        squashed, _ = eer(_scoreset(np.tanh(gen), np.tanh(imp)))
        assert squashed == pytest.approx(base, abs=1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_range_on_separated_sets(self, seed):
        # [0, 50]% holds for any better-than-chance (non-degenerate) system.
        rng = np.random.default_rng(seed)
        gen = rng.normal(0.7, 0.2, int(rng.integers(10, 40)))
        imp = rng.normal(0.2, 0.2, int(rng.integers(10, 40)))
        value, _ = eer(_scoreset(gen, imp))
        assert 0.0 <= value <= 50.0


def _scoreset(genuine, impostor):
    stub = Pair("", "", "", "")
    return ScoreSet(
        genuine=tuple((stub, float(s)) for s in genuine),
        impostor=tuple((stub, float(s)) for s in impostor),
    )


class TestFusion:
    def test_endpoint_weights(self):
        assert fuse_scores(0.7, 0.2, 1.0) == 0.7
        assert fuse_scores(0.7, 0.2, 0.0) == 0.2

    def test_closed_form(self):
        assert fuse_scores(0.5, 0.3, 0.58) == pytest.approx(0.416, abs=1e-12)

    def test_weight_out_of_range(self):
        with pytest.raises(ValueError):
            fuse_scores(0.5, 0.5, 1.2)

    def test_monotone_in_scores(self):
        base = fuse_scores(0.5, 0.5, 0.3)
        assert fuse_scores(0.6, 0.5, 0.3) > base
        assert fuse_scores(0.5, 0.6, 0.3) > base

    def test_sweep_identical_sets_constant(self):
        scores = _scoreset([0.9, 0.7, 0.4], [0.5, 0.2, 0.1])
        result = fusion_sweep(scores, scores, step=0.25)
        baseline, _ = eer(scores)
        assert all(value == pytest.approx(baseline, abs=1e-12) for _, value in result.rows)

    def test_sweep_endpoints(self):
        set1 = _scoreset([0.9, 0.8, 0.3], [0.5, 0.2, 0.1])
        set2 = _scoreset([0.7, 0.6, 0.5], [0.6, 0.55, 0.2])
        result = fusion_sweep(set1, set2, step=0.5)
        assert result.rows[0][1] == pytest.approx(eer(set2)[0])
        assert result.rows[-1][1] == pytest.approx(eer(set1)[0])
        assert result.rows[0][0] == 0.0 and result.rows[-1][0] == 1.0

    def test_complementary_sets_have_interior_optimum(self):
        set1, set2 = complementary_score_sets()
        result = fusion_sweep(set1, set2, step=0.05)
        end0 = result.rows[0][1]
        end1 = result.rows[-1][1]
        assert 0.0 < result.best_a < 1.0
        assert result.best_eer < end0 and result.best_eer < end1

    def test_mismatched_pairs_rejected(self):
        set1 = _scoreset([0.9], [0.1])
        other = ScoreSet(
            genuine=((Pair("s", "x", "s", "y"), 0.9),),
            impostor=((Pair("s", "x", "t", "z"), 0.1),),
        )
        with pytest.raises(DataError):
            fusion_sweep(set1, other, step=0.5)

    def test_fuse_score_sets_pairwise(self):
        set1 = _scoreset([1.0, 0.0], [0.5])
        set2 = _scoreset([0.0, 1.0], [0.1])
        fused = fuse_score_sets(set1, set2, 0.75)
        assert [s for _, s in fused.genuine] == pytest.approx([0.75, 0.25])
        assert fused.impostor[0][1] == pytest.approx(0.4)


def complementary_score_sets(n_genuine=40, n_impostor=40):
    """Two systems whose mistakes land on disjoint pairs: each breaks on a
    different quarter of the genuine pairs, so an interior blend fixes both."""
    stub = Pair("", "", "", "")
    g1, g2, i1, i2 = [], [], [], []
    for idx in range(n_genuine):
        if idx % 4 == 0:
            g1.append(0.05)  # system 1 rejects these genuines
            g2.append(0.9)
        elif idx % 4 == 1:
            g1.append(0.9)
            g2.append(0.05)  # system 2 rejects these
        else:
            g1.append(0.8)
            g2.append(0.8)
    for idx in range(n_impostor):
        i1.append(0.3)
        i2.append(0.3)
    pack = lambda vals: tuple((stub, float(v)) for v in vals)
    return (
        ScoreSet(genuine=pack(g1), impostor=pack(i1)),
        ScoreSet(genuine=pack(g2), impostor=pack(i2)),
    )


class TestScoreCsv:
    def test_roundtrip(self):
        scores = ScoreSet(
            genuine=((Pair("s1", "a.png", "s1", "b.png"), 0.125),),
            impostor=((Pair("s1", "a.png", "s2", "c.png"), -0.25),),
        )
        text = scores_to_csv(scores)
        assert text.splitlines()[0] == "type,subject_a,image_a,subject_b,image_b,score"
        assert scores_from_csv(text) == scores

    def test_bad_header_rejected(self):
        with pytest.raises(DataError):
            scores_from_csv("nope\n")
