import numpy as np
import pytest

from irn.detections import (BoundingBox, FrameDetections, Role,
                            record_to_detections)
from irn.synthdata import (CATALOG, HANDS_ONLY_CLASSES, MOTION_DEFINED_CLASSES,
                           NoiseSpec, appearance_label_pvalue, build_dataset,
                           entity_colors, generate_clip, inject_noise,
                           load_clip, load_clip_frames, load_manifest,
                           manifest_hash, rule_based_classify,
                           save_clip_frames)


def test_generate_clip_deterministic():
    a_clip, a_rec, a_meta = generate_clip(2, 123)
    b_clip, b_rec, b_meta = generate_clip(2, 123)
    assert np.array_equal(a_clip.frames, b_clip.frames)
    assert a_rec == b_rec
    assert a_meta == b_meta


def test_different_seeds_differ():
    a_clip, _, _ = generate_clip(0, 1)
    b_clip, _, _ = generate_clip(0, 2)
    assert not np.array_equal(a_clip.frames, b_clip.frames)


def test_stir_angle_advances_at_configured_rate():
    for seed in range(5):
        _, record, meta = generate_clip(0, seed)
        _, dets = record_to_detections(record)
        rel = np.array([
            np.subtract(f.get(Role.OBJECT_RIGHT).center,
                        f.get(Role.OBJECT_LEFT).center)
            for f in dets
        ])
        angles = np.arctan2(rel[:, 1], rel[:, 0])
        steps = np.diff(angles)
        steps = (steps + np.pi) % (2 * np.pi) - np.pi
        rate = meta["params"]["angular_rate"]
        # same sign every frame and magnitude equal to the program parameter
        assert np.all(np.sign(steps) == np.sign(rate))
        assert steps == pytest.approx(np.full(15, rate), abs=1e-6)


def test_rub_hands_has_no_objects():
    _, record, _ = generate_clip(4, 11)
    _, dets = record_to_detections(record)
    for f in dets:
        assert f.get(Role.OBJECT_LEFT) is None
        assert f.get(Role.OBJECT_RIGHT) is None
        assert f.get(Role.HAND_LEFT) is not None
        assert f.get(Role.HAND_RIGHT) is not None


def test_catalog_hand_count_coverage():
    presence = {}
    for entry in CATALOG:
        _, record, _ = generate_clip(entry.class_id, 0)
        _, dets = record_to_detections(record)
        roles = set(dets[0].present_roles())
        presence[entry.name] = roles
    two_handed = [n for n, r in presence.items()
                  if Role.HAND_LEFT in r and Role.HAND_RIGHT in r]
    one_handed = [n for n, r in presence.items()
                  if (Role.HAND_LEFT in r) != (Role.HAND_RIGHT in r)]
    hands_only = [n for n, r in presence.items()
                  if Role.OBJECT_LEFT not in r and Role.OBJECT_RIGHT not in r]
    assert two_handed and one_handed and hands_only


def test_boxes_stay_inside_frame():
    for entry in CATALOG:
        for seed in range(3):
            _, record, _ = generate_clip(entry.class_id, seed)
            _, dets = record_to_detections(record)
            for f in dets:
                for role in f.present_roles():
                    box = f.get(role)
                    assert 0.0 <= box.x0 < box.x1 <= 1.0
                    assert 0.0 <= box.y0 < box.y1 <= 1.0


def test_rule_oracle_on_clean_clips():
    total = hits = 0
    for entry in CATALOG:
        for seed in range(20):
            _, record, _ = generate_clip(entry.class_id, 1000 + seed)
            _, dets = record_to_detections(record)
            hits += rule_based_classify(dets) == entry.class_id
            total += 1
    assert hits / total >= 0.99


def test_motion_defined_tags():
    assert set(MOTION_DEFINED_CLASSES) == {0, 1, 2}
    assert set(HANDS_ONLY_CLASSES) == {4, 5}


def _flat_detections(n_frames):
    left = BoundingBox(0.1, 0.4, 0.3, 0.6)
    right = BoundingBox(0.7, 0.4, 0.9, 0.6)
    return [FrameDetections(frame_index=t, entries={Role.HAND_LEFT: left,
                                                    Role.HAND_RIGHT: right})
            for t in range(n_frames)]


def test_noise_zero_spec_is_identity():
    frames = _flat_detections(8)
    out = inject_noise(frames, NoiseSpec(0.0, 0.0, 0.0), seed=3)
    assert [f.entries for f in out] == [f.entries for f in frames]


def test_noise_full_drop_removes_everything():
    frames = _flat_detections(8)
    out = inject_noise(frames, NoiseSpec(p_drop=1.0), seed=3)
    assert all(not f.entries for f in out)


def test_noise_deterministic_given_seed():
    frames = _flat_detections(16)
    spec = NoiseSpec(p_drop=0.3, p_swap=0.3, jitter=0.01)
    a = inject_noise(frames, spec, seed=7)
    b = inject_noise(frames, spec, seed=7)
    assert [f.entries for f in a] == [f.entries for f in b]


def test_noise_swap_count_within_binomial_bound():
    frames = _flat_detections(1000)
    out = inject_noise(frames, NoiseSpec(p_swap=0.5), seed=11)
    left = BoundingBox(0.1, 0.4, 0.3, 0.6)
    swaps = sum(f.get(Role.HAND_RIGHT) == left for f in out)
    # Binomial(1000, 0.5): mean 500, sigma = sqrt(250) ~ 15.81
    sigma = (1000 * 0.25) ** 0.5
    assert abs(swaps - 500) <= 3 * sigma


def test_noise_swap_exchanges_object_sides_too():
    box_l = BoundingBox(0.1, 0.1, 0.2, 0.2)
    box_r = BoundingBox(0.8, 0.8, 0.9, 0.9)
    frames = [FrameDetections(frame_index=0,
                              entries={Role.OBJECT_LEFT: box_l,
                                       Role.OBJECT_RIGHT: box_r})]
    out = inject_noise(frames, NoiseSpec(p_swap=1.0), seed=0)
    assert out[0].get(Role.OBJECT_LEFT) == box_r
    assert out[0].get(Role.OBJECT_RIGHT) == box_l


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(p_drop=1.5)
    with pytest.raises(ValueError):
        NoiseSpec(jitter=-0.1)


def test_clip_file_round_trip(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, (4, 8, 8, 3)).astype(np.uint8)
    path = tmp_path / "frames.bin"
    save_clip_frames(path, frames)
    assert np.array_equal(load_clip_frames(path), frames)
    with pytest.raises(ValueError):
        save_clip_frames(path, frames.astype(np.float32))
    (tmp_path / "bogus.bin").write_bytes(b"NOTACLIP" + b"\0" * 16)
    with pytest.raises(ValueError):
        load_clip_frames(tmp_path / "bogus.bin")


def test_build_dataset_stratified_and_reproducible(tmp_path):
    manifest = build_dataset(tmp_path / "a", n_train=12, n_val=6, master_seed=5,
                             frames_per_clip=8, frame_size=32)
    per_class = {}
    for e in manifest["splits"]["train"]:
        per_class[e["class_id"]] = per_class.get(e["class_id"], 0) + 1
    assert per_class == {c: 2 for c in range(6)}
    train_ids = {e["clip_id"] for e in manifest["splits"]["train"]}
    val_ids = {e["clip_id"] for e in manifest["splits"]["val"]}
    assert not train_ids & val_ids
    train_seeds = {e["seed"] for e in manifest["splits"]["train"]}
    val_seeds = {e["seed"] for e in manifest["splits"]["val"]}
    assert not train_seeds & val_seeds

    build_dataset(tmp_path / "b", n_train=12, n_val=6, master_seed=5,
                  frames_per_clip=8, frame_size=32)
    assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")
    clip_id = manifest["splits"]["train"][0]["clip_id"]
    fa, da = load_clip(tmp_path / "a", clip_id)
    fb, db = load_clip(tmp_path / "b", clip_id)
    assert np.array_equal(fa, fb)
    assert [f.entries for f in da] == [f.entries for f in db]


def test_build_dataset_uneven_split_counts(tmp_path):
    manifest = build_dataset(tmp_path, n_train=8, n_val=3, master_seed=1,
                             frames_per_clip=8, frame_size=32)
    counts = {}
    for e in manifest["splits"]["train"]:
        counts[e["class_id"]] = counts.get(e["class_id"], 0) + 1
    assert sum(counts.values()) == 8
    assert max(counts.values()) - min(counts.get(c, 0) for c in range(6)) <= 1


def test_loaded_clip_matches_generated(tmp_path):
    build_dataset(tmp_path, n_train=6, n_val=0, master_seed=2,
                  frames_per_clip=8, frame_size=32)
    manifest = load_manifest(tmp_path)
    entry = manifest["splits"]["train"][0]
    frames, dets = load_clip(tmp_path, entry["clip_id"])
    clip, record, _ = generate_clip(entry["class_id"], entry["seed"],
                                    num_frames=8, frame_size=32,
                                    clip_id=entry["clip_id"])
    assert np.array_equal(frames, np.round(clip.frames * 255).astype(np.uint8))
    _, expected = record_to_detections(record)
    assert [f.entries for f in dets] == [f.entries for f in expected]


def test_appearance_label_independence_smoke():
    colors, labels = [], []
    for entry in CATALOG:
        for seed in range(25):
            _, _, meta = generate_clip(entry.class_id, 1000 + seed,
                                       num_frames=8, frame_size=32)
            for color in entity_colors(meta):
                colors.append(color)
                labels.append(entry.class_id)
    p = appearance_label_pvalue(np.array(colors), np.array(labels),
                                n_permutations=200, seed=0)
    assert p > 0.05
