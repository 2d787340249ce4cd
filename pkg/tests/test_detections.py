import numpy as np
import pytest

from irn.detections import (BoundingBox, FrameDetections, Role, ROLES,
                            build_role_tracks, detections_to_record,
                            filter_detections, rasterize_binary_map,
                            record_to_detections, track_binary_maps)


def test_bounding_box_invariants():
    with pytest.raises(ValueError):
        BoundingBox(0.5, 0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        BoundingBox(0.6, 0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        BoundingBox(0.0, 0.0, 1.0, 1.0, confidence=1.5)
    box = BoundingBox(0.1, 0.2, 0.4, 0.8, 0.9)
    assert box.area == pytest.approx(0.3 * 0.6)


def test_filter_drops_below_threshold():
    raw = [(Role.HAND_LEFT, BoundingBox(0.1, 0.1, 0.3, 0.3, confidence=0.4))]
    out = filter_detections(raw, threshold=0.5)
    assert out.get(Role.HAND_LEFT) is None


def test_filter_keeps_highest_confidence_per_role():
    strong = BoundingBox(0.1, 0.1, 0.3, 0.3, confidence=0.9)
    weak = BoundingBox(0.5, 0.5, 0.7, 0.7, confidence=0.7)
    out = filter_detections([(Role.HAND_RIGHT, weak), (Role.HAND_RIGHT, strong)], 0.5)
    assert out.get(Role.HAND_RIGHT) == strong


def test_filter_tie_breaking_area_then_lexicographic():
    small = BoundingBox(0.0, 0.0, 0.2, 0.2, confidence=0.8)
    large = BoundingBox(0.5, 0.5, 0.9, 0.9, confidence=0.8)
    out = filter_detections([(Role.OBJECT_LEFT, small), (Role.OBJECT_LEFT, large)], 0.5)
    assert out.get(Role.OBJECT_LEFT) == large
    a = BoundingBox(0.25, 0.25, 0.5, 0.5, confidence=0.8)
    b = BoundingBox(0.5, 0.25, 0.75, 0.5, confidence=0.8)
    out = filter_detections([(Role.OBJECT_LEFT, b), (Role.OBJECT_LEFT, a)], 0.5)
    assert out.get(Role.OBJECT_LEFT) == a


def test_filter_empty_input():
    out = filter_detections([], 0.5)
    assert out.present_roles() == []


def test_rasterize_full_frame_box():
    box = BoundingBox(0.0, 0.0, 1.0, 1.0)
    assert rasterize_binary_map(box, 4).sum() == 16


def test_rasterize_absent_box_is_blank():
    assert rasterize_binary_map(None, 4).sum() == 0


def test_rasterize_half_frame_matches_cell_center_oracle():
    box = BoundingBox(0.0, 0.0, 0.5, 1.0)
    got = rasterize_binary_map(box, 4)
    # independent oracle: loop all 16 cells, test centre containment
    expected = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            cx, cy = (j + 0.5) / 4, (i + 0.5) / 4
            if box.x0 <= cx < box.x1 and box.y0 <= cy < box.y1:
                expected[i, j] = 1
    assert np.array_equal(got, expected)
    assert got.sum() == 8
    assert set(np.nonzero(got)[1]) == {0, 1}


def test_rasterize_random_boxes_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        grid = int(rng.integers(2, 17))
        x0, y0 = rng.uniform(0, 0.8, 2)
        x1 = rng.uniform(x0 + 0.05, 1.0)
        y1 = rng.uniform(y0 + 0.05, 1.0)
        box = BoundingBox(x0, y0, x1, y1)
        got = rasterize_binary_map(box, grid)
        for i in range(grid):
            for j in range(grid):
                cx, cy = (j + 0.5) / grid, (i + 0.5) / grid
                inside = x0 <= cx < x1 and y0 <= cy < y1
                assert got[i, j] == (1.0 if inside else 0.0)


def test_rasterization_monotone_under_nesting():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x0, y0 = rng.uniform(0, 0.5, 2)
        x1 = rng.uniform(x0 + 0.2, 1.0)
        y1 = rng.uniform(y0 + 0.2, 1.0)
        outer = BoundingBox(x0, y0, x1, y1)
        ix0 = rng.uniform(x0, x1 - 0.1)
        iy0 = rng.uniform(y0, y1 - 0.1)
        inner = BoundingBox(ix0, iy0, rng.uniform(ix0 + 0.05, x1),
                            rng.uniform(iy0 + 0.05, y1))
        assert outer.contains(inner)
        mo = rasterize_binary_map(outer, 16)
        mi = rasterize_binary_map(inner, 16)
        assert np.all(mi <= mo)


def test_rasterize_deterministic():
    box = BoundingBox(0.13, 0.27, 0.61, 0.83)
    a = rasterize_binary_map(box, 32)
    b = rasterize_binary_map(box, 32)
    assert np.array_equal(a, b)


def _frames_with(role_boxes_by_frame):
    return [FrameDetections(frame_index=t, entries=dict(entries))
            for t, entries in enumerate(role_boxes_by_frame)]


def test_tracks_all_present():
    box = BoundingBox(0.2, 0.2, 0.4, 0.4)
    frames = _frames_with([{r: box for r in ROLES}] * 4)
    tracks = build_role_tracks(frames, expected_length=4)
    assert set(tracks) == set(ROLES)
    for track in tracks.values():
        assert track.presence.all()


def test_tracks_single_missing_frame():
    box = BoundingBox(0.2, 0.2, 0.4, 0.4)
    per_frame = [{r: box for r in ROLES} for _ in range(5)]
    del per_frame[3][Role.OBJECT_RIGHT]
    tracks = build_role_tracks(_frames_with(per_frame))
    expected = np.array([True, True, True, False, True])
    assert np.array_equal(tracks[Role.OBJECT_RIGHT].presence, expected)


def test_tracks_role_absent_everywhere():
    box = BoundingBox(0.2, 0.2, 0.4, 0.4)
    per_frame = [{Role.HAND_RIGHT: box} for _ in range(4)]
    tracks = build_role_tracks(_frames_with(per_frame))
    assert not tracks[Role.OBJECT_LEFT].presence.any()
    maps = track_binary_maps(tracks[Role.OBJECT_LEFT], grid=8)
    assert maps.shape == (4, 8, 8)
    assert maps.sum() == 0


def test_tracks_length_mismatch_is_hard_error():
    frames = _frames_with([{}] * 3)
    with pytest.raises(ValueError):
        build_role_tracks(frames, expected_length=8)


def test_tracks_require_increasing_frame_indices():
    frames = [FrameDetections(frame_index=1), FrameDetections(frame_index=1)]
    with pytest.raises(ValueError):
        build_role_tracks(frames)


def test_blank_map_iff_absent():
    box = BoundingBox(0.4, 0.4, 0.6, 0.6)
    per_frame = [{Role.HAND_LEFT: box}, {}, {Role.HAND_LEFT: box}]
    tracks = build_role_tracks(_frames_with(per_frame))
    maps = track_binary_maps(tracks[Role.HAND_LEFT], grid=16)
    for t in range(3):
        if tracks[Role.HAND_LEFT].presence[t]:
            assert maps[t].sum() > 0
        else:
            assert maps[t].sum() == 0


def test_record_round_trip():
    box = BoundingBox(0.25, 0.25, 0.75, 0.7, confidence=0.625)
    frames = _frames_with([{Role.HAND_LEFT: box, Role.OBJECT_RIGHT: box}, {}])
    record = detections_to_record("clip42", frames)
    assert record["clip_id"] == "clip42"
    assert record["num_frames"] == 2
    assert record["frames"][0]["detections"][0]["role"] in {"HL", "HR", "OL", "OR"}
    clip_id, back = record_to_detections(record)
    assert clip_id == "clip42"
    assert back[0].get(Role.HAND_LEFT) == box
    assert back[1].present_roles() == []
