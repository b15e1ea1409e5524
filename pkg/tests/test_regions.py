import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebad.dbm import CrDbmParams
from ebad.errors import DataError
from ebad.ingest import PatchSpec, extract_patches
from ebad.rbm import RbmParams
from ebad.regions import (
    DEFAULT_PALETTE,
    RegionMap,
    bits_to_label,
    cell_labels_for_grid,
    emit_cluster_map,
    load_region_map,
    merge_small_regions,
    partition_by_region,
    patch_label,
    patch_labels,
    save_region_map,
    vote_region_map,
)


def test_bits_to_label_examples():
    assert bits_to_label(np.array([0, 1, 0, 1])) == 5
    assert bits_to_label(np.array([1, 1, 1, 1])) == 15
    assert bits_to_label(np.array([1, 0, 0])) == 4
    assert bits_to_label(np.array([0])) == 0
    assert bits_to_label(np.array([1])) == 1


@given(st.lists(st.integers(0, 1), min_size=1, max_size=12))
def test_bits_to_label_matches_binary_string(bits):
    expected = int("".join(str(b) for b in bits), 2)
    assert bits_to_label(np.array(bits)) == expected


def saturated_rbm(n_visible, signs):
    """RBM whose hidden activations are pinned by huge biases."""
    biases = np.array([40.0 if s else -40.0 for s in signs])
    return RbmParams(
        visible_bias=np.zeros(n_visible),
        hidden_bias=biases,
        weights=np.zeros((n_visible, len(signs))),
    )


def test_patch_label_with_rbm_codes():
    model = saturated_rbm(4, [1, 0, 1])
    assert patch_label(np.ones(4), model) == 5
    labels = patch_labels(np.zeros((3, 4)), model)
    np.testing.assert_array_equal(labels, [5, 5, 5])


def test_patch_label_with_dbm_codes():
    p = CrDbmParams(
        a1=np.zeros(3), a2=np.zeros(3),
        b1=np.array([40.0, -40.0]), b2=np.zeros(2),
        w1=np.zeros((3, 2)), w2=np.zeros((2, 2)), w3=np.zeros((2, 3)),
    )
    assert patch_label(np.ones(3), p) == 2


def test_patch_label_rejects_unknown_models():
    with pytest.raises(TypeError):
        patch_label(np.ones(3), object())


def test_vote_region_map_majority_and_scale():
    tensor = np.array([
        [[1, 2], [3, 3]],
        [[1, 2], [4, 3]],
        [[1, 5], [4, 3]],
    ])
    rm = vote_region_map(tensor, 0.5)
    np.testing.assert_array_equal(rm.labels, [[1, 2], [4, 3]])
    assert rm.scale == 0.5
    assert rm.num_regions == 4


def test_vote_region_map_tie_takes_smallest_label():
    tensor = np.array([[[7]], [[2]], [[7]], [[2]]])
    rm = vote_region_map(tensor, 1.0)
    assert rm.labels[0, 0] == 2


def test_region_map_validation():
    with pytest.raises(ValueError):
        RegionMap(labels=np.array([[-1, 0]]), scale=1.0)
    with pytest.raises(ValueError):
        RegionMap(labels=np.zeros(3, dtype=np.int64), scale=1.0)


def test_partition_by_region_counts(rng):
    frame = rng.random((8, 8))
    spec = PatchSpec(4, 4, 2, 2, 1.0)
    grid = extract_patches(frame, spec)
    labels = np.array([[0, 0, 1], [1, 1, 0], [2, 2, 2]])
    rm = RegionMap(labels=labels, scale=1.0)
    parts = partition_by_region(grid, rm)
    assert {k: v.shape[0] for k, v in parts.items()} == {0: 3, 1: 3, 2: 3}
    flat = labels.reshape(-1)
    np.testing.assert_array_equal(grid.patches[flat == 1], parts[1])


def test_partition_shape_mismatch_raises(rng):
    grid = extract_patches(rng.random((8, 8)), PatchSpec(4, 4, 2, 2, 1.0))
    rm = RegionMap(labels=np.zeros((2, 2), dtype=np.int64), scale=1.0)
    with pytest.raises(ValueError):
        partition_by_region(grid, rm)


def test_cell_labels_for_grid_row_major(rng):
    grid = extract_patches(rng.random((8, 8)), PatchSpec(4, 4, 2, 2, 1.0))
    labels = np.arange(9).reshape(3, 3)
    rm = RegionMap(labels=labels, scale=1.0)
    np.testing.assert_array_equal(cell_labels_for_grid(grid, rm), np.arange(9))


def make_buckets(labels, area=4):
    buckets = {}
    for value in np.unique(labels):
        count = int((labels == value).sum())
        buckets[int(value)] = np.full((count * 2, area), float(value))
    return buckets


def test_merge_small_regions_keeps_big_ones():
    labels = np.array([[0, 0, 1], [0, 0, 1]])
    rm = RegionMap(labels=labels, scale=1.0)
    buckets = make_buckets(labels)
    merged, new_buckets = merge_small_regions(rm, buckets, min_count=2)
    np.testing.assert_array_equal(merged.labels, labels)
    assert set(new_buckets) == {0, 1}


def test_merge_small_regions_moves_to_nearest_centroid():
    # region 5 is one cell at the far left, nearer to region 0 than region 1
    labels = np.array([
        [5, 0, 0, 1, 1],
        [0, 0, 0, 1, 1],
    ])
    rm = RegionMap(labels=labels, scale=1.0)
    buckets = {5: np.zeros((1, 4)), 0: np.ones((20, 4)), 1: np.full((20, 4), 2.0)}
    merged, new_buckets = merge_small_regions(rm, buckets, min_count=5)
    assert 5 not in merged.label_values
    assert merged.labels[0, 0] == 0
    assert new_buckets[0].shape[0] == 21
    assert new_buckets[1].shape[0] == 20


def test_merge_small_regions_cascades_until_floor():
    labels = np.array([[0, 1, 2, 3]])
    rm = RegionMap(labels=labels, scale=1.0)
    buckets = {i: np.full((i + 1, 2), float(i)) for i in range(4)}
    merged, new_buckets = merge_small_regions(rm, buckets, min_count=100)
    assert merged.num_regions == 1
    only = merged.label_values[0]
    assert new_buckets[only].shape[0] == 10


def test_merge_preserves_patch_rows():
    labels = np.array([[0, 0, 7]])
    rm = RegionMap(labels=labels, scale=1.0)
    rows_7 = np.arange(8).reshape(2, 4).astype(float)
    rows_0 = np.arange(100, 116).reshape(4, 4).astype(float)
    merged, buckets = merge_small_regions(rm, {0: rows_0, 7: rows_7}, min_count=3)
    assert merged.num_regions == 1
    combined = buckets[0]
    assert combined.shape == (6, 4)
    # every original row survives the merge
    for row in list(rows_0) + list(rows_7):
        assert (combined == row).all(axis=1).any()


def test_emit_cluster_map_ranks_and_blocks():
    rm = RegionMap(labels=np.array([[3, 9], [9, 3]]), scale=1.0)
    image, palette = emit_cluster_map(rm, block_size=2)
    assert image.shape == (4, 4)
    np.testing.assert_array_equal(image[:2, :2], 0)
    np.testing.assert_array_equal(image[:2, 2:], 1)
    assert palette == list(DEFAULT_PALETTE)


def test_emit_cluster_map_rejects_small_palette():
    rm = RegionMap(labels=np.array([[0, 1, 2]]), scale=1.0)
    with pytest.raises(ValueError):
        emit_cluster_map(rm, palette=[(0, 0, 0)])


def test_region_map_csv_round_trip(tmp_path):
    rm = RegionMap(labels=np.array([[0, 3], [15, 3]]), scale=0.25)
    path = tmp_path / "map.csv"
    save_region_map(rm, path)
    back = load_region_map(path)
    np.testing.assert_array_equal(back.labels, rm.labels)
    assert back.scale == 0.25


def test_region_map_csv_header_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("no header\n1,2\n")
    with pytest.raises(DataError):
        load_region_map(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("# scale=1.0 regions=2\n")
    with pytest.raises(DataError):
        load_region_map(empty)
    mismatch = tmp_path / "mismatch.csv"
    mismatch.write_text("# scale=1.0 regions=5\n0,1\n")
    with pytest.raises(DataError):
        load_region_map(mismatch)
