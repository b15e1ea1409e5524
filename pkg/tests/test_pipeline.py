import json

import numpy as np
import pytest

from ebad import synthetic
from ebad.config import build_config, config_hash
from ebad.errors import BundleMismatchError, DataError
from ebad.pipeline import (
    EnergyAnomalyDetector,
    ModelBundle,
    check_bundle,
    frames_from_array,
    load_bundle,
    load_detection_artifacts,
    run_detection,
    run_eval,
    save_bundle,
    train_bundle,
    write_cluster_maps,
    write_detection_artifacts,
)

TINY = {
    "mode": "ead-rbm",
    "seed": 0,
    "frame_height": 64,
    "frame_width": 64,
    "scales": "1.0,0.5",
    "patch_height": 8,
    "patch_width": 8,
    "stride_v": 4,
    "stride_h": 4,
    "cluster_hidden": 4,
    "region_hidden": 12,
    "epochs": 4,
    "batch_size": 100,
    "beta": 0.006,
    "gamma": 3,
    "chunk_len": 10,
    "min_region_patches": 50,
}


@pytest.fixture(scope="module")
def tiny_cfg():
    return build_config({}, dict(TINY))


@pytest.fixture(scope="module")
def tiny_bundle(tiny_cfg):
    frames = frames_from_array(synthetic.normal_frames(6, seed=3))
    return train_bundle(frames, tiny_cfg)


def test_train_bundle_structure(tiny_bundle, tiny_cfg):
    assert tiny_bundle.mode == "ead-rbm"
    assert tiny_bundle.config_hash == config_hash(tiny_cfg)
    assert [ts.scale for ts in tiny_bundle.scales] == [1.0, 0.5]
    for ts in tiny_bundle.scales:
        assert ts.dbm is None
        assert ts.clustering_rbm is not None
        assert set(ts.region_rbms) == set(int(v) for v in ts.region_map.label_values)


def test_bundle_save_load_round_trip(tiny_bundle, tmp_path):
    save_bundle(tiny_bundle, tmp_path / "bundle")
    back = load_bundle(tmp_path / "bundle")
    assert back.mode == tiny_bundle.mode
    assert back.config_hash == tiny_bundle.config_hash
    assert back.seed == tiny_bundle.seed
    for ts, orig in zip(back.scales, tiny_bundle.scales):
        assert ts.scale == orig.scale
        np.testing.assert_array_equal(ts.region_map.labels, orig.region_map.labels)
        np.testing.assert_array_equal(
            ts.clustering_rbm.weights, orig.clustering_rbm.weights
        )
        assert set(ts.region_rbms) == set(orig.region_rbms)
        for label in ts.region_rbms:
            np.testing.assert_array_equal(
                ts.region_rbms[label].weights, orig.region_rbms[label].weights
            )


def test_bundle_manifest_is_reproducible(tiny_bundle, tmp_path):
    save_bundle(tiny_bundle, tmp_path / "a")
    save_bundle(tiny_bundle, tmp_path / "b")
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert a == b
    manifest = json.loads(a)
    assert manifest["mode"] == "ead-rbm"
    assert set(manifest) == {"format", "mode", "seed", "config_hash", "scales"}


def test_load_bundle_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        load_bundle(tmp_path)


def test_check_bundle_detects_mismatches(tiny_bundle, tiny_cfg):
    check_bundle(tiny_bundle, tiny_cfg)   # no error on the matching config
    other = build_config({}, dict(TINY, epochs=5))
    with pytest.raises(BundleMismatchError):
        check_bundle(tiny_bundle, other)
    fake = ModelBundle(mode="s-rbm", seed=0, config_hash=config_hash(tiny_cfg),
                       scales=tiny_bundle.scales)
    with pytest.raises(BundleMismatchError):
        check_bundle(fake, tiny_cfg)
    fake = ModelBundle(mode="ead-rbm", seed=0, config_hash=config_hash(tiny_cfg),
                       scales=tiny_bundle.scales[:1])
    with pytest.raises(BundleMismatchError):
        check_bundle(fake, tiny_cfg)


def test_detection_artifacts_round_trip(tiny_bundle, tiny_cfg, tmp_path):
    frames, masks, flags = synthetic.test_sequence(4, 6, 2, seed=77)
    run, _ = run_detection(frames_from_array(frames), tiny_bundle, tiny_cfg)
    out = tmp_path / "det"
    write_detection_artifacts(run, tiny_cfg, out)

    scores, maps, meta = load_detection_artifacts(out)
    np.testing.assert_array_equal(scores, run.frame_scores)   # repr round trip
    assert maps.shape == run.score_map.shape
    quantum = run.score_map.max() / 65535 if run.score_map.max() > 0 else 0
    assert np.abs(maps - run.score_map).max() <= quantum
    assert meta["mode"] == "ead-rbm"
    assert meta["beta"] == tiny_cfg.resolved_beta()
    assert meta["frames"] == len(frames)

    mask_files = sorted((out / "masks").iterdir())
    assert len(mask_files) == len(frames)
    components = (out / "components.csv").read_text().strip().splitlines()
    assert components[0] == "id,voxels,frame_span,t0,t1,y0,y1,x0,x1"
    for line in components[1:]:
        fields = line.split(",")
        assert len(fields) == 9
        assert int(fields[2]) >= tiny_cfg.gamma


def test_run_eval_writes_reports(tiny_bundle, tiny_cfg, tmp_path):
    frames, masks, flags = synthetic.test_sequence(4, 6, 2, seed=77)
    run, _ = run_detection(frames_from_array(frames), tiny_bundle, tiny_cfg)
    det = tmp_path / "det"
    write_detection_artifacts(run, tiny_cfg, det)
    gt_dir = tmp_path / "gt"
    synthetic.write_masks(gt_dir, masks)
    cfg = build_config({}, dict(
        TINY, detections=str(det), ground_truth=str(gt_dir),
        out=str(tmp_path / "eval"),
    ))
    frame_rep, pixel_rep, dual_rep = run_eval(cfg)
    assert frame_rep.level == "frame"
    assert frame_rep.auc is not None and frame_rep.auc > 0.5
    assert pixel_rep.auc is not None
    assert dual_rep.alpha == 5.0
    for name in ("eval_frame.csv", "eval_pixel.csv", "eval_dual_pixel.csv"):
        assert (tmp_path / "eval" / name).exists()


def test_run_eval_mask_count_mismatch(tiny_bundle, tiny_cfg, tmp_path):
    frames, masks, _ = synthetic.test_sequence(2, 4, 2, seed=78)
    run, _ = run_detection(frames_from_array(frames), tiny_bundle, tiny_cfg)
    det = tmp_path / "det"
    write_detection_artifacts(run, tiny_cfg, det)
    gt_dir = tmp_path / "gt"
    synthetic.write_masks(gt_dir, masks[:-1])
    cfg = build_config({}, dict(
        TINY, detections=str(det), ground_truth=str(gt_dir), out=str(tmp_path / "e"),
    ))
    with pytest.raises(DataError):
        run_eval(cfg)


def test_write_cluster_maps(tiny_bundle, tmp_path):
    paths = write_cluster_maps(tiny_bundle, tmp_path / "maps")
    assert len(paths) == 2
    from PIL import Image

    with Image.open(paths[0]) as img:
        assert img.mode == "P"
        # 15x15 grid cells at the default 8 pixel block size
        assert img.size == (120, 120)


def test_frames_from_array_validation():
    with pytest.raises(ValueError):
        frames_from_array(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        frames_from_array(np.full((2, 4, 4), 1.5))
    frames = frames_from_array(np.zeros((3, 4, 4)))
    assert [f.index for f in frames] == [0, 1, 2]


class TestEnergyAnomalyDetector:
    def make(self):
        return EnergyAnomalyDetector(
            mode="ead-rbm", scales=(1.0,), patch_height=8, patch_width=8,
            stride_v=4, stride_h=4, cluster_hidden=4, region_hidden=12,
            epochs=3, batch_size=100, beta=0.006, gamma=3, chunk_len=10,
            min_region_patches=50, random_state=0,
        )

    def test_fit_predict_shapes(self):
        detector = self.make()
        train = synthetic.normal_frames(5, seed=3)
        detector.fit(train)
        frames, _, flags = synthetic.test_sequence(3, 4, 2, seed=99)
        scores = detector.score_frames(frames)
        assert scores.shape == (9,)
        labels = detector.predict(frames)
        assert set(np.unique(labels)) <= {0, 1}
        masks = detector.anomaly_masks(frames)
        assert masks.shape == frames.shape
        assert masks.dtype == np.uint8

    def test_get_params_round_trip(self):
        detector = self.make()
        clone = EnergyAnomalyDetector(**detector.get_params())
        assert clone.get_params() == detector.get_params()

    def test_unfitted_raises(self):
        with pytest.raises(ValueError):
            self.make().score_frames(np.zeros((2, 64, 64)))
