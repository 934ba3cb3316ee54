import numpy as np
import pytest

from cnn_scorer import (
    Dataset,
    LabelBalancedSampler,
    TrainConfig,
    TrainingError,
    TruthRecord,
    build_dataset,
    load_checkpoint,
    orientation_augment,
    predict,
    save_checkpoint,
    train,
)


def _training_volumes(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n, 3, 30, 30, 30)).astype(np.float32)


def _truth(pairs):
    return [TruthRecord(hid, lab, conf) for hid, lab, conf in pairs]


def _tiny_dataset(n=8, num_labels=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        _training_volumes(n, seed=seed),
        rng.integers(0, num_labels + 1, size=n).astype(np.int64),
        rng.uniform(size=n).astype(np.float32),
        num_labels,
    )


class TestBuildDataset:
    def test_aligns_records_by_hypothesis_id(self):
        volumes = np.zeros((3, 3, 4, 4, 4), dtype=np.uint8)
        truth = _truth([(9, 2, 0.9), (4, 0, 0.1), (7, 1, 0.5)])
        ds = build_dataset(volumes, [4, 7, 9], truth, num_labels=2)
        assert ds.labels.tolist() == [0, 1, 2]
        assert ds.confidences.tolist() == pytest.approx([0.1, 0.5, 0.9])
        assert len(ds) == 3
        assert ds.volumes.dtype == np.float32

    def test_rejects_empty(self):
        with pytest.raises(TrainingError, match="empty"):
            build_dataset(np.zeros((0, 3, 4, 4, 4)), [], [], num_labels=1)

    def test_rejects_count_mismatch(self):
        with pytest.raises(TrainingError, match="disagrees"):
            build_dataset(np.zeros((2, 3, 4, 4, 4)), [1],
                          _truth([(1, 0, 0.5)]), num_labels=1)

    def test_rejects_duplicate_truth(self):
        truth = _truth([(1, 0, 0.5), (1, 1, 0.5)])
        with pytest.raises(TrainingError, match="repeats"):
            build_dataset(np.zeros((1, 3, 4, 4, 4)), [1], truth, num_labels=1)

    def test_rejects_missing_truth(self):
        with pytest.raises(TrainingError, match="missing"):
            build_dataset(np.zeros((2, 3, 4, 4, 4)), [1, 2],
                          _truth([(1, 0, 0.5)]), num_labels=1)

    def test_rejects_label_beyond_k(self):
        truth = _truth([(1, 3, 0.5)])
        with pytest.raises(TrainingError, match="label count disagree"):
            build_dataset(np.zeros((1, 3, 4, 4, 4)), [1], truth, num_labels=2)


class TestOrientationAugment:
    def test_quadruples_with_originals_first(self):
        ds = Dataset(np.zeros((2, 3, 4, 4, 4), dtype=np.float32),
                     np.array([1, 2], dtype=np.int64),
                     np.array([0.3, 0.8], dtype=np.float32), 2)
        aug = orientation_augment(ds)
        assert len(aug) == 8
        np.testing.assert_array_equal(aug.volumes[:2], ds.volumes)
        assert aug.labels.tolist() == [1, 2] * 4
        assert aug.confidences.tolist() == pytest.approx([0.3, 0.8] * 4)

    def test_turns_happen_about_the_up_axis(self):
        vol = np.zeros((1, 3, 4, 4, 4), dtype=np.float32)
        vol[0, 1, 2, 0, 3] = 1.0  # (z=2, y=0, x=3)
        ds = Dataset(vol, np.array([0]), np.array([0.5], dtype=np.float32), 1)
        aug = orientation_augment(ds)
        # A quarter turn in the y-x plane sends (y, x) to (X-1-x, y).
        assert aug.volumes[1][1, 2, 0, 0] == 1.0
        assert aug.volumes[1].sum() == 1.0
        # Four quarter turns come back around.
        one_more = np.rot90(aug.volumes[3], k=1, axes=(2, 3))
        np.testing.assert_array_equal(one_more, vol[0])

    def test_z_slices_are_preserved(self):
        vol = np.zeros((1, 3, 4, 4, 4), dtype=np.float32)
        vol[0, 0, 1] = 1.0  # fill one z-slice
        ds = Dataset(vol, np.array([0]), np.array([0.5], dtype=np.float32), 1)
        aug = orientation_augment(ds)
        for k in range(4):
            np.testing.assert_array_equal(aug.volumes[k], vol[0])


class TestSampler:
    def test_batches_are_deterministic(self):
        labels = np.array([0, 0, 1, 1, 2])
        a = LabelBalancedSampler(labels, seed=3).batch(16)
        b = LabelBalancedSampler(labels, seed=3).batch(16)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0 and a.max() < len(labels)

    def test_rare_labels_are_not_starved(self):
        labels = np.array([0] * 90 + [1] * 10)
        sampler = LabelBalancedSampler(labels, seed=0)
        picks = sampler.batch(400)
        rare = (labels[picks] == 1).sum()
        assert 140 <= rare <= 260


class TestTrain:
    def test_loss_decreases(self):
        result = train(_tiny_dataset(), TrainConfig(
            iterations=12, batch_size=8, seed=0, orientation=False))
        assert len(result.losses) == 12
        assert min(result.losses) < result.losses[0]
        assert result.errors[-1][0] == 12

    def test_same_seed_same_history(self):
        config = TrainConfig(iterations=5, batch_size=8, seed=2,
                             orientation=False)
        first = train(_tiny_dataset(), config)
        second = train(_tiny_dataset(), config)
        assert first.losses == second.losses

    def test_stop_error_halts_at_an_eval_point(self):
        result = train(_tiny_dataset(), TrainConfig(
            iterations=50, batch_size=8, orientation=False,
            eval_every=5, stop_error=1.0))
        assert len(result.losses) == 5
        assert result.errors[-1][0] == 5

    def test_empty_dataset_is_rejected(self):
        empty = Dataset(np.zeros((0, 3, 30, 30, 30), dtype=np.float32),
                        np.zeros(0, dtype=np.int64),
                        np.zeros(0, dtype=np.float32), 2)
        with pytest.raises(TrainingError):
            train(empty, TrainConfig(iterations=1, batch_size=2))

    def test_config_validation(self):
        with pytest.raises(TrainingError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(TrainingError):
            TrainConfig(iterations=0).validate()


def test_checkpoint_round_trip(tmp_path):
    result = train(_tiny_dataset(n=4), TrainConfig(
        iterations=2, batch_size=4, orientation=False))
    path = tmp_path / "model.pt"
    save_checkpoint(path, result.model)
    loaded = load_checkpoint(path)
    assert loaded.num_labels == result.model.num_labels
    vols = _training_volumes(3, seed=9)
    np.testing.assert_array_equal(predict(loaded, vols)[0],
                                  predict(result.model, vols)[0])


@pytest.mark.parametrize("junk", [b"not a checkpoint", b"junk", b""])
def test_load_checkpoint_rejects_garbage(tmp_path, junk):
    path = tmp_path / "model.pt"
    path.write_bytes(junk)
    with pytest.raises(TrainingError):
        load_checkpoint(path)
