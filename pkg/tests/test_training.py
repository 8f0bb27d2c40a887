import numpy as np
import pytest
import torch

from fruitband.errors import EmptyDataset, LabelOutOfRange, NonFiniteLoss
from fruitband.models import BackboneSpec, ClassifierSpec, build_classifier
from fruitband.training import (
    ArrayDataset,
    History,
    TrainConfig,
    evaluate,
    make_batches,
    train,
)

from conftest import blob_dataset

SPEC64 = ClassifierSpec(mode="single", backbone_a=BackboneSpec("tiny", input_size=(64, 64, 3)))


def datasets(train_per_class=20, val_per_class=10):
    xt, yt = blob_dataset(train_per_class, seed=0)
    xv, yv = blob_dataset(val_per_class, seed=1)
    return ArrayDataset(xt, yt), ArrayDataset(xv, yv)


class TestMakeBatches:
    def test_sizes_and_coverage(self):
        batches = make_batches(range(10), batch_size=4, seed=3, epoch=0)
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_epochs_get_different_permutations(self):
        a = np.concatenate(make_batches(range(10), 4, seed=3, epoch=0))
        b = np.concatenate(make_batches(range(10), 4, seed=3, epoch=1))
        assert not np.array_equal(a, b)
        # oracle: the permutation is exactly the (seed, epoch)-derived one
        expected = np.random.default_rng([3, 1]).permutation(10)
        assert np.array_equal(b, expected)

    def test_oversized_batch(self):
        batches = make_batches(range(7), batch_size=32, seed=0, epoch=0)
        assert len(batches) == 1
        assert sorted(batches[0].tolist()) == list(range(7))

    def test_rejects_bad_batch_size(self):
        with pytest.raises(ValueError):
            make_batches(range(4), 0, 0, 0)


class TestTrain:
    def test_learns_separable_blobs(self, tmp_path):
        train_set, val_set = datasets()
        clf = build_classifier(SPEC64, seed=0)
        history, best = train(clf, train_set, val_set, TrainConfig(seed=0), out_dir=tmp_path)
        assert len(history) == 25
        assert history.epochs[-1].train_loss < history.epochs[0].train_loss
        assert max(e.val_accuracy for e in history.epochs) >= 90.0
        assert best is not None and best.is_file()
        assert (tmp_path / "history.json").is_file()
        assert (tmp_path / "last.ckpt").is_file()

    def test_zero_epochs_is_a_bitwise_noop(self):
        train_set, val_set = datasets(4, 2)
        clf = build_classifier(SPEC64, seed=1)
        before = {k: v.clone() for k, v in clf.state_dict().items()}
        history, best = train(clf, train_set, val_set, TrainConfig(epochs=0))
        assert len(history) == 0
        assert best is None
        assert all(torch.equal(before[k], v) for k, v in clf.state_dict().items())

    def test_same_seed_identical_history(self):
        train_set, val_set = datasets(6, 3)
        cfg = TrainConfig(epochs=3, seed=11)
        h1, _ = train(build_classifier(SPEC64, seed=5), train_set, val_set, cfg)
        h2, _ = train(build_classifier(SPEC64, seed=5), train_set, val_set, cfg)
        assert h1.to_json() == h2.to_json()

    def test_different_seed_changes_history(self):
        train_set, val_set = datasets(6, 3)
        h1, _ = train(build_classifier(SPEC64, seed=5), train_set, val_set,
                      TrainConfig(epochs=3, seed=11))
        h2, _ = train(build_classifier(SPEC64, seed=5), train_set, val_set,
                      TrainConfig(epochs=3, seed=12))
        assert h1.to_json() != h2.to_json()

    def test_empty_dataset_rejected(self):
        train_set, val_set = datasets(4, 2)
        empty = ArrayDataset(np.zeros((0, 64, 64, 3), np.float32), np.zeros((0,), np.int64))
        clf = build_classifier(SPEC64, seed=0)
        with pytest.raises(EmptyDataset):
            train(clf, empty, val_set, TrainConfig(epochs=1))
        with pytest.raises(EmptyDataset):
            train(clf, train_set, empty, TrainConfig(epochs=1))

    def test_label_out_of_range(self):
        train_set, val_set = datasets(4, 2)
        bad = ArrayDataset(train_set.inputs_a, train_set.labels + 5)
        with pytest.raises(LabelOutOfRange):
            train(build_classifier(SPEC64, seed=0), bad, val_set, TrainConfig(epochs=1))

    def test_non_finite_loss_aborts_with_context(self):
        train_set, val_set = datasets(4, 2)
        poisoned = train_set.inputs_a.copy()
        poisoned[0] = np.nan
        bad = ArrayDataset(poisoned, train_set.labels)
        with pytest.raises(NonFiniteLoss, match="epoch 0"):
            train(build_classifier(SPEC64, seed=0), bad, val_set, TrainConfig(epochs=1))

    def test_untrained_loss_near_uniform(self):
        train_set, val_set = datasets(8, 4)
        clf = build_classifier(SPEC64, seed=3)
        loss, _, _ = evaluate(clf, val_set)
        assert 0.9 <= loss <= 1.3

    def test_loss_decreases_across_seeds(self):
        train_set, val_set = datasets(6, 3)
        decreased = 0
        for seed in range(20):
            clf = build_classifier(SPEC64, seed=seed)
            history, _ = train(clf, train_set, val_set, TrainConfig(epochs=6, seed=seed))
            decreased += history.epochs[-1].train_loss < history.epochs[0].train_loss
        assert decreased >= 19

    def test_resume_reproduces_history_tail(self, tmp_path):
        train_set, val_set = datasets(8, 4)
        cfg = TrainConfig(epochs=6, seed=21)
        full_dir = tmp_path / "full"
        h_full, _ = train(build_classifier(SPEC64, seed=7), train_set, val_set, cfg,
                          out_dir=full_dir)

        part_dir = tmp_path / "part"
        clf = build_classifier(SPEC64, seed=7)
        train(clf, train_set, val_set, TrainConfig(epochs=3, seed=21), out_dir=part_dir)
        resumed = build_classifier(SPEC64, seed=7)
        h_resumed, _ = train(resumed, train_set, val_set, cfg, out_dir=part_dir,
                             resume_from=part_dir / "last.ckpt")
        assert h_resumed.to_json() == h_full.to_json()

    def test_history_round_trip(self):
        train_set, val_set = datasets(4, 2)
        h, _ = train(build_classifier(SPEC64, seed=2), train_set, val_set,
                     TrainConfig(epochs=2, seed=2))
        assert History.from_json(h.to_json()).to_json() == h.to_json()
