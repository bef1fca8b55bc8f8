import json

import numpy as np
import pytest

from qtransfer.attacks import assemble, craft, make_config
from qtransfer.data import Dataset
from qtransfer.errors import DomainError, FormatError, SelectionError, ShapeError
from qtransfer.nn import LayerSpec, Model, predict
from qtransfer.transfer import (AVERAGE, TransferMatrix, adversarial_accuracy, model_labels,
                                rank_correlation, read_matrix_csv, run_transfer, select_samples)

from conftest import tiny_model


def constant_model(cls, classes=2, dim=3, name="C"):
    b = np.full(classes, -5.0)
    b[cls] = 5.0
    return Model([LayerSpec("dense", units=classes)], (dim,), model_id=name,
                 params={"00_dense.W": np.zeros((dim, classes)), "00_dense.b": b})


def toy_data(n=20, dim=3):
    y = np.arange(n) % 2
    return Dataset(np.full((n, dim), 0.5), y, num_classes=2)


def test_selection_with_itself_uses_source_correct_only():
    m, data = constant_model(0), toy_data()
    pair = select_samples(m, m, data, k=5, seed=1)
    assert all(data.y[i] == 0 for i in pair.indices)
    assert list(pair.indices) == sorted(pair.indices)
    assert pair == select_samples(m, m, data, k=5, seed=1)
    assert pair != select_samples(m, m, data, k=5, seed=2)


def test_selection_error_when_not_enough_joint_samples():
    with pytest.raises(SelectionError) as e:
        select_samples(constant_model(0), constant_model(1), toy_data(), k=1)
    assert (e.value.requested, e.value.available) == (1, 0)
    with pytest.raises(SelectionError):
        select_samples(constant_model(0), constant_model(0), toy_data(), k=11)
    with pytest.raises(ShapeError):
        select_samples(constant_model(0), constant_model(0, dim=4), toy_data(), k=1)


def test_adversarial_accuracy_examples():
    m = constant_model(0)
    x = np.full((1000, 3), 0.5)
    labels = np.where(np.arange(1000) < 100, 0, 1)
    batch = assemble(m, x, x, labels, np.arange(1000), make_config("fgsm", eps=0))
    assert adversarial_accuracy(m, batch) == pytest.approx(0.1)
    with pytest.raises(DomainError):
        adversarial_accuracy(m, batch.subset([]))


def test_zero_budget_attack_leaves_accuracy_at_one(tiny_family, blobs):
    m = run_transfer(tiny_family, tiny_family, make_config("fgsm", eps=0.0), blobs[1],
                     samples=20, repeats=2, seed=0)
    np.testing.assert_array_equal(m.values, 1.0)


@pytest.fixture(scope="module")
def fgsm_matrix(tiny_family, blobs):
    return run_transfer(tiny_family, tiny_family, make_config("fgsm", eps=0.15), blobs[1],
                        samples=25, repeats=2, seed=3)


def test_matrix_shape_and_labels(fgsm_matrix):
    assert fgsm_matrix.rows == ["FP", "2", "8"] == fgsm_matrix.cols
    assert fgsm_matrix.values.shape == (3, 3, 2)
    assert fgsm_matrix.grid().shape == (3, 4)
    assert len(fgsm_matrix.diagonal()) == 3 and len(fgsm_matrix.off_diagonal()) == 6
    assert len(fgsm_matrix.selections) == 3 * 3 * 2
    assert all(len(v) == 25 for v in fgsm_matrix.selections.values())


def test_seven_by_eight_grid():
    labels = ["FP", "1", "2", "4", "8", "12", "16"]
    values = np.random.default_rng(0).uniform(size=(7, 7, 3))
    m = TransferMatrix({"attack": "fgsm"}, labels, labels, values, seed=0, samples=10)
    rows, cols, grid = read_matrix_csv(m.to_csv())
    assert grid.shape == (7, 8) and cols[-1] == AVERAGE and rows == labels


def test_csv_average_recomputes_exactly(fgsm_matrix):
    text = fgsm_matrix.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "source,FP,2,8,Average"
    for line in lines[1:]:
        fields = line.split(",")
        cells = fields[1:-1]
        assert all(len(c.split(".")[1]) == 3 for c in fields[1:])
        assert f"{np.mean([float(c) for c in cells]):.3f}" == fields[-1]


def test_same_seed_same_csv_including_parallel(tiny_family, blobs, fgsm_matrix):
    cfg = make_config("fgsm", eps=0.15)
    again = run_transfer(tiny_family, tiny_family, cfg, blobs[1], samples=25, repeats=2, seed=3)
    parallel = run_transfer(tiny_family, tiny_family, cfg, blobs[1], samples=25, repeats=2, seed=3,
                            workers=2)
    assert again.to_csv() == fgsm_matrix.to_csv() == parallel.to_csv()
    np.testing.assert_array_equal(parallel.values, fgsm_matrix.values)


@pytest.mark.parametrize("attack,kw", [("jsma", {}), ("uap", {"max_epochs": 1}), ("ba", {"iters": 2})])
def test_other_attacks_parallel_matches_serial(tiny_family, blobs, attack, kw):
    cfg = make_config(attack, **kw)
    a = run_transfer(tiny_family[:2], tiny_family[1:], cfg, blobs[1], samples=8, repeats=2, seed=1)
    b = run_transfer(tiny_family[:2], tiny_family[1:], cfg, blobs[1], samples=8, repeats=2, seed=1,
                     workers=2)
    assert a.to_csv() == b.to_csv()
    assert a.rows == ["FP", "2"] and a.cols == ["2", "8"]


def test_shared_samples_see_the_same_adversarial_image(tiny_family, blobs):
    """Targets of one source reuse one crafted image per sample (RNG attacks included)."""
    cfg = make_config("jsma")
    m = run_transfer(tiny_family[:1], tiny_family, cfg, blobs[1], samples=10, repeats=1, seed=0)
    assert m.values.shape == (1, 3, 1)
    man = m.manifest()
    assert man["attack"]["attack"] == "jsma" and man["repeats"] == 1
    json.dumps(man)


def test_manifest_and_save(tmp_path, fgsm_matrix):
    fgsm_matrix.save(tmp_path / "m.csv", tmp_path / "m.json")
    man = json.loads((tmp_path / "m.json").read_text())
    assert man["seed"] == 3 and man["samples"] == 25
    assert np.array(man["repeat_values"]).shape == (3, 3, 2)
    assert (tmp_path / "m.csv").read_text() == fgsm_matrix.to_csv()


def test_rank_correlation():
    a = np.array([0.1, 0.5, 0.3, 0.9])
    assert rank_correlation(a, a) == pytest.approx(1.0)
    assert rank_correlation(a, -a) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        rank_correlation(a, a[:3])
    with pytest.raises(DomainError):
        rank_correlation(a[:1], a[:1])


def test_read_matrix_csv_rejects_bad_input():
    with pytest.raises(FormatError):
        read_matrix_csv("")
    with pytest.raises(FormatError):
        read_matrix_csv("source,a,Average\nx,0.1\n")
    with pytest.raises(FormatError):
        read_matrix_csv("source,a,Average\nx,0.1,zz\n")


def test_model_labels_mixed_architectures():
    a, b = tiny_model(bits=2), constant_model(0, name="Other")
    assert model_labels([a, tiny_model()]) == ["2", "FP"]
    assert model_labels([a, b]) == ["Tiny:2", "Other:FP"]


def test_input_shapes_must_agree(tiny_family, blobs):
    with pytest.raises(ShapeError):
        run_transfer(tiny_family, [constant_model(0)], make_config("fgsm"), blobs[1], samples=2)
    with pytest.raises(DomainError):
        run_transfer([], tiny_family, make_config("fgsm"), blobs[1])


def test_cells_count_source_failures(tiny_family, blobs):
    """Adversarial accuracy uses every crafted sample, including ones the source still gets right."""
    cfg = make_config("fgsm", eps=0.02)
    m = run_transfer(tiny_family[:1], tiny_family[:1], cfg, blobs[1], samples=20, repeats=1, seed=0)
    idx = m.selections["FP->FP#0"]
    sub = blobs[1].by_index(idx)
    adv = craft(tiny_family[0], sub.x, sub.y, cfg, indices=sub.index)
    expected = np.mean(predict(tiny_family[0], adv.adversarial) == sub.y)
    assert m.values[0, 0, 0] == pytest.approx(expected)


def test_on_batch_sees_every_crafted_batch(tiny_family, blobs):
    seen = []
    run_transfer(tiny_family[:2], tiny_family, make_config("jsma"), blobs[1], samples=6, repeats=2, seed=0,
                 on_batch=lambda i, b: seen.append((i, b.attack, len(b))))
    # one batch per (source, repeat) for RNG-driven attacks
    assert [s[:2] for s in seen] == [(0, "jsma"), (0, "jsma"), (1, "jsma"), (1, "jsma")]
