import numpy as np
import pytest

from wanbench.codecs import default_aux, get_codec
from wanbench.neural import WAN, Tensor, WanConfig, load_checkpoint, save_checkpoint
from wanbench.wan import (TrainConfig, TrainingDivergedError, TripleSet, evaluate_attack, loss_c,
                          loss_wa, make_paired_batches, read_manifest, split_counts, train,
                          wan_attack, wan_losses, write_dataset, write_history)

TINY = WanConfig(1, 1, 4, 2)


def test_paired_batches():
    batches = make_paired_batches(32, 32, epoch_seed=5)
    assert len(batches) == 2 and all(len(b) == 16 for b in batches)
    assert sorted(np.concatenate(batches)) == list(range(32))
    again = make_paired_batches(32, 32, epoch_seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    other = make_paired_batches(32, 32, epoch_seed=6)
    assert not all(np.array_equal(a, b) for a, b in zip(batches, other))
    tail = make_paired_batches(37, 8, epoch_seed=1)
    used = np.concatenate(tail)
    assert len(tail) == 9 and len(set(used)) == 36  # remainder dropped, no repeats
    with pytest.raises(ValueError):
        make_paired_batches(3, 8, 0)
    with pytest.raises(ValueError):
        make_paired_batches(10, 7, 0)


def test_loss_values_against_brute_force():
    rng = np.random.default_rng(0)
    r0, r1, t0, t1 = (rng.normal(size=(2, 5, 5, 1)) for _ in range(4))
    n = r0.size
    expected = sum(abs(r0.ravel()[i] - t1.ravel()[i]) for i in range(n)) / n
    expected += sum(abs(r1.ravel()[i] - t0.ravel()[i]) for i in range(n)) / n
    got = loss_wa(Tensor(r0), Tensor(r1), Tensor(t0), Tensor(t1)).item()
    assert got == pytest.approx(expected, abs=1e-12)
    assert loss_wa(Tensor(r0), Tensor(r1), Tensor(r1), Tensor(r0)).item() == 0.0
    o = rng.uniform(size=(2, 5, 5, 1))
    assert loss_c(Tensor(o), Tensor(o), Tensor(o)).item() == 0.0
    assert loss_c(Tensor(o), Tensor(o + 1), Tensor(o + 1)).item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        loss_c(Tensor(o), Tensor(o[:1]), Tensor(o))


def test_wan_losses_shapes_and_sign():
    net = WAN(TINY, seed=0)
    rng = np.random.default_rng(1)
    o = rng.uniform(size=(3, 16, 16))
    l_wa, l_c, a0, a1 = wan_losses(net, o, o, o)
    assert a0.shape == (3, 16, 16, 1) and l_wa.item() >= 0 and l_c.item() >= 0


def test_zero_output_layer_gives_zero_image():
    net = WAN(TINY, seed=0)
    net.output.weight.data[:] = 0
    x = np.random.default_rng(2).uniform(size=(2, 64, 64))
    np.testing.assert_array_equal(net.infer(x), 0)


def test_wan_attack_matches_tilewise(tmp_path):
    net = WAN(TINY, seed=4)
    save_checkpoint(tmp_path / "n.ckpt", net)
    img = np.random.default_rng(3).uniform(0, 255, (128, 128))
    whole = wan_attack(tmp_path / "n.ckpt", img)
    for i in range(2):
        for j in range(2):
            part = wan_attack(net, img[64 * i:64 * i + 64, 64 * j:64 * j + 64])
            np.testing.assert_array_equal(whole[64 * i:64 * i + 64, 64 * j:64 * j + 64], part)
    assert whole.min() >= 0 and whole.max() <= 255
    with pytest.raises(ValueError):
        wan_attack(net, np.zeros((100, 64)))


def test_split_counts():
    assert split_counts(200) == (140, 10, 50)
    assert sum(split_counts(2857)) == 2857


@pytest.fixture(scope="module")
def tiny_data(blocks):
    aux = default_aux("M3")
    return aux, TripleSet.from_originals(blocks[:16], aux), TripleSet.from_originals(blocks[16:20], aux)


def test_triples_verify(tiny_data):
    aux, tr, _ = tiny_data
    c = get_codec(aux)
    assert np.all(c.extract(tr.w0) == 0) and np.all(c.extract(tr.w1) == 1)


def test_training_is_reproducible_and_selects_best(tiny_data):
    aux, tr, va = tiny_data
    cfg = TrainConfig(batch_size=8, epochs=3, lr=1e-3, dtype="float64")
    a = train(tr, va, aux, cfg, TINY)
    b = train(tr, va, aux, cfg, TINY)
    assert a.history == b.history
    for p, q in zip(a.net.parameters(), b.net.parameters()):
        assert np.array_equal(p.data, q.data)
    bers = [row[3] for row in a.history]
    assert a.best_val_ber == max(bers)
    assert a.best_epoch == 1 + bers.index(max(bers))
    assert evaluate_attack(a.net, va, aux)[0] == pytest.approx(a.best_val_ber)
    assert a.history[-1][1] < a.history[0][1]  # attack loss falls from a random start


def test_divergence_is_reported(tiny_data):
    aux, tr, va = tiny_data
    bad = TripleSet(tr.originals * np.nan, tr.w0, tr.w1)
    with pytest.raises(TrainingDivergedError):
        train(bad, va, aux, TrainConfig(batch_size=8, epochs=1), TINY)


def test_history_and_manifest_files(tmp_path, blocks):
    write_history(tmp_path / "h.csv", [(1, 0.5, 0.25, 0.1, 30.0)])
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,l_wa,l_c,val_ber,val_psnr"
    assert lines[1].startswith("1,0.5")
    aux = default_aux("M2")
    path = write_dataset(blocks[:20], tmp_path / "ds", aux, seed=3)
    first = path.read_text()
    write_dataset(blocks[:20], tmp_path / "ds", aux, seed=3)
    assert path.read_text() == first
    splits = read_manifest(path)
    assert {k: len(v) for k, v in splits.items()} == {"train": 14, "val": 1, "test": 5}
    c = get_codec(aux)
    for ts in splits.values():
        assert np.all(c.extract(ts.w0) == 0) and np.all(c.extract(ts.w1) == 1)


def test_checkpoint_keeps_training_meta(tmp_path, tiny_data):
    aux, tr, va = tiny_data
    res = train(tr, va, aux, TrainConfig(batch_size=8, epochs=1), TINY)
    save_checkpoint(tmp_path / "c.ckpt", res.net, res.meta)
    net, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta["best_epoch"] == 1 and len(meta["history"]) == 1
    x = np.random.default_rng(0).uniform(size=(1, 64, 64)).astype(np.float32)
    np.testing.assert_array_equal(net.infer(x), res.net.infer(x))
