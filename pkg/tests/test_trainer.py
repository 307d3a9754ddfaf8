import numpy as np
import pytest
import torch
from conftest import ConstD, tiny_config

from dmlct.objectives import NonFiniteLossError
from dmlct.trainer import (LOG_KEYS, HFDomain, Trainer, epoch_batches, fit, load_generator, lr_at_epoch,
                           read_log, steps_per_epoch)


def test_lr_schedule():
    cfg = tiny_config(epochs=200, lr=2e-4)
    assert lr_at_epoch(0, cfg) == lr_at_epoch(99, cfg) == 2e-4
    assert lr_at_epoch(100, cfg) == pytest.approx(2e-4)
    assert lr_at_epoch(150, cfg) == pytest.approx(1e-4)
    assert lr_at_epoch(200, cfg) == 0.0
    with pytest.raises(ValueError):
        lr_at_epoch(201, cfg)


def test_steps_per_epoch():
    assert steps_per_epoch(16, 8, 4) == 4
    assert steps_per_epoch(2, 3, 8) == 1


def test_batches_deterministic(tiny_phantoms):
    cfg = tiny_config()
    dx, dy = HFDomain(tiny_phantoms.ldct, cfg), HFDomain(tiny_phantoms.hdct, cfg)
    a = list(epoch_batches(dx, dy, cfg, 1))
    b = list(epoch_batches(dx, dy, cfg, 1))
    assert len(a) == 2
    for (_, xa, ya), (_, xb, yb) in zip(a, b):
        assert torch.equal(xa, xb) and torch.equal(ya, yb)
    c = list(epoch_batches(dx, dy, cfg, 2))
    assert not torch.equal(a[0][1], c[0][1])


def _batch(tiny_phantoms, cfg):
    dx, dy = HFDomain(tiny_phantoms.ldct, cfg), HFDomain(tiny_phantoms.hdct, cfg)
    _, x, y = next(iter(epoch_batches(dx, dy, cfg, 0)))
    return x, y


def test_one_step_updates_every_module(tiny_phantoms):
    cfg = tiny_config()
    t = Trainer(cfg)
    before = {n: [p.detach().clone() for p in m.parameters()] for n, m in t.modules().items()}
    rec = t.train_step(*_batch(tiny_phantoms, cfg))
    assert set(rec) == set(LOG_KEYS) - {"epoch", "step", "lr"}
    for name, module in t.modules().items():
        changed = [not torch.equal(a, b) for a, b in zip(before[name], module.parameters())]
        assert all(changed), name


def test_step_is_deterministic(tiny_phantoms):
    cfg = tiny_config()
    x, y = _batch(tiny_phantoms, cfg)
    r1 = Trainer(cfg).train_step(x, y, (0, 0))
    r2 = Trainer(cfg).train_step(x, y, (0, 0))
    assert r1 == r2


def test_debug_pairs_share_locations(tiny_phantoms):
    cfg = tiny_config(debug_pairs=True)
    t = Trainer(cfg)
    t.train_step(*_batch(tiny_phantoms, cfg), tag=(3, 1))
    pairs = t.last_pairs
    np.testing.assert_array_equal(pairs["z_locations"], pairs["w_locations"])
    assert pairs["z_locations"].shape == (4, 16, 2)
    assert pairs["grid"] == (32, 32) and pairs["tag"] == (3, 1)
    for item in pairs["z_locations"]:
        assert len(np.unique(item, axis=0)) == 16


def test_frozen_discriminator_stub(tiny_phantoms):
    cfg = tiny_config(lambda_m=0.0)
    t = Trainer(cfg, ConstD())
    assert t.opt_D is None and set(t.optimizers()) == {"G"}
    rec = t.train_step(*_batch(tiny_phantoms, cfg))
    assert rec["L_gan_D"] == 1.0 and rec["L_gan_G"] == 1.0


def test_non_finite_input_raises(tiny_phantoms):
    cfg = tiny_config()
    x, y = _batch(tiny_phantoms, cfg)
    x[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteLossError):
        Trainer(cfg).train_step(x, y)


def test_fit_outputs_and_resume(tmp_path, tiny_phantoms):
    cfg = tiny_config(epochs=4)
    full = fit(tiny_phantoms.ldct, tiny_phantoms.hdct, cfg, tmp_path / "a", max_epochs=2)
    assert [p.name for p in full.checkpoints] == ["ckpt_epoch_0001.pt", "ckpt_epoch_0002.pt"]
    rows = read_log(full.log_path)
    assert len(rows) == 2 * 2 and [r["step"] for r in rows] == [0, 1, 2, 3]
    assert all(set(r) == set(LOG_KEYS) for r in rows)
    assert [r["lr"] for r in rows] == [lr_at_epoch(r["epoch"], cfg) for r in rows]

    fit(tiny_phantoms.ldct, tiny_phantoms.hdct, cfg, tmp_path / "b", max_epochs=1)
    resumed = fit(tiny_phantoms.ldct, tiny_phantoms.hdct, cfg, tmp_path / "b",
                  resume=tmp_path / "b" / "ckpt_epoch_0001.pt", max_epochs=2)
    rows_b = read_log(resumed.log_path)
    assert len(rows_b) == len(rows)
    for ra, rb in zip(rows, rows_b):
        for k in LOG_KEYS:
            assert rb[k] == pytest.approx(ra[k], abs=1e-5, rel=1e-5), k

    gen, loaded_cfg = load_generator(full.checkpoints[-1])
    assert loaded_cfg == cfg and not gen.training
    for a, b in zip(gen.state_dict().values(), full.trainer.G.state_dict().values()):
        assert torch.equal(a, b)


def test_fit_rejects_small_slices(tmp_path, tiny_phantoms):
    with pytest.raises(ValueError):
        fit(tiny_phantoms.ldct, tiny_phantoms.hdct, tiny_config(crop=128), tmp_path)
