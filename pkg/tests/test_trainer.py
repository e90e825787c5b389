import json
import math

import numpy as np
import pytest

from ksgan import checkpoint as ckpt
from ksgan import trainer as tr
from ksgan.nn import init
from ksgan.targets import make_rng
from ksgan.trainer import ConfigError, NumericAbort, TrainConfig, sample_model, train

TINY = dict(target="8gaussians", n_train=512, n_test=256, batch_size=16, generator_hidden=[8],
            critic_hidden=[8], eval_every=2, eval_points=64)


def tiny(**kw) -> TrainConfig:
    return TrainConfig.from_dict({**TINY, **kw})


# -- config -------------------------------------------------------------------

def test_defaults_follow_reference_setup():
    cfg = TrainConfig(target="moons")
    assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.batch_size) == (1e-4, 0.5, 0.9, 512)
    assert (cfg.generator_updates_total, cfg.beta_score_penalty, cfg.gp_weight) == (128000, 1.0, 0.1)
    assert cfg.k_phi == 1 and cfg.mode == "mean"
    assert TrainConfig(target="moons", method="wgan_gp").k_phi == 5


@pytest.mark.parametrize("field,value", [("k_phi", 0), ("k_theta", 0), ("batch_size", 1),
                                         ("method", "vae"), ("mode", "median"), ("lr", 0.0)])
def test_invalid_fields_named(field, value):
    with pytest.raises(ConfigError) as e:
        tiny(**{field: value})
    assert e.value.field == field and field in str(e.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainConfig.from_dict({"target": "moons", "learning_rate": 1.0})


def test_missing_target_lists_targets():
    with pytest.raises(ConfigError) as e:
        TrainConfig.from_dict({"method": "ksgan"})
    assert "checkerboard" in str(e.value) and "swissroll" in str(e.value)


def test_hyphenated_keys_accepted():
    cfg = TrainConfig.from_dict({"target": "moons", "k-phi": 3, "generator-updates-total": 7})
    assert cfg.k_phi == 3 and cfg.generator_updates_total == 7


def test_config_dict_round_trip():
    cfg = tiny(method="gan", seed=9)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# -- runs ---------------------------------------------------------------------

def test_zero_updates_is_a_no_op(tmp_path):
    cfg = tiny(generator_updates_total=0, seed=4)
    res = train(cfg, tmp_path)
    assert res.metrics == [] and res.critic_updates == 0
    gen_spec, crit_spec = cfg.specs()
    # the same substream layout produces the initial parameters
    from ksgan.targets import substreams
    streams = substreams(4, 6)
    assert res.generator[1] == init(gen_spec, streams[2])
    assert res.critic[1] == init(crit_spec, streams[3])
    assert (tmp_path / "metrics.jsonl").read_text() == ""


@pytest.mark.parametrize("method", ["ksgan", "wgan_gp", "gan"])
def test_same_seed_bit_identical(tmp_path, method):
    cfg = tiny(method=method, generator_updates_total=6, k_phi=2)
    a = train(cfg, tmp_path / "a")
    b = train(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert a.generator[1] == b.generator[1] and a.critic[1] == b.critic[1]
    c = train(tiny(method=method, generator_updates_total=6, k_phi=2, seed=1))
    assert not c.generator[1] == a.generator[1]


@pytest.mark.parametrize("k_phi,k_theta,total", [(1, 1, 5), (3, 2, 5), (2, 3, 9), (5, 1, 3)])
def test_batch_accounting(k_phi, k_theta, total):
    res = train(tiny(generator_updates_total=total, k_phi=k_phi, k_theta=k_theta, eval_every=100))
    assert res.critic_updates == math.ceil(total / k_theta) * k_phi
    assert res.generator[1].step == total
    assert res.critic[1].step == res.critic_updates


def test_batch_reuse_hashes():
    res = train(tiny(generator_updates_total=4, k_phi=3, k_theta=2), track_batches=True)
    crit = [h for tag, _, h in res.batch_log if tag == "critic_last"]
    gen = [h for tag, _, h in res.batch_log if tag == "generator_first"]
    assert len(crit) == len(gen) == 2
    assert crit == gen
    assert crit[0] != crit[1]


def test_metrics_log_and_checkpoints(tmp_path):
    res = train(tiny(generator_updates_total=10, eval_every=3), tmp_path)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    recs = [json.loads(ln) for ln in lines]
    assert [r["generator_step"] for r in recs] == [3, 6, 9, 10]
    assert set(recs[0]) == {"generator_step", "critic_loss", "generator_loss", "score_penalty",
                            "gks_estimate", "mmd2", "mode_count", "wall_clock_ms"}
    assert all(0 <= r["gks_estimate"] <= 1 and r["mmd2"] >= -1e-12 for r in recs)
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["final.ksgn"] + [f"step_{k:08d}.ksgn" for k in range(1, 11)]
    assert res.final_mmd2 == recs[-1]["mmd2"]


def test_baseline_penalty_field_is_null(tmp_path):
    train(tiny(method="wgan_gp", generator_updates_total=2), tmp_path)
    recs = [json.loads(ln) for ln in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert recs[0]["score_penalty"] is None


def test_nan_abort_writes_diagnostic(tmp_path, monkeypatch):
    orig = tr._Trainer.generator_step

    def poisoned(self, x, z):
        loss, c_f, c_g = orig(self, x, z)
        return (float("nan") if self.critic_updates >= 2 else loss), c_f, c_g

    monkeypatch.setattr(tr._Trainer, "generator_step", poisoned)
    with pytest.raises(NumericAbort) as e:
        train(tiny(generator_updates_total=5), tmp_path)
    diag = json.loads((tmp_path / "abort.json").read_text())
    assert diag["loss"] == "generator_loss" and diag["generator_step"] == 1
    assert diag["generator_param_norm"] > 0 and diag["critic_param_norm"] > 0
    assert e.value.record == diag


# -- sampling -----------------------------------------------------------------

def test_sample_model_shapes_and_determinism(tmp_path):
    train(tiny(generator_updates_total=2), tmp_path)
    path = tmp_path / "checkpoints" / "final.ksgn"
    one = sample_model(path, 1, make_rng(0))
    assert one.points.shape == (1, 2)
    a = sample_model(path, 50, make_rng(3))
    b = sample_model(path, 50, make_rng(3))
    np.testing.assert_array_equal(a.points, b.points)


def test_zero_final_layer_outputs_bias(tmp_path):
    res = train(tiny(generator_updates_total=0))
    gen_spec, gen = res.generator
    last = gen_spec.n_layers - 1
    gen.params[f"W{last}"][...] = 0.0
    gen.params[f"b{last}"][...] = [1.25, -0.5]
    entries = tr.checkpoint_entries(res.generator, res.critic)
    out = sample_model(entries, 7, make_rng(0)).points
    np.testing.assert_array_equal(out, np.tile([1.25, -0.5], (7, 1)))


def test_sample_model_rejects_corrupt_checkpoint(tmp_path):
    train(tiny(generator_updates_total=0), tmp_path)
    path = tmp_path / "checkpoints" / "final.ksgn"
    data = bytearray(path.read_bytes())
    data[30] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(ckpt.CheckpointError, match="checksum mismatch"):
        sample_model(path, 3, make_rng(0))
