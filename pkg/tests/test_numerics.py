from collections import OrderedDict

import numpy as np
import pytest
import torch

from latent_restoration.config import Config
from latent_restoration.errors import ContractViolation, NumericError
from latent_restoration.numerics import (
    OptimState,
    ParamSet,
    adamw_step,
    check_finite,
    ema_decay_schedule,
    ema_update,
    finite_difference_grad,
    grad,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    stop_gradient,
)


def _params(seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return ParamSet(OrderedDict(
        w=torch.randn(3, 2, generator=g, dtype=dtype),
        b=torch.randn(2, generator=g, dtype=dtype),
    ))


def _loss(x):
    def fn(p):
        return (torch.tanh(x @ p["w"] + p["b"]) ** 2).sum()
    return fn


class TestParamSet:
    def test_replace_keeps_shapes(self):
        p = _params()
        with pytest.raises(ContractViolation):
            p.replace({"w": torch.zeros(2, 3, dtype=torch.float64)})
        with pytest.raises(ContractViolation):
            p.replace({"missing": torch.zeros(1)})

    def test_frozen_names_must_exist(self):
        with pytest.raises(ContractViolation):
            ParamSet({"a": torch.zeros(1)}, frozen=["b"])

    def test_merged_and_subset_are_inverse(self):
        a = _params(0).freeze(["b"])
        b = _params(1)
        merged = a.merged(b, "a.", "b.")
        assert merged.frozen == {"a.b"}
        assert merged.subset("a.").equal(a)
        assert merged.subset("a.").frozen == {"b"}
        assert merged.subset("b.").equal(b)

    def test_detached_shares_values(self):
        p = _params().requiring_grad()
        d = p.detached()
        assert d.equal(p)
        assert not any(t.requires_grad for t in d.values())


class TestGrad:
    def test_matches_finite_differences(self, float64):
        for seed in range(20):
            x = torch.randn(5, 3, generator=torch.Generator().manual_seed(100 + seed))
            assert gradient_check(_loss(x), _params(seed)) < 1e-4

    def test_frozen_and_unused_get_zeros(self, float64):
        p = ParamSet(OrderedDict(w=torch.ones(2), unused=torch.ones(3))).freeze(["w"])
        g = grad(lambda q: (q["w"] ** 2).sum(), p)
        assert torch.equal(g["w"], torch.zeros(2))
        assert torch.equal(g["unused"], torch.zeros(3))

    def test_stop_gradient_blocks_backward(self, float64):
        p = ParamSet({"w": torch.tensor([2.0])})
        g = grad(lambda q: q["w"][0] * stop_gradient(q["w"][0]), p)
        assert g["w"].item() == pytest.approx(2.0)

    def test_non_scalar_loss(self):
        with pytest.raises(ContractViolation):
            grad(lambda q: q["w"] * 2, ParamSet({"w": torch.ones(2)}))

    def test_non_finite_loss(self):
        with pytest.raises(NumericError):
            grad(lambda q: q["w"].sum() / 0.0, ParamSet({"w": torch.ones(2)}))

    def test_check_finite_is_gated_by_debug_mode(self, monkeypatch):
        bad = torch.tensor([1.0, float("nan")])
        monkeypatch.setattr(Config, "DEBUG_NUMERICS", False)
        assert check_finite(bad, "x") is bad
        monkeypatch.setattr(Config, "DEBUG_NUMERICS", True)
        with pytest.raises(NumericError, match="x"):
            check_finite(bad, "x", step=3)
        with pytest.raises(NumericError):
            check_finite(np.array([np.inf]), "array")
        assert check_finite(torch.ones(2), "ok").sum() == 2

    def test_finite_difference_on_linear_loss_is_exact(self, float64):
        p = ParamSet({"w": torch.tensor([1.0, -2.0])})
        fd = finite_difference_grad(lambda q: (torch.tensor([3.0, 5.0]) * q["w"]).sum(), p)
        assert torch.allclose(fd["w"], torch.tensor([3.0, 5.0]), atol=1e-8)


class TestOptim:
    def test_first_adamw_step(self, float64):
        p = ParamSet({"w": torch.tensor([1.0, -1.0])})
        state = OptimState.create(p, lr=0.1, weight_decay=0.5, eps=0.0)
        out = adamw_step(p, {"w": torch.tensor([0.3, -2.0])}, state)
        # bias-corrected moments give m / sqrt(v) = sign(g) on the first step
        expected = torch.tensor([1.0, -1.0]) * (1 - 0.1 * 0.5) - 0.1 * torch.tensor([1.0, -1.0])
        assert torch.allclose(out["w"], expected)
        assert out.step == 1 and state.step == 1

    def test_frozen_parameters_untouched(self, float64):
        p = ParamSet({"w": torch.ones(2), "f": torch.ones(2)}).freeze(["f"])
        state = OptimState.create(p, lr=0.1, weight_decay=0.1)
        out = adamw_step(p, {"w": torch.ones(2), "f": torch.ones(2)}, state)
        assert torch.equal(out["f"], p["f"])
        assert "f" not in state.exp_avg

    def test_missing_gradient(self):
        p = ParamSet({"w": torch.ones(2)})
        with pytest.raises(ContractViolation):
            adamw_step(p, {}, OptimState.create(p, lr=0.1))

    def test_ema_update(self, float64):
        shadow = ParamSet({"w": torch.zeros(2)})
        live = ParamSet({"w": torch.ones(2)}, step=7)
        out = ema_update(shadow, live, 0.9)
        assert torch.allclose(out["w"], torch.full((2,), 0.1))
        assert out.step == 7

    def test_ema_contracts_geometrically(self, float64):
        shadow = ParamSet({"w": torch.zeros(3)})
        live = ParamSet({"w": torch.ones(3)})
        for n in range(1, 51):
            shadow = ema_update(shadow, live, 0.9)
            assert torch.allclose(shadow["w"], torch.full((3,), 1.0 - 0.9 ** n), atol=1e-12)

    def test_ema_with_warmup_tracks_the_decay_product(self, float64):
        shadow = ParamSet({"w": torch.zeros(2)})
        live = ParamSet({"w": torch.ones(2)})
        remaining = 1.0
        for step in range(200):
            decay = ema_decay_schedule(step, 0.999)
            shadow = ema_update(shadow, live, decay)
            remaining *= decay
            assert torch.allclose(1.0 - shadow["w"], torch.full((2,), remaining), atol=1e-12)

    def test_ema_rejects_bad_decay(self):
        p = ParamSet({"w": torch.zeros(1)})
        with pytest.raises(ContractViolation):
            ema_update(p, p, 1.0)

    def test_ema_decay_warmup(self):
        assert ema_decay_schedule(0, 0.999) == pytest.approx(0.1)
        assert ema_decay_schedule(10 ** 6, 0.999) == 0.999
        assert ema_decay_schedule(0, 0.999, warmup=False) == 0.999


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = _params(3).freeze(["b"]).replace({}, step=42)
        p32 = ParamSet({"h": torch.arange(6, dtype=torch.float32).reshape(2, 3)})
        merged = p.merged(p32, "a.", "c.")
        path = save_checkpoint(tmp_path / "sub" / "x.ckpt", merged, {"note": "hi"})
        loaded, meta = load_checkpoint(path)
        assert loaded.equal(merged)
        assert loaded["c.h"].dtype == torch.float32
        assert loaded.frozen == {"a.b"}
        assert loaded.step == 42
        assert meta == {"note": "hi"}

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE0000000000")
        with pytest.raises(ContractViolation):
            load_checkpoint(path)
