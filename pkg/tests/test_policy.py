"""
扩散调度、DiT 动作头与完整策略测试
"""

import pytest
import torch

from src.core.errors import MissingCheckpointError, NonFiniteError, ShapeError, TimestepRangeError
from src.data.normalization import NormStats, compute_norm_stats
from src.networks import (
    ACDiTPolicy,
    DiTHead,
    ddim_step,
    denoise,
    inject_conditions,
    load_policy,
    make_schedule,
    q_sample,
    save_policy,
    sidecar_path,
)
from src.numerics import ParamStore, grad_check
from src.services.trainer import stage2_loss


@pytest.fixture
def policy(tiny_config, small_dataset) -> ACDiTPolicy:
    torch.manual_seed(0)
    p = ACDiTPolicy(tiny_config)
    p.set_norm_stats(compute_norm_stats(small_dataset))
    return p.eval()


def inference_batch(batch):
    return type(batch)(batch.views, batch.clouds, batch.states, batch.freq, batch.text)


def slice_batch(batch, start, stop):
    return type(batch)(
        *(x[start:stop] for x in (batch.views, batch.clouds, batch.states, batch.freq, batch.text, batch.actions))
    )


class TestSchedule:
    """噪声调度测试"""

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_alpha_bars_decrease(self, kind):
        s = make_schedule(10, kind)
        ab = s.alpha_bars
        assert s.num_steps == 10
        assert ab.dtype == torch.float64
        assert torch.all(ab[1:] < ab[:-1])
        assert torch.all((ab > 0) & (ab < 1))

    def test_linear_endpoints(self):
        s = make_schedule(5, "linear", 1e-4, 0.02)
        assert s.betas[0].item() == pytest.approx(1e-4)
        assert s.betas[-1].item() == pytest.approx(0.02)

    def test_linear_values(self):
        s = make_schedule(5, "linear", 1e-4, 0.02)
        expected = torch.tensor([1e-4, 0.005075, 0.01005, 0.015025, 0.02], dtype=torch.float64)
        assert torch.allclose(s.betas, expected, rtol=0, atol=1e-12)
        assert s.alpha_bars[0].item() == pytest.approx(0.9999, abs=1e-12)
        assert s.alpha_bars[1].item() == pytest.approx(0.9999 * (1 - 0.005075), abs=1e-12)

    def test_cosine_reaches_noise(self):
        s = make_schedule(5, "cosine")
        assert s.alpha_bars[-1].item() < 1e-3

    def test_invalid(self):
        with pytest.raises(ValueError):
            make_schedule(0)
        with pytest.raises(ValueError):
            make_schedule(5, "sigmoid")

    def test_timestep_range(self):
        s = make_schedule(5)
        with pytest.raises(TimestepRangeError):
            s.alpha_bar(5, torch.zeros(1))
        with pytest.raises(TimestepRangeError):
            q_sample(torch.zeros(2, 2, 5), torch.tensor([0, -1]), torch.zeros(2, 2, 5), s)


class TestSampling:
    """加噪与 DDIM 测试"""

    def test_q_sample_without_noise(self):
        s = make_schedule(5)
        a0 = torch.randn(3, 2, 5, dtype=torch.float64)
        t = torch.tensor([0, 2, 4])
        out = q_sample(a0, t, torch.zeros_like(a0), s)
        expected = s.alpha_bars[t].sqrt()[:, None, None] * a0
        assert torch.allclose(out, expected)

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_q_sample_moments(self, kind):
        s = make_schedule(5, kind)
        n = 100_000
        a0 = torch.full((n, 1, 1), 0.7, dtype=torch.float64)
        eps = torch.randn(n, 1, 1, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        for t in range(5):
            ab = s.alpha_bars[t].item()
            x = q_sample(a0, t, eps, s)
            sigma = (1 - ab) ** 0.5
            assert abs(x.mean().item() - ab**0.5 * 0.7) < 3 * sigma / n**0.5
            assert abs(x.std().item() - sigma) < 3 * sigma / (2 * n) ** 0.5

    def test_ddim_last_step_recovers_clean(self):
        s = make_schedule(5)
        a0 = torch.randn(2, 2, 5, dtype=torch.float64)
        eps = torch.randn_like(a0)
        x_t = q_sample(a0, 0, eps, s)
        assert torch.allclose(ddim_step(x_t, eps, 0, s), a0)

    @pytest.mark.parametrize("K", [1, 5, 20])
    def test_oracle_denoiser_recovers_target(self, K):
        s = make_schedule(K, "cosine")
        a0 = torch.randn(2, 2, 5, dtype=torch.float64)

        def oracle(x, t):
            ab = s.alpha_bar(t, x)
            return (x - ab.sqrt() * a0) / (1 - ab).sqrt(), x

        noise = torch.randn_like(a0)
        out, trace = denoise(oracle, noise, s)
        assert torch.allclose(out, a0, atol=1e-8)
        assert len(trace) == K

    def test_non_finite_reports_timestep(self):
        s = make_schedule(3)

        def broken(x, t):
            return torch.full_like(x, float("nan")), x

        with pytest.raises(NonFiniteError) as exc:
            denoise(broken, torch.zeros(1, 2, 5, dtype=torch.float64), s)
        assert exc.value.site == "t=2"


class TestDiTHead:
    """动作头测试"""

    def test_inject_conditions(self):
        g = [torch.zeros(1, n, 4) for n in (2, 3, 5)]
        concat = inject_conditions("concat", g, 4)
        assert len(concat) == 4 and concat[0].shape == (1, 10, 4)
        alternate = inject_conditions("alternate", g, 4)
        assert [c.shape[1] for c in alternate] == [2, 3, 5, 2]
        with pytest.raises(ValueError):
            inject_conditions("interleave", g, 4)
        with pytest.raises(ValueError):
            inject_conditions("concat", [], 4)

    @pytest.mark.parametrize("mode", ["concat", "alternate"])
    def test_forward_shapes(self, mode):
        head = DiTHead(5, horizon=2, d_model=16, num_heads=2, num_blocks=3, inject_mode=mode).double()
        x = torch.randn(4, 2, 5, dtype=torch.float64)
        t = torch.tensor([0, 1, 2, 0])
        groups = [torch.randn(4, n, 16, dtype=torch.float64) for n in (7, 3)]
        eps, tokens = head(x, t, groups)
        assert eps.shape == (4, 2, 5)
        assert tokens.shape == (4, 2, 16)

    def test_timestep_changes_output(self):
        torch.manual_seed(0)
        head = DiTHead(2, horizon=2, d_model=16, num_heads=2, num_blocks=1).double()
        x = torch.randn(1, 2, 2, dtype=torch.float64)
        groups = [torch.randn(1, 3, 16, dtype=torch.float64)]
        a, _ = head(x, torch.tensor([0]), groups)
        b, _ = head(x, torch.tensor([4]), groups)
        assert not torch.allclose(a, b)

    def test_sample_prediction_returns_consistent_eps(self):
        s = make_schedule(3, "cosine")
        torch.manual_seed(0)
        head = DiTHead(5, horizon=2, d_model=16, num_heads=2, num_blocks=1, prediction="sample", schedule=s).double()
        x = torch.randn(2, 2, 5, dtype=torch.float64)
        t = torch.tensor([0, 2])
        groups = [torch.randn(2, 3, 16, dtype=torch.float64)]
        eps, tokens = head(x, t, groups)
        a0_hat = head.final_mlp(head.final_norm(tokens))
        ab = s.alpha_bars[t][:, None, None]
        assert torch.allclose(eps, (x - ab.sqrt() * a0_hat) / (1 - ab).sqrt())
        # DDIM 在该步恢复的干净动作就是头部的估计
        assert torch.allclose(ddim_step(x[:1], eps[:1], 0, s), a0_hat[:1])

    def test_sample_prediction_needs_schedule(self):
        with pytest.raises(ValueError):
            DiTHead(5, horizon=2, d_model=16, num_heads=2, num_blocks=1, prediction="sample")
        with pytest.raises(ValueError):
            DiTHead(5, horizon=2, d_model=16, num_heads=2, num_blocks=1, prediction="velocity")

    def test_condition_sensitivity(self):
        torch.manual_seed(0)
        head = DiTHead(5, horizon=2, d_model=16, num_heads=2, num_blocks=2).double()
        x = torch.randn(1, 2, 5, dtype=torch.float64)
        t = torch.tensor([1])
        cond = torch.randn(1, 4, 16, dtype=torch.float64)
        direction = torch.randn_like(cond)

        def eps_of(c):
            return head(x, t, [c])[0]

        _, tangent = torch.autograd.functional.jvp(eps_of, (cond,), (direction,))
        h = 1e-5
        central = (eps_of(cond + h * direction) - eps_of(cond - h * direction)) / (2 * h)
        assert tangent.abs().max() > 1e-3
        assert torch.allclose(tangent, central, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("prediction", ["epsilon", "sample"])
    def test_single_block_grad_check(self, prediction):
        s = make_schedule(3, "cosine")
        torch.manual_seed(0)
        head = DiTHead(
            5, horizon=2, d_model=8, num_heads=2, num_blocks=1, mlp_ratio=2.0, prediction=prediction, schedule=s
        ).double()
        g = torch.Generator().manual_seed(1)
        x = torch.randn(2, 2, 5, dtype=torch.float64, generator=g)
        t = torch.tensor([0, 2])
        groups = [torch.randn(2, 3, 8, dtype=torch.float64, generator=g)]
        readout = torch.randn(2, 2, 5, dtype=torch.float64, generator=g)

        def objective(_store):
            eps, tokens = head(x, t, groups)
            return (eps * readout).sum() + tokens.pow(2).mean()

        store = ParamStore.from_module(head)
        report = grad_check(objective, store, store.names(), eps=1e-4, tol=1e-6)
        assert report.passed, report.errors


class TestPolicy:
    """完整策略测试"""

    def test_prediction_shapes(self, policy, batch):
        out = policy.predict_actions(inference_batch(batch), seed=1)
        assert out.actions.shape == (3, 2, 5)
        assert out.weights.shape == (3, 4)
        assert torch.allclose(out.weights.sum(-1), torch.ones(3, dtype=torch.float64), atol=1e-6)
        assert out.mobility.rows.shape == (3, 2, 2)
        K = policy.config.diffusion_steps
        assert out.mobility.latent.shape == (3, K * 2, policy.config.d_model)

    def test_same_seed_same_actions(self, policy, batch):
        b = inference_batch(batch)
        a1 = policy.predict_actions(b, seed=7).actions
        a2 = policy.predict_actions(b, seed=7).actions
        a3 = policy.predict_actions(b, seed=8).actions
        assert torch.equal(a1, a2)
        assert not torch.equal(a1, a3)

    def test_history_mismatch(self, policy, batch):
        short = type(batch)(batch.views[:, :1], batch.clouds[:, :1], batch.states[:, :1], batch.freq[:, :1], batch.text)
        with pytest.raises(ShapeError):
            policy.predict_actions(short, seed=0)

    def test_no_mobility_conditioning(self, tiny_config, batch):
        p = ACDiTPolicy(tiny_config.model_copy(update={"conditioning_direction": "none"})).eval()
        out = p.predict_actions(inference_batch(batch), seed=0)
        assert out.mobility is None
        assert out.actions.shape == (3, 2, 5)

    def test_upper_body_direction(self, tiny_config, batch):
        p = ACDiTPolicy(tiny_config.model_copy(update={"conditioning_direction": "upper_body"})).eval()
        out = p.predict_actions(inference_batch(batch), seed=0)
        assert out.mobility.rows.shape == (3, 2, 3)
        assert p.head.mob.action_dim == 3

    def test_fusion_disabled_gives_uniform_weights(self, tiny_config, batch):
        p = ACDiTPolicy(tiny_config.model_copy(update={"use_fusion": False})).eval()
        out = p.predict_actions(inference_batch(batch), seed=0)
        assert torch.allclose(out.weights, torch.full_like(out.weights, 0.25))

    def test_norm_stats_round_trip(self, policy, small_dataset):
        stats = compute_norm_stats(small_dataset)
        back = policy.norm_stats()
        assert back.action_mean == pytest.approx(stats.action_mean)
        assert back.state_std == pytest.approx(stats.state_std)
        policy.set_norm_stats(NormStats.identity(12, 5))
        a = torch.randn(2, 5, dtype=torch.float64)
        assert torch.equal(policy.normalize_actions(a), a)

    def test_parameter_prefixes(self, policy):
        names = ParamStore.from_module(policy).names()
        for prefix in ("enc.img.", "enc.cloud.", "enc.adapter.", "enc.trunk.", "enc.text.", "enc.state.",
                       "fusion.", "head.mob.", "head.manip.", "norm."):
            assert any(n.startswith(prefix) for n in names), prefix

    def test_mobility_head_is_lighter(self):
        from src.models.config_data import ModelConfig

        p = ACDiTPolicy(ModelConfig())
        assert p.head.mob.num_parameters() < p.head.manip.num_parameters()

    def test_every_parameter_receives_gradient(self, tiny_config, batch):
        torch.manual_seed(0)
        p = ACDiTPolicy(tiny_config).train()
        stage2_loss(p, batch, torch.Generator().manual_seed(0)).backward()
        # 点云齐全时占位嵌入不参与前向
        dead = [
            n for n, param in p.named_parameters()
            if n != "enc.cloud.null" and (param.grad is None or not param.grad.abs().sum() > 0)
        ]
        assert not dead

        no_cloud = ACDiTPolicy(tiny_config.model_copy(update={"use_cloud": False})).train()
        stage2_loss(no_cloud, batch, torch.Generator().manual_seed(0)).backward()
        assert no_cloud.enc.cloud.null.grad.abs().sum() > 0

    def test_float32_default(self):
        from src.models.config_data import ModelConfig

        p = ACDiTPolicy(ModelConfig(d_model=16, num_heads=2, encoder_layers=1))
        assert p.dtype == torch.float32
        assert p.num_parameters() == sum(t.numel() for t in p.parameters())


class TestCheckpoint:
    """检查点读写测试"""

    def test_save_load_same_predictions(self, policy, batch, tmp_path):
        path = save_policy(policy, tmp_path / "ckpt" / "p.acdt")
        assert sidecar_path(path).exists()
        loaded = load_policy(path)
        assert loaded.config == policy.config
        b = inference_batch(batch)
        assert torch.equal(loaded.predict_actions(b, seed=3).actions, policy.predict_actions(b, seed=3).actions)

    def test_resave_is_bit_exact(self, policy, tmp_path):
        first = save_policy(policy, tmp_path / "a.acdt")
        second = save_policy(load_policy(first), tmp_path / "b.acdt")
        assert first.read_bytes() == second.read_bytes()

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(MissingCheckpointError):
            load_policy(tmp_path / "none.acdt")

    def test_missing_sidecar(self, policy, tmp_path):
        path = save_policy(policy, tmp_path / "p.acdt")
        sidecar_path(path).unlink()
        with pytest.raises(MissingCheckpointError):
            load_policy(path)


class TestGradients:
    """反向传播与有限差分一致性测试"""

    def test_stage2_loss_grad_check(self, policy, batch):
        policy.train()
        t = torch.tensor([0, 1, 2])
        noise = torch.randn(3, 2, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

        def loss(_store):
            generator = torch.Generator().manual_seed(11)
            return stage2_loss(policy, batch, generator, timesteps=t, noise=noise)

        store = ParamStore.from_module(policy)
        paths = ["head.manip.in_proj.bias", "head.mob.final_mlp.2.bias", "fusion.proj_lang.2.bias"]
        report = grad_check(loss, store, paths, eps=1e-4, tol=1e-6)
        assert report.passed, report.errors

    def test_batch_gradient_is_mean_of_sample_gradients(self, tiny_config, batch):
        torch.manual_seed(0)
        p = ACDiTPolicy(tiny_config.model_copy(update={"conditioning_direction": "none"})).train()
        pair = slice_batch(batch, 0, 2)
        t = torch.tensor([0, 2])
        noise = torch.randn(2, 2, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

        def grads(sub, ts, ns):
            p.zero_grad()
            stage2_loss(p, sub, timesteps=ts, noise=ns).backward()
            return {n: param.grad.clone() for n, param in p.named_parameters()}

        joint = grads(pair, t, noise)
        first = grads(slice_batch(batch, 0, 1), t[:1], noise[:1])
        second = grads(slice_batch(batch, 1, 2), t[1:], noise[1:])
        for name, g in joint.items():
            assert torch.allclose(g, (first[name] + second[name]) / 2, rtol=0, atol=1e-10), name

    @pytest.mark.slow
    def test_full_stage2_grad_check(self, micro_config, small_dataset, batch):
        torch.manual_seed(0)
        p = ACDiTPolicy(micro_config)
        p.set_norm_stats(compute_norm_stats(small_dataset))
        p.train()
        sub = slice_batch(batch, 0, 2)
        t = torch.tensor([0, 1])
        noise = torch.randn(2, 2, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

        def loss(_store):
            return stage2_loss(p, sub, torch.Generator().manual_seed(5), timesteps=t, noise=noise)

        store = ParamStore.from_module(p)
        paths = [n for n, _ in p.named_parameters()]
        report = grad_check(loss, store, paths, eps=1e-4, tol=1e-6)
        assert report.passed, {k: report.errors[k] for k in report.failing_paths()}
