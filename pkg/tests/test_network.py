import numpy as np
import pytest

from skelgcn import autodiff as ad
from skelgcn.autodiff import Tensor
from skelgcn.errors import ConfigError, InvalidBlockError, ShapeMismatchError
from skelgcn.network import (
    BatchNorm,
    BlockConfig,
    DEFAULT_CHANNEL_PLAN,
    Network,
    NetworkConfig,
    averaged_topology,
    default_network_config,
    temporal_conv,
)


def toy_config(**overrides):
    kw = dict(
        blocks=[
            BlockConfig(in_channels=3, out_channels=8, n_branches=1),
            BlockConfig(in_channels=8, out_channels=16, temporal_stride=2, n_branches=1),
        ],
        n_classes=3,
        skeleton="chain5",
        target_frames=8,
        reduction_min=2,
    )
    kw.update(overrides)
    return NetworkConfig(**kw)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = toy_config()
        path = str(tmp_path / "net.json")
        cfg.save(path)
        back = NetworkConfig.load(path)
        assert back.to_dict() == cfg.to_dict()

    def test_channel_chain_validated(self):
        with pytest.raises(ConfigError):
            NetworkConfig(
                blocks=[BlockConfig(3, 8), BlockConfig(16, 16)], n_classes=2
            )

    def test_bad_stride(self):
        with pytest.raises(ConfigError):
            BlockConfig(3, 8, temporal_stride=3)

    def test_bad_modes(self):
        with pytest.raises(ConfigError):
            toy_config(topology_mode="fancy")
        with pytest.raises(ConfigError):
            toy_config(aggregation_mode="mean")
        with pytest.raises(ConfigError):
            toy_config(gate_activation="gelu")

    def test_default_plan(self):
        cfg = default_network_config(60)
        assert [b.out_channels for b in cfg.blocks] == list(DEFAULT_CHANNEL_PLAN)
        assert [b.temporal_stride for b in cfg.blocks] == [1, 1, 1, 1, 2, 1, 1, 2, 1, 1]
        assert cfg.blocks[0].in_channels == 3


class TestTemporalConv:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 6, 4, 3))
        w = np.zeros((9, 3, 3))
        w[4] = np.eye(3)  # center tap only
        out = temporal_conv(Tensor(x), Tensor(w))
        assert np.allclose(out.data, x, atol=1e-15)

    def test_stride_lengths(self):
        x = Tensor(np.zeros((1, 7, 2, 2)))
        w = Tensor(np.zeros((9, 2, 3)))
        assert temporal_conv(x, w, stride=1).shape == (1, 7, 2, 3)
        assert temporal_conv(x, w, stride=2).shape == (1, 4, 2, 3)

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 5, 2, 2))
        w = rng.normal(size=(3, 2, 2))
        out = temporal_conv(Tensor(x), Tensor(w)).data
        xp = np.pad(x, ((0, 0), (1, 1), (0, 0), (0, 0)))
        for t in range(5):
            expect = sum(xp[0, t + k] @ w[k] for k in range(3))
            assert np.allclose(out[0, t], expect, atol=1e-14)

    def test_shape_check(self):
        with pytest.raises(ShapeMismatchError):
            temporal_conv(Tensor(np.zeros((1, 5, 2, 3))), Tensor(np.zeros((9, 2, 3))))


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm(3)
        x = Tensor(rng.normal(loc=5.0, scale=2.0, size=(4, 6, 3)))
        y = bn.forward(x, training=True).data.reshape(-1, 3)
        assert np.allclose(y.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(y.std(axis=0), 1.0, atol=1e-3)

    def test_eval_uses_running_stats(self):
        bn = BatchNorm(2)
        bn.running_mean = np.array([1.0, -1.0])
        bn.running_var = np.array([4.0, 0.25])
        x = Tensor(np.array([[1.0, -1.0]]))
        y = bn.forward(x, training=False).data
        assert np.allclose(y, 0.0, atol=1e-3)

    def test_running_stats_updated_only_in_training(self):
        rng = np.random.default_rng(3)
        bn = BatchNorm(2)
        before = bn.running_mean.copy()
        bn.forward(Tensor(rng.normal(size=(8, 2))), training=False)
        assert np.array_equal(bn.running_mean, before)
        bn.forward(Tensor(rng.normal(size=(8, 2))), training=True)
        assert not np.array_equal(bn.running_mean, before)


class TestForward:
    def test_shape_and_finiteness(self, chain5):
        net = Network(toy_config(), chain5, seed=0)
        rng = np.random.default_rng(4)
        logits = net.forward(rng.normal(size=(1, 8, 5, 3)))
        assert logits.shape == (1, 3)
        assert np.all(np.isfinite(logits.data))

    def test_many_seeds_finite(self, chain5):
        cfg = toy_config()
        for seed in range(100):
            net = Network(cfg, chain5, seed=seed)
            x = np.random.default_rng(seed).normal(size=(1, 8, 5, 3))
            assert np.all(np.isfinite(net.forward(x).data))

    def test_deterministic(self, chain5):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 8, 5, 3))
        a = Network(toy_config(), chain5, seed=1).forward(x).data
        b = Network(toy_config(), chain5, seed=1).forward(x).data
        assert np.array_equal(a, b)

    def test_zero_head_gives_uniform_logits(self, chain5):
        net = Network(toy_config(), chain5, seed=2)
        x = np.random.default_rng(6).normal(size=(2, 8, 5, 3))
        logits = net.forward(x)
        assert np.array_equal(logits.data, np.zeros((2, 3)))
        loss = ad.softmax_cross_entropy(logits, np.array([0, 2]))
        assert loss.item() == pytest.approx(np.log(3.0), abs=1e-15)

    def test_input_shape_check(self, chain5):
        net = Network(toy_config(), chain5, seed=0)
        with pytest.raises(ShapeMismatchError):
            net.forward(np.zeros((1, 8, 4, 3)))
        with pytest.raises(ShapeMismatchError):
            net.forward(np.zeros((8, 5, 3)))

    def test_stride_halves_odd_frames(self, chain5):
        cfg = toy_config(target_frames=7)
        net = Network(cfg, chain5, seed=0)
        x = np.random.default_rng(7).normal(size=(1, 7, 5, 3))
        h = ad.as_tensor(x)
        from skelgcn.network import block_forward

        h = block_forward(h, net.blocks[0], net.phi, cfg)
        assert h.shape[1] == 7
        h = block_forward(h, net.blocks[1], net.phi, cfg)
        assert h.shape[1] == 4  # ceil(7 / 2)

    def test_permutation_invariant_logits(self, toy9):
        """Relabeling joints consistently leaves pooled logits unchanged."""
        rng = np.random.default_rng(8)
        cfg = toy_config(skeleton="toy9")
        net = Network(cfg, toy9, seed=3)
        # give the head weights so the check is not trivially 0 == 0
        net.head_w.data = rng.normal(size=net.head_w.shape)
        x = rng.normal(size=(2, 8, 9, 3))
        base = net.forward(x).data

        perm = rng.permutation(9)
        pnet = Network(cfg, toy9, seed=3)
        pnet.head_w.data = net.head_w.data.copy()
        pnet.phi = net.phi[np.ix_(perm, perm)]
        for block, pblock in zip(net.blocks, pnet.blocks):
            for unit, punit in zip(block.units, pblock.units):
                punit.agg.a_static.data = unit.agg.a_static.data[np.ix_(perm, perm)]
        permuted = pnet.forward(x[:, :, perm]).data
        assert np.max(np.abs(permuted - base)) < 1e-9


class TestParameters:
    def test_count_strictly_increases_per_mechanism(self, chain5):
        counts = {}
        for tm in ("gaussian", "baseline"):
            for am in ("gated", "plain"):
                cfg = toy_config(topology_mode=tm, aggregation_mode=am)
                counts[(tm, am)] = Network(cfg, chain5, seed=0).parameter_count()
        assert counts[("gaussian", "plain")] > counts[("baseline", "plain")]
        assert counts[("gaussian", "gated")] > counts[("baseline", "gated")]
        assert counts[("gaussian", "gated")] > counts[("gaussian", "plain")]
        assert counts[("baseline", "gated")] > counts[("baseline", "plain")]

    def test_describe_lists_everything(self, chain5):
        net = Network(toy_config(), chain5, seed=0)
        text = net.describe()
        assert "head.w" in text
        assert str(net.parameter_count()) in text

    def test_count_matches_named_parameters(self, chain5):
        net = Network(toy_config(), chain5, seed=0)
        assert net.parameter_count() == sum(p.size for p in net.named_parameters().values())

    def test_zero_grad_clears(self, chain5):
        net = Network(toy_config(), chain5, seed=0)
        x = np.random.default_rng(9).normal(size=(1, 8, 5, 3))
        loss = ad.softmax_cross_entropy(net.forward(x, training=True), np.array([0]))
        loss.backward()
        assert any(p.grad is not None for p in net.named_parameters().values())
        net.zero_grad()
        assert all(p.grad is None for p in net.named_parameters().values())


class TestAveragedTopology:
    def test_single_branch_equals_unit(self, chain5):
        net = Network(toy_config(zero_init_expand=False), chain5, seed=4)
        x = np.random.default_rng(10).normal(size=(8, 5, 3))
        per_channel, mean2d = averaged_topology(net, 0, x)
        net.forward(x[None], record_topologies=True)
        unit_a = net.last_topologies[0][0].a.data[0]
        assert np.array_equal(per_channel, unit_a)
        assert np.allclose(mean2d, unit_a.mean(axis=0), atol=1e-15)

    def test_multi_branch_mean(self, chain5):
        cfg = toy_config(zero_init_expand=False)
        cfg.blocks[0].n_branches = 2
        net = Network(cfg, chain5, seed=5)
        x = np.random.default_rng(11).normal(size=(8, 5, 3))
        per_channel, _ = averaged_topology(net, 0, x)
        net.forward(x[None], record_topologies=True)
        graphs = [a.a.data[0] for a in net.last_topologies[0]]
        assert np.allclose(per_channel, np.mean(graphs, axis=0), atol=1e-15)

    def test_identical_branches_average_to_one(self, chain5):
        cfg = toy_config(zero_init_expand=False)
        cfg.blocks[0].n_branches = 2
        net = Network(cfg, chain5, seed=6)
        u0, u1 = net.blocks[0].units
        for name in ("w_src", "w_dst"):
            getattr(u1.topology.prelim, name).data = getattr(u0.topology.prelim, name).data.copy()
            getattr(u1.topology.aux, name).data = getattr(u0.topology.aux, name).data.copy()
        u1.topology.refine.w_expand.data = u0.topology.refine.w_expand.data.copy()
        x = np.random.default_rng(12).normal(size=(8, 5, 3))
        per_channel, _ = averaged_topology(net, 0, x)
        net.forward(x[None], record_topologies=True)
        assert np.allclose(per_channel, net.last_topologies[0][0].a.data[0], atol=1e-15)

    def test_block_index_validated(self, chain5):
        net = Network(toy_config(), chain5, seed=0)
        with pytest.raises(InvalidBlockError):
            averaged_topology(net, 5, np.zeros((8, 5, 3)))
