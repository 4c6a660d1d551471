"""Finite-difference verification suites at three scopes: individual
differentiable operations, one spatial unit in every mode combination, and
a small two-block network."""

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, finite_diff_check
from .gated import init_static_adjacency
from .network import BlockConfig, Network, NetworkConfig, temporal_conv
from .skeleton import build_skeleton

CHAIN5 = [(0, 1), (1, 2), (2, 3), (3, 4)]


def _readout(out, seed):
    w = Tensor(np.random.default_rng(seed ^ 0x5EED).normal(size=out.shape))
    return ad.reduce_sum(ad.mul(out, w))


def _merge(report, sub, prefix):
    for e in sub.entries:
        e.name = prefix + ":" + e.name
        report.entries.append(e)


def check_ops(seeds=range(10), eps=1e-5, tol=1e-4):
    """Every differentiable op against central differences."""
    report = GradCheckReport(tol=tol, eps=eps)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        row = Tensor(rng.normal(size=(3,)), requires_grad=True)
        cases = {
            "add": (lambda: _readout(ad.add(a, b), seed), [a, b]),
            "sub_broadcast": (lambda: _readout(ad.sub(a, row), seed), [a, row]),
            "mul": (lambda: _readout(ad.mul(a, b), seed), [a, b]),
            "tanh": (lambda: _readout(ad.tanh(a), seed), [a]),
            "sigmoid": (lambda: _readout(ad.sigmoid(a), seed), [a]),
            "relu": (lambda: _readout(ad.relu(a), seed), [a]),
            "absolute": (lambda: _readout(ad.absolute(a), seed), [a]),
            "reciprocal": (lambda: _readout(ad.reciprocal(ad.add(ad.mul(a, a), 1.0)), seed), [a]),
            "sqrt": (lambda: _readout(ad.sqrt(ad.add(ad.mul(a, a), 1.0)), seed), [a]),
            "clip_min": (lambda: _readout(ad.clip_min(a, 0.1), seed), [a]),
            "reduce_mean": (lambda: _readout(ad.reduce_mean(a, 0), seed), [a]),
            "reduce_sum": (lambda: _readout(ad.reduce_sum(a, 1), seed), [a]),
            "reduce_max": (lambda: _readout(ad.reduce_max(a, 1, keepdims=True), seed), [a]),
            "reshape": (lambda: _readout(ad.reshape(a, (3, 2)), seed), [a]),
            "transpose": (lambda: _readout(ad.transpose(a, (1, 0)), seed), [a]),
            "take": (lambda: _readout(a[:, ::2], seed), [a]),
        }
        for name, (f, params) in cases.items():
            _merge(report, finite_diff_check(f, params, eps, tol), "seed%d:%s" % (seed, name))

        m1 = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
        m2 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        _merge(
            report,
            finite_diff_check(lambda: _readout(ad.matmul(m1, m2), seed), [m1, m2], eps, tol),
            "seed%d:matmul" % seed,
        )

        adj = Tensor(rng.normal(size=(3, 5, 5)), requires_grad=True)
        feat = Tensor(rng.normal(size=(4, 5, 3)), requires_grad=True)
        _merge(
            report,
            finite_diff_check(
                lambda: _readout(ad.graph_contract(adj, feat), seed), [adj, feat], eps, tol
            ),
            "seed%d:graph_contract" % seed,
        )

        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        labels = rng.integers(0, 3, size=4)
        _merge(
            report,
            finite_diff_check(
                lambda: ad.softmax_cross_entropy(logits, labels), [logits], eps, tol
            ),
            "seed%d:softmax_cross_entropy" % seed,
        )

        xc = Tensor(rng.normal(size=(2, 6, 3, 2)), requires_grad=True)
        wc = Tensor(rng.normal(size=(9, 2, 3)), requires_grad=True)
        for stride in (1, 2):
            _merge(
                report,
                finite_diff_check(
                    lambda s=stride: _readout(temporal_conv(xc, wc, stride=s), seed),
                    [xc, wc],
                    eps,
                    tol,
                ),
                "seed%d:temporal_conv_s%d" % (seed, stride),
            )
    return report


def _unit_network(topology_mode, aggregation_mode, seed, n_classes=3):
    cfg = NetworkConfig(
        blocks=[BlockConfig(in_channels=3, out_channels=4, n_branches=1)],
        n_classes=n_classes,
        skeleton="chain5",
        topology_mode=topology_mode,
        aggregation_mode=aggregation_mode,
        target_frames=4,
        reduction_min=2,
        zero_init_expand=False,
    )
    return Network(cfg, build_skeleton(5, CHAIN5, name="chain5"), seed=seed)


def check_unit(seeds=range(10), eps=1e-5, tol=1e-4):
    """Gradients through one spatial unit in all four mode combinations."""
    from .network import spatial_unit_forward

    report = GradCheckReport(tol=tol, eps=eps)
    g = build_skeleton(5, CHAIN5, name="chain5")
    from .skeleton import gaussian_filter, shortest_path_distances

    phi = gaussian_filter(shortest_path_distances(g))
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for tm in ("gaussian", "baseline"):
            for am in ("gated", "plain"):
                net = _unit_network(tm, am, seed)
                unit = net.blocks[0].units[0]
                x = Tensor(rng.normal(size=(4, 5, 3)))
                names, params = zip(
                    *[
                        (n[len("block0.unit0.") :], p)
                        for n, p in net.named_parameters().items()
                        if n.startswith("block0.unit0.")
                    ]
                )

                def f(tm=tm, am=am, unit=unit):
                    out, _ = spatial_unit_forward(x, phi, unit, tm, am, "sigmoid")
                    return _readout(out, seed)

                _merge(
                    report,
                    finite_diff_check(f, list(params), eps, tol, names=list(names)),
                    "seed%d:%s/%s" % (seed, tm, am),
                )
    return report


def check_network(seeds=range(10), eps=1e-5, tol=1e-4):
    """Full loss gradient of a two-block network, every parameter."""
    report = GradCheckReport(tol=tol, eps=eps)
    g = build_skeleton(5, CHAIN5, name="chain5")
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cfg = NetworkConfig(
            blocks=[
                BlockConfig(in_channels=3, out_channels=4, n_branches=1),
                BlockConfig(in_channels=4, out_channels=4, temporal_stride=2, n_branches=1),
            ],
            n_classes=3,
            skeleton="chain5",
            target_frames=4,
            reduction_min=2,
            zero_init_expand=False,
        )
        net = Network(cfg, g, seed=seed)
        # head starts at zero; give it signal so its gradient path is nontrivial
        net.head_w.data = rng.normal(scale=0.3, size=net.head_w.shape)
        net.head_b.data = rng.normal(scale=0.1, size=net.head_b.shape)
        x = rng.normal(size=(2, 4, 5, 3))
        labels = rng.integers(0, 3, size=2)
        names, params = zip(*net.named_parameters().items())

        def f(net=net, x=x, labels=labels):
            return ad.softmax_cross_entropy(net.forward(x, training=False), labels)

        _merge(
            report,
            finite_diff_check(f, list(params), eps, tol, names=list(names)),
            "seed%d:network" % seed,
        )
    return report


def run_scope(scope, seeds=range(10), eps=1e-5, tol=1e-4):
    try:
        fn = {"ops": check_ops, "unit": check_unit, "network": check_network}[scope]
    except KeyError:
        raise ValueError("unknown grad-check scope %r" % scope) from None
    return fn(seeds=seeds, eps=eps, tol=tol)
