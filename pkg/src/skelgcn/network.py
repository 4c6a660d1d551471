"""Full spatio-temporal classifier: spatial units, temporal convolutions,
residual blocks, pooling and the classification head."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .autodiff import _record  # noqa: F401  (custom ops below)
from .errors import ConfigError, InvalidBlockError, ShapeMismatchError
from .gated import (
    gated_forward,
    init_gated,
    init_plain,
    init_static_adjacency,
    plain_forward,
)
from .skeleton import gaussian_filter, shortest_path_distances
from .topology import (
    baseline_topology_forward,
    gaussian_topology_forward,
    init_gaussian_topology,
    reduced_channels,
)

TEMPORAL_KERNEL = 9

DEFAULT_CHANNEL_PLAN = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDE_BLOCKS = (5, 8)  # 1-indexed


# -- configuration -------------------------------------------------------


@dataclass
class BlockConfig:
    in_channels: int
    out_channels: int
    temporal_stride: int = 1
    n_branches: int = 3

    def __post_init__(self):
        if self.temporal_stride not in (1, 2):
            raise ConfigError("temporal_stride must be 1 or 2")
        if self.n_branches < 1:
            raise ConfigError("n_branches must be >= 1")


@dataclass
class NetworkConfig:
    blocks: list
    n_classes: int
    skeleton: str = "ntu25"
    gate_activation: str = "sigmoid"  # sigmoid | tanh
    topology_mode: str = "gaussian"  # gaussian | baseline
    aggregation_mode: str = "gated"  # gated | plain
    target_frames: int = 32
    reduction: int = 8
    reduction_min: int = 8
    zero_init_expand: bool = True

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockConfig) else BlockConfig(**b) for b in self.blocks]
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != cur.in_channels:
                raise ConfigError(
                    "channel chain broken: %d -> %d" % (prev.out_channels, cur.in_channels)
                )
        if self.gate_activation not in ("sigmoid", "tanh"):
            raise ConfigError("gate_activation must be sigmoid or tanh")
        if self.topology_mode not in ("gaussian", "baseline"):
            raise ConfigError("topology_mode must be gaussian or baseline")
        if self.aggregation_mode not in ("gated", "plain"):
            raise ConfigError("aggregation_mode must be gated or plain")

    def to_dict(self):
        d = dict(self.__dict__)
        d["blocks"] = [dict(b.__dict__) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def default_network_config(n_classes, skeleton="ntu25", **overrides):
    blocks = []
    c_in = 3
    for i, c_out in enumerate(DEFAULT_CHANNEL_PLAN, start=1):
        stride = 2 if i in DEFAULT_STRIDE_BLOCKS else 1
        blocks.append(BlockConfig(in_channels=c_in, out_channels=c_out, temporal_stride=stride))
        c_in = c_out
    return NetworkConfig(blocks=blocks, n_classes=n_classes, skeleton=skeleton, **overrides)


# -- custom ops ----------------------------------------------------------


def temporal_conv(x, w, stride=1):
    """1-D convolution along the frame axis, per joint.

    x: (B, T, N, C), w: (K, C, C_out); zero padding (K-1)/2 keeps
    T_out = ceil(T / stride).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 3 or x.shape[-1] != w.shape[1]:
        raise ShapeMismatchError("temporal_conv: x%s w%s" % (x.shape, w.shape))
    k = w.shape[0]
    pad = (k - 1) // 2
    t = x.shape[1]
    t_out = -(-t // stride)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    hi = (t_out - 1) * stride + 1
    out = np.zeros(x.shape[:1] + (t_out,) + x.shape[2:3] + (w.shape[2],))
    for kk in range(k):
        out += np.einsum("btnc,cd->btnd", xp[:, kk : kk + hi : stride], w.data[kk])

    def backward(g):
        dw = np.zeros_like(w.data)
        dxp = np.zeros_like(xp)
        for kk in range(k):
            dw[kk] = np.einsum("btnc,btnd->cd", xp[:, kk : kk + hi : stride], g)
            dxp[:, kk : kk + hi : stride] += np.einsum("btnd,cd->btnc", g, w.data[kk])
        return dxp[:, pad : pad + t], dw

    return _record(out, (x, w), backward)


class BatchNorm:
    """Per-channel normalization over all leading axes of (..., C).

    Batch statistics are used (and folded into running estimates) during
    training; running statistics are frozen at evaluation.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, training):
        c = x.shape[-1]
        if training:
            flat = ad.reshape(x, (-1, c))
            mu = ad.reduce_mean(flat, axis=0)
            centered = ad.sub(flat, mu)
            var = ad.reduce_mean(ad.mul(centered, centered), axis=0)
            inv_std = ad.reciprocal(ad.sqrt(ad.add(var, self.eps)))
            y = ad.mul(ad.mul(centered, inv_std), self.gamma)
            y = ad.add(y, self.beta)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data
            self.running_var = (1 - m) * self.running_var + m * var.data
            return ad.reshape(y, x.shape)
        inv_std = Tensor(1.0 / np.sqrt(self.running_var + self.eps))
        centered = ad.sub(x, Tensor(self.running_mean))
        return ad.add(ad.mul(centered, ad.mul(self.gamma, inv_std)), self.beta)


# -- spatial unit --------------------------------------------------------


@dataclass
class SpatialUnitParams:
    topology: object  # GaussianTopologyParams
    agg: object  # GatedParams | PlainParams


def init_spatial_unit(rng, c_in, c_out, a_static_init, cfg):
    c_red = reduced_channels(c_in, cfg.reduction, cfg.reduction_min)
    topo = init_gaussian_topology(
        rng,
        c_in,
        c_out,
        c_red=c_red,
        with_aux=(cfg.topology_mode == "gaussian"),
        zero_init_expand=cfg.zero_init_expand,
    )
    if cfg.aggregation_mode == "gated":
        agg = init_gated(rng, c_in, c_out, a_static_init)
    else:
        agg = init_plain(rng, c_in, c_out, a_static_init)
    return SpatialUnitParams(topology=topo, agg=agg)


def spatial_unit_forward(x, phi, unit, topology_mode, aggregation_mode, gate_activation):
    """Returns (features (..., T, N, C_out), refined topology graph)."""
    if topology_mode == "gaussian":
        a = gaussian_topology_forward(x, phi, unit.topology)
    else:
        a = baseline_topology_forward(x, unit.topology)
    if aggregation_mode == "gated":
        out = gated_forward(x, a, unit.agg, gate_activation)
    else:
        out = plain_forward(x, a, unit.agg)
    return out, a


# -- block ---------------------------------------------------------------


@dataclass
class BlockParams:
    units: list
    tconv_w: Tensor
    bn: BatchNorm
    res_proj: Tensor = None
    temporal_stride: int = 1


def init_block(rng, bc, a_static_init, cfg):
    from .initializers import xavier_uniform

    units = [
        init_spatial_unit(rng, bc.in_channels, bc.out_channels, a_static_init, cfg)
        for _ in range(bc.n_branches)
    ]
    fan = TEMPORAL_KERNEL * bc.out_channels
    bound = np.sqrt(6.0 / (fan + bc.out_channels))
    tconv_w = Tensor(
        rng.uniform(-bound, bound, size=(TEMPORAL_KERNEL, bc.out_channels, bc.out_channels)),
        requires_grad=True,
    )
    res_proj = None
    if bc.in_channels != bc.out_channels or bc.temporal_stride != 1:
        res_proj = xavier_uniform(rng, (bc.in_channels, bc.out_channels))
    return BlockParams(
        units=units,
        tconv_w=tconv_w,
        bn=BatchNorm(bc.out_channels),
        res_proj=res_proj,
        temporal_stride=bc.temporal_stride,
    )


def block_forward(x, block, phi, cfg, training=False, captured=None):
    """Sum of spatial branches, temporal conv, normalization, residual, relu."""
    spatial = None
    for unit in block.units:
        out, a = spatial_unit_forward(
            x, phi, unit, cfg.topology_mode, cfg.aggregation_mode, cfg.gate_activation
        )
        if captured is not None:
            captured.append(a)
        spatial = out if spatial is None else ad.add(spatial, out)
    h = temporal_conv(spatial, block.tconv_w, stride=block.temporal_stride)
    h = block.bn.forward(h, training)
    if block.res_proj is None:
        res = x
    else:
        res = ad.matmul(x[:, :: block.temporal_stride], block.res_proj)
    return ad.relu(ad.add(h, res))


# -- network -------------------------------------------------------------


class Network:
    """Stacked residual blocks, global average pooling, affine head."""

    def __init__(self, config, skeleton, seed=0):
        self.config = config
        self.skeleton = skeleton
        self.phi = gaussian_filter(shortest_path_distances(skeleton))
        rng = np.random.default_rng(seed)
        a_init = init_static_adjacency(skeleton)
        self.blocks = [init_block(rng, bc, a_init, config) for bc in config.blocks]
        c_last = config.blocks[-1].out_channels
        # zero-init head: uniform logits (and exactly ln K loss) at start
        self.head_w = Tensor(np.zeros((c_last, config.n_classes)), requires_grad=True)
        self.head_b = Tensor(np.zeros(config.n_classes), requires_grad=True)
        self.last_topologies = None

    def forward(self, x, training=False, record_topologies=False):
        """x: (B, T, N, 3) -> logits (B, n_classes)."""
        h = as_tensor(x)
        if h.ndim != 4 or h.shape[2] != self.skeleton.n_joints or h.shape[3] != 3:
            raise ShapeMismatchError(
                "expected (B, T, %d, 3), got %s" % (self.skeleton.n_joints, h.shape)
            )
        captured = [] if record_topologies else None
        per_block = []
        for block in self.blocks:
            cap = [] if record_topologies else None
            h = block_forward(h, block, self.phi, self.config, training=training, captured=cap)
            if record_topologies:
                per_block.append(cap)
        if record_topologies:
            self.last_topologies = per_block
        pooled = ad.reduce_mean(ad.reduce_mean(h, axis=1), axis=1)  # (B, C)
        return ad.add(ad.matmul(pooled, self.head_w), self.head_b)

    # -- parameter bookkeeping ------------------------------------------

    def named_parameters(self):
        out = {}
        for bi, block in enumerate(self.blocks):
            prefix = "block%d." % bi
            for ui, unit in enumerate(block.units):
                up = prefix + "unit%d." % ui
                t = unit.topology
                out[up + "prelim.w_src"] = t.prelim.w_src
                out[up + "prelim.w_dst"] = t.prelim.w_dst
                if t.aux is not None:
                    out[up + "aux.w_src"] = t.aux.w_src
                    out[up + "aux.w_dst"] = t.aux.w_dst
                out[up + "refine.w_expand"] = t.refine.w_expand
                a = unit.agg
                out[up + "agg.w_msg"] = a.w_msg
                out[up + "agg.a_static"] = a.a_static
                if hasattr(a, "w_zo"):
                    for nm in ("w_zo", "w_zi", "w_ro", "w_ri", "w_mo", "w_mi"):
                        out[up + "agg." + nm] = getattr(a, nm)
                    if a.w_res is not None:
                        out[up + "agg.w_res"] = a.w_res
            out[prefix + "tconv_w"] = block.tconv_w
            out[prefix + "bn.gamma"] = block.bn.gamma
            out[prefix + "bn.beta"] = block.bn.beta
            if block.res_proj is not None:
                out[prefix + "res_proj"] = block.res_proj
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def named_buffers(self):
        out = {}
        for bi, block in enumerate(self.blocks):
            out["block%d.bn.running_mean" % bi] = block.bn.running_mean
            out["block%d.bn.running_var" % bi] = block.bn.running_var
        return out

    def set_buffer(self, name, value):
        bi, _, rest = name.partition(".")
        block = self.blocks[int(bi[5:])]
        if rest == "bn.running_mean":
            block.bn.running_mean = np.array(value)
        elif rest == "bn.running_var":
            block.bn.running_var = np.array(value)
        else:
            raise KeyError(name)

    def parameter_count(self):
        return sum(p.size for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def describe(self):
        lines = ["%-40s %-16s %10s" % ("parameter", "shape", "count"), "-" * 68]
        for name, p in self.named_parameters().items():
            lines.append("%-40s %-16s %10d" % (name, "x".join(map(str, p.shape)), p.size))
        lines.append("-" * 68)
        lines.append(
            "%-40s %-16s %10d" % ("total (%s/%s)" % (self.config.topology_mode, self.config.aggregation_mode), "", self.parameter_count())
        )
        return "\n".join(lines)


def averaged_topology(network, block_index, sample):
    """Mean refined topology of one block's branches on a single sample.

    Returns (per_channel (C, N, N), channel_mean (N, N)).
    """
    if not (0 <= block_index < len(network.blocks)):
        raise InvalidBlockError("block %d out of range" % block_index)
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    network.forward(x, training=False, record_topologies=True)
    graphs = [a.a.data[0] for a in network.last_topologies[block_index]]
    per_channel = np.mean(graphs, axis=0)
    return per_channel, per_channel.mean(axis=0)
