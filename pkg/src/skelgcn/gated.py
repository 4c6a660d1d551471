"""Gate-selective message passing over refined topologies.

Neighbor messages (diagonal masked out) enter the joint state through a
GRU-style update/reset gate pair; a shared trainable adjacency provides a
residual structural path.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ShapeMismatchError
from .initializers import xavier_uniform
from .topology import TopologyGraph


@dataclass
class GatedParams:
    w_msg: Tensor  # C x C_out, message transform shared with the static path
    w_zo: Tensor  # C x C_out
    w_zi: Tensor  # C_out x C_out
    w_ro: Tensor  # C x C_out
    w_ri: Tensor  # C_out x C_out
    w_mo: Tensor  # C x C_out
    w_mi: Tensor  # C_out x C_out
    a_static: Tensor  # N x N, trainable
    w_res: Tensor = None  # C x C_out projection, None when C == C_out


@dataclass
class PlainParams:
    """Gates disabled: plain weighted aggregation plus the static path."""

    w_msg: Tensor
    a_static: Tensor


def init_static_adjacency(g):
    """Symmetric normalized adjacency with self-loops as the start value."""
    adj = g.adjacency() + np.eye(g.n_joints)
    inv_sqrt_deg = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def init_gated(rng, c_in, c_out, a_static_init):
    return GatedParams(
        w_msg=xavier_uniform(rng, (c_in, c_out)),
        w_zo=xavier_uniform(rng, (c_in, c_out)),
        w_zi=xavier_uniform(rng, (c_out, c_out)),
        w_ro=xavier_uniform(rng, (c_in, c_out)),
        w_ri=xavier_uniform(rng, (c_out, c_out)),
        w_mo=xavier_uniform(rng, (c_in, c_out)),
        w_mi=xavier_uniform(rng, (c_out, c_out)),
        a_static=Tensor(np.array(a_static_init, dtype=np.float64), requires_grad=True),
        w_res=None if c_in == c_out else xavier_uniform(rng, (c_in, c_out)),
    )


def init_plain(rng, c_in, c_out, a_static_init):
    return PlainParams(
        w_msg=xavier_uniform(rng, (c_in, c_out)),
        a_static=Tensor(np.array(a_static_init, dtype=np.float64), requires_grad=True),
    )


def mask_self_loops(a):
    """Zero every channel's diagonal, leaving off-diagonals untouched."""
    n = a.n_joints
    return TopologyGraph(a=ad.mul(a.a, Tensor(1.0 - np.eye(n))), kind=a.kind)


def gated_forward(x, a_gauss, p, gate_activation="sigmoid", force_z=None, force_r=None):
    """One gated aggregation step: (..., T, N, C) -> (..., T, N, C_out).

    force_z / force_r are test hooks replacing the computed gate with a
    constant array of the gate's shape.
    """
    x = as_tensor(x)
    c_in, c_out = p.w_msg.shape
    if x.shape[-1] != c_in:
        raise ShapeMismatchError("input channels %d != expected %d" % (x.shape[-1], c_in))
    act = ad.sigmoid if gate_activation == "sigmoid" else ad.tanh

    xw = ad.matmul(x, p.w_msg)
    h_in = ad.graph_contract(mask_self_loops(a_gauss).a, xw)
    if force_z is None:
        z = act(ad.add(ad.matmul(x, p.w_zo), ad.matmul(h_in, p.w_zi)))
    else:
        z = Tensor(np.broadcast_to(np.asarray(force_z, dtype=np.float64), h_in.shape))
    if force_r is None:
        r = act(ad.add(ad.matmul(x, p.w_ro), ad.matmul(h_in, p.w_ri)))
    else:
        r = Tensor(np.broadcast_to(np.asarray(force_r, dtype=np.float64), h_in.shape))
    h_middle = ad.tanh(ad.add(ad.mul(r, ad.matmul(h_in, p.w_mi)), ad.matmul(x, p.w_mo)))
    h_original = x if p.w_res is None else ad.matmul(x, p.w_res)
    h_final = ad.add(ad.mul(ad.sub(1.0, z), h_middle), ad.mul(z, h_original))
    return ad.add(h_final, ad.matmul(p.a_static, xw))


def plain_forward(x, a_gauss, p):
    """Ungated aggregation over the refined topology plus the static path."""
    x = as_tensor(x)
    xw = ad.matmul(x, p.w_msg)
    return ad.add(ad.graph_contract(a_gauss.a, xw), ad.matmul(p.a_static, xw))
