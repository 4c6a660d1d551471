"""Dynamic topology refinement driven by a hop-distance Gaussian filter.

Pipeline: preliminary per-channel joint correlations from feature
differences, an auxiliary correlation graph smoothed row-wise by the
filter's column kernels into correction coefficients, max-abs row
normalization, and a multiplicative refinement with channel expansion.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ShapeMismatchError
from .initializers import xavier_uniform, zeros

NORM_EPS = 1e-8  # rows with max-abs below this are zeroed instead of divided


@dataclass
class TopologyGraph:
    """Per-channel joint-to-joint correlation stack (..., C, N, N)."""

    a: Tensor
    kind: str  # preliminary | auxiliary | coefficient | normalized_coefficient | gaussian

    @property
    def n_channels(self):
        return self.a.shape[-3]

    @property
    def n_joints(self):
        return self.a.shape[-1]


@dataclass
class CorrelationBranchParams:
    w_src: Tensor  # C x C_red
    w_dst: Tensor  # C x C_red


@dataclass
class RefineParams:
    w_expand: Tensor  # C_red x C_out


@dataclass
class GaussianTopologyParams:
    prelim: CorrelationBranchParams
    aux: CorrelationBranchParams
    refine: RefineParams


def reduced_channels(c, reduction=8, c_min=8):
    """Correlation-branch width: max(ceil(C / reduction), c_min)."""
    return max(math.ceil(c / reduction), c_min)


def init_correlation_branch(rng, c_in, c_red):
    return CorrelationBranchParams(
        w_src=xavier_uniform(rng, (c_in, c_red)),
        w_dst=xavier_uniform(rng, (c_in, c_red)),
    )


def init_gaussian_topology(rng, c_in, c_out, c_red=None, with_aux=True, zero_init_expand=True):
    """Parameters for the full pipeline; aux branch omitted in baseline mode.

    zero_init_expand starts the expansion at zero so the refined topology
    contributes nothing initially and the static branch dominates.
    """
    if c_red is None:
        c_red = reduced_channels(c_in)
    expand = zeros((c_red, c_out)) if zero_init_expand else xavier_uniform(rng, (c_red, c_out))
    return GaussianTopologyParams(
        prelim=init_correlation_branch(rng, c_in, c_red),
        aux=init_correlation_branch(rng, c_in, c_red) if with_aux else None,
        refine=RefineParams(w_expand=expand),
    )


def pairwise_correlation(x, p, kind="preliminary"):
    """tanh of frame-averaged feature differences: out (..., C_red, N, N).

    out[..., c, i, j] = tanh(mean_t((x_i . w_src)[t, c] - (x_j . w_dst)[t, c]))
    """
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeMismatchError("expected (T, N, C) or (B, T, N, C), got %s" % (x.shape,))
    n, c_red = x.shape[-2], p.w_src.shape[1]
    m_src = ad.reduce_mean(ad.matmul(x, p.w_src), axis=x.ndim - 3)  # (..., N, C_red)
    m_dst = ad.reduce_mean(ad.matmul(x, p.w_dst), axis=x.ndim - 3)
    lead = m_src.shape[:-2]
    diff = ad.sub(m_src.reshape(lead + (n, 1, c_red)), m_dst.reshape(lead + (1, n, c_red)))
    a = ad.tanh(diff)  # (..., N, N, C_red)
    k = a.ndim
    perm = tuple(range(k - 3)) + (k - 1, k - 3, k - 2)
    return TopologyGraph(a=a.transpose(perm), kind=kind)


def correction_coefficients(a_aux, phi):
    """Row-wise smoothing by the filter's column kernels.

    coe[..., c, i, j] = sum_k phi[k, j] * a_aux[..., c, i, k]; with phi
    symmetric this is the per-channel product a_aux . phi.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (a_aux.n_joints, a_aux.n_joints):
        raise ShapeMismatchError(
            "filter %s does not match topology with N=%d" % (phi.shape, a_aux.n_joints)
        )
    return TopologyGraph(a=ad.matmul(a_aux.a, Tensor(phi)), kind="coefficient")


def normalize_coefficients(coe, eps=NORM_EPS):
    """Divide each (channel, row) by its max-abs entry; tiny rows become 0."""
    m = ad.reduce_max(ad.absolute(coe.a), axis=-1, keepdims=True)
    mask = (m.data >= eps).astype(np.float64)
    scaled = ad.mul(coe.a, ad.reciprocal(ad.clip_min(m, eps)))
    return TopologyGraph(a=ad.mul(scaled, Tensor(mask)), kind="normalized_coefficient")


def refine_topology(a_prelim, coe_norm, p):
    """Elementwise correction then channel expansion to the output width."""
    if a_prelim.a.shape != coe_norm.a.shape:
        raise ShapeMismatchError(
            "prelim %s vs coefficients %s" % (a_prelim.a.shape, coe_norm.a.shape)
        )
    prod = ad.mul(a_prelim.a, coe_norm.a)  # (..., C_red, N, N)
    k = prod.ndim
    to_last = tuple(range(k - 3)) + (k - 2, k - 1, k - 3)
    expanded = ad.matmul(prod.transpose(to_last), p.w_expand)  # (..., N, N, C_out)
    back = tuple(range(k - 3)) + (k - 1, k - 3, k - 2)
    return TopologyGraph(a=expanded.transpose(back), kind="gaussian")


def gaussian_topology_forward(x, phi, params):
    """Full refinement pipeline; differentiable end to end."""
    a_prelim = pairwise_correlation(x, params.prelim, kind="preliminary")
    a_aux = pairwise_correlation(x, params.aux, kind="auxiliary")
    coe = correction_coefficients(a_aux, phi)
    return refine_topology(a_prelim, normalize_coefficients(coe), params.refine)


def baseline_topology_forward(x, params):
    """Ablation arm: correction coefficients frozen to all-ones."""
    a_prelim = pairwise_correlation(x, params.prelim, kind="preliminary")
    ones = TopologyGraph(a=Tensor(np.ones(a_prelim.a.shape)), kind="normalized_coefficient")
    return refine_topology(a_prelim, ones, params.refine)


def topology_to_csv(a, path):
    """Write an (C, N, N) correlation stack as per-channel CSV blocks."""
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for c in range(a.shape[0]):
            writer.writerow(["channel", c])
            for row in a[c]:
                writer.writerow([repr(float(v)) for v in row])
