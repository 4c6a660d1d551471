"""Physical skeleton graphs: hop distances and the Gaussian filter matrix."""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DisconnectedGraphError, InvalidEdgeError


@dataclass(frozen=True)
class SkeletonGraph:
    """Connected undirected graph of joints (vertices) and bones (edges)."""

    n_joints: int
    edges: tuple  # of (i, j) with i < j
    name: str = "skeleton"

    def adjacency(self):
        a = np.zeros((self.n_joints, self.n_joints))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self):
        nbr = [[] for _ in range(self.n_joints)]
        for i, j in self.edges:
            nbr[i].append(j)
            nbr[j].append(i)
        return nbr


def build_skeleton(n_joints, edges, name="skeleton"):
    if n_joints < 2:
        raise InvalidEdgeError("need at least 2 joints, got %d" % n_joints)
    seen = set()
    canon = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n_joints and 0 <= j < n_joints):
            raise InvalidEdgeError("edge (%d, %d) out of range [0, %d)" % (i, j, n_joints))
        if i == j:
            raise InvalidEdgeError("self-loop at joint %d" % i)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InvalidEdgeError("duplicate edge (%d, %d)" % (i, j))
        seen.add(key)
        canon.append(key)
    g = SkeletonGraph(n_joints=n_joints, edges=tuple(canon), name=name)
    if np.any(_bfs_levels(g.neighbors(), 0) < 0):
        raise DisconnectedGraphError("graph %r is not connected" % name)
    return g


def _bfs_levels(nbr, source):
    n = len(nbr)
    level = np.full(n, -1, dtype=np.int64)
    level[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for u in frontier:
            for v in nbr[u]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    return level


def shortest_path_distances(g):
    """N x N hop-count matrix via one BFS per joint."""
    nbr = g.neighbors()
    return np.stack([_bfs_levels(nbr, s) for s in range(g.n_joints)])


def gaussian_filter(d):
    """phi[i, j] = exp(-d[i, j]^2); diagonal 1, decays with hop distance."""
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-(d * d))


# -- skeleton definition files ------------------------------------------


def load_skeleton_file(path):
    with open(path) as f:
        return skeleton_from_dict(json.load(f))


def skeleton_from_dict(spec):
    return build_skeleton(int(spec["n_joints"]), spec["edges"], name=spec.get("name", "skeleton"))


def skeleton_to_dict(g):
    return {"name": g.name, "n_joints": g.n_joints, "edges": [list(e) for e in g.edges]}


def save_skeleton_file(g, path):
    with open(path, "w") as f:
        json.dump(skeleton_to_dict(g), f, indent=2)
        f.write("\n")


def load_builtin_skeleton(name):
    """Load one of the shipped definitions: ntu25, nwucla20, toy9."""
    text = resources.files("skelgcn.skeletons").joinpath(name + ".json").read_text()
    return skeleton_from_dict(json.loads(text))
