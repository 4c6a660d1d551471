import numpy as np
import pytest

from skelgcn.skeleton import build_skeleton, load_builtin_skeleton


@pytest.fixture(scope="session")
def toy9():
    return load_builtin_skeleton("toy9")


@pytest.fixture(scope="session")
def ntu25():
    return load_builtin_skeleton("ntu25")


@pytest.fixture(scope="session")
def chain5():
    return build_skeleton(5, [(0, 1), (1, 2), (2, 3), (3, 4)], name="chain5")


def random_connected_graph(rng, n):
    """Random spanning tree plus a few extra edges; always connected."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        u = order[k]
        v = order[rng.integers(0, k)]
        edges.add((min(u, v), max(u, v)))
    for _ in range(rng.integers(0, n)):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return build_skeleton(n, sorted(edges), name="random%d" % n)


def make_ntu_text(frames, body_id="72057594037931101", extra_bodies=()):
    """Serialize (T, N, 3) coordinates into the NTU .skeleton text layout.

    extra_bodies: list of (body_id, frames_array, frame_indices) for
    multi-body fixtures; frame_indices says in which frames the body shows.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t = frames.shape[0]
    per_frame = {f: [] for f in range(t)}
    for f in range(t):
        per_frame[f].append((body_id, frames[f]))
    for bid, arr, idxs in extra_bodies:
        for k, f in enumerate(idxs):
            per_frame[f].append((bid, np.asarray(arr)[k]))
    lines = [str(t)]
    for f in range(t):
        lines.append(str(len(per_frame[f])))
        for bid, joints in per_frame[f]:
            lines.append(bid + " 0 1 1 1 1 0 0.5 0.5 2")
            lines.append(str(joints.shape[0]))
            for x, y, z in joints:
                lines.append(
                    "%r %r %r 100.0 200.0 500.0 600.0 0.1 0.2 0.3 0.9 2"
                    % (float(x), float(y), float(z))
                )
    return "\n".join(lines) + "\n"
