"""Independent brute-force references used by the tests.

Everything here is written with explicit adjacency matrices and Python
loops, on purpose: these functions must not share code (or mistakes) with
the package implementation they check.
"""

import numpy as np


def dense_propagate(features, motion, known, weights_f, weights_d, adjacency=None):
    """Reference message passing with a dense adjacency matrix.

    features (N, F), motion (N, 2), known (N,) bool. weights_f/weights_d are
    lists (one per iteration) of matrices with shapes (F, F+2) and (2, F+2).
    adjacency defaults to the complete graph without self-loops. Returns
    (features, motion) after all iterations.
    """
    f = np.array(features, dtype=np.float64, copy=True)
    d = np.array(motion, dtype=np.float64, copy=True)
    n = f.shape[0]
    if adjacency is None:
        adjacency = np.ones((n, n)) - np.eye(n)
    deg = adjacency.sum(axis=1)

    for wf, wd in zip(weights_f, weights_d):
        f_new = f.copy()
        d_new = d.copy()
        for i in range(n):
            sum_f = np.zeros(f.shape[1])
            sum_d = np.zeros(2)
            for j in range(n):
                if adjacency[i, j] == 0:
                    continue
                norm = 1.0 / np.sqrt(deg[i] + deg[j])
                state_j = np.concatenate([f[j], d[j]])
                sum_f += norm * (wf @ state_j)
                sum_d += norm * (wd @ state_j)
            f_new[i] = f[i] + sum_f
            if not known[i]:
                d_new[i] = d[i] + sum_d
        f, d = f_new, d_new
    return f, d


def dense_vae_decode(features, user_motion, known, latents,
                     fc_weight, fc_bias, weights_f, weights_d):
    """Reference decoder: initial motions from FC(z) or the user value."""
    n = features.shape[0]
    d0 = np.zeros((n, 2))
    z_index = 0
    for i in range(n):
        if known[i]:
            d0[i] = user_motion[i]
        else:
            d0[i] = fc_weight @ latents[z_index] + fc_bias
            z_index += 1
    _, motion = dense_propagate(features, d0, known, weights_f, weights_d)
    return motion


def brute_force_barycenter(inst_map, instance_id):
    """Barycenter by direct pixel enumeration."""
    total_x = 0.0
    total_y = 0.0
    count = 0
    for y in range(inst_map.shape[0]):
        for x in range(inst_map.shape[1]):
            if inst_map[y, x] == instance_id:
                total_x += x
                total_y += y
                count += 1
    assert count > 0
    return np.array([total_x / count, total_y / count])


def exhaustive_flow_consistency(fwd, bwd, occ_fwd, occ_bwd):
    """Max |F_fwd(p) + F_bwd(p + F_fwd(p))| over doubly-visible pixels.

    Uses bilinear interpolation of the backward flow at the (possibly
    fractional) target location, scanning every pixel.
    """
    h, w = occ_fwd.shape
    worst = 0.0
    for y in range(h):
        for x in range(w):
            if occ_fwd[y, x] == 0:
                continue
            tx = x + fwd[y, x, 0]
            ty = y + fwd[y, x, 1]
            x0, y0 = int(np.floor(tx)), int(np.floor(ty))
            fx, fy = tx - x0, ty - y0
            acc = np.zeros(2)
            for (ix, wx) in ((x0, 1 - fx), (x0 + 1, fx)):
                for (iy, wy) in ((y0, 1 - fy), (y0 + 1, fy)):
                    cx = min(max(ix, 0), w - 1)
                    cy = min(max(iy, 0), h - 1)
                    acc += wx * wy * bwd[cy, cx]
            worst = max(worst, np.abs(fwd[y, x] + acc).max())
    return worst
