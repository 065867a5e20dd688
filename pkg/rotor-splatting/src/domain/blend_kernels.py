"""
Compiled per-tile blend loops.

Each call walks a contiguous range of tiles. A tile only writes its own
pixels (forward) or its own (tile, splat) pair rows (backward), so chunks of
tiles can run on several threads at once with results independent of the
chunking. The kernels release the GIL.
"""
import numpy as np
from numba import njit

from .render import MIN_ALPHA, SIGMA_EXTENT

TILE_SIZE = 16
ALPHA_CLAMP = 0.99
TRANSMITTANCE_MIN = 1e-4
MAHALANOBIS_MAX = SIGMA_EXTENT * SIGMA_EXTENT


@njit(nogil=True, cache=True)
def forward_tiles(
    tile_start, tile_end, tiles_x, width, height,
    offsets, ids, mean2, conic, alpha_base, features, background,
    image, transmittance
):
    nf = features.shape[1]
    acc = np.empty(nf)
    for tile in range(tile_start, tile_end):
        start = offsets[tile]
        end = offsets[tile + 1]
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        x0 = tx * TILE_SIZE
        y0 = ty * TILE_SIZE
        x1 = min(x0 + TILE_SIZE, width)
        y1 = min(y0 + TILE_SIZE, height)
        for py in range(y0, y1):
            for px in range(x0, x1):
                t = 1.0
                for f in range(nf):
                    acc[f] = 0.0
                for p in range(start, end):
                    k = ids[p]
                    dx = px - mean2[k, 0]
                    dy = py - mean2[k, 1]
                    q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
                    if q > MAHALANOBIS_MAX:
                        continue
                    a = min(alpha_base[k] * np.exp(-0.5 * q), ALPHA_CLAMP)
                    if a < MIN_ALPHA:
                        continue
                    after = t * (1.0 - a)
                    if after < TRANSMITTANCE_MIN:
                        break
                    w = a * t
                    for f in range(nf):
                        acc[f] += w * features[k, f]
                    t = after
                for f in range(nf):
                    image[py, px, f] = acc[f] + t * background[f]
                transmittance[py, px] = t


@njit(nogil=True, cache=True)
def backward_tiles(
    tile_start, tile_end, tiles_x, width, height,
    offsets, ids, mean2, conic, alpha_base, features, background, grad_image,
    grad_features, grad_alpha_base, grad_conic, grad_mean2
):
    """
    Replay the forward blend of every pixel, then walk it back to front.

    Gradients land in the rows of the (tile, splat) pairs, indexed like ids.
    """
    nf = features.shape[1]
    for tile in range(tile_start, tile_end):
        start = offsets[tile]
        count = offsets[tile + 1] - start
        if count == 0:
            continue
        alphas = np.zeros(count)
        before = np.zeros(count)
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        x0 = tx * TILE_SIZE
        y0 = ty * TILE_SIZE
        x1 = min(x0 + TILE_SIZE, width)
        y1 = min(y0 + TILE_SIZE, height)
        for py in range(y0, y1):
            for px in range(x0, x1):
                t = 1.0
                n = 0
                for j in range(count):
                    k = ids[start + j]
                    alphas[j] = 0.0
                    before[j] = t
                    dx = px - mean2[k, 0]
                    dy = py - mean2[k, 1]
                    q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
                    if q > MAHALANOBIS_MAX:
                        continue
                    a = min(alpha_base[k] * np.exp(-0.5 * q), ALPHA_CLAMP)
                    if a < MIN_ALPHA:
                        continue
                    after = t * (1.0 - a)
                    if after < TRANSMITTANCE_MIN:
                        break
                    alphas[j] = a
                    t = after
                    n = j + 1

                grad_bg = 0.0
                for f in range(nf):
                    grad_bg += grad_image[py, px, f] * background[f]
                # everything blended behind splat j, background included
                suffix = t * grad_bg
                for j in range(n - 1, -1, -1):
                    a = alphas[j]
                    if a == 0.0:
                        continue
                    p = start + j
                    k = ids[p]
                    w = a * before[j]
                    grad_dot_feat = 0.0
                    for f in range(nf):
                        g = grad_image[py, px, f]
                        grad_features[p, f] += w * g
                        grad_dot_feat += g * features[k, f]
                    grad_alpha = before[j] * grad_dot_feat - suffix / (1.0 - a)
                    suffix += w * grad_dot_feat

                    dx = px - mean2[k, 0]
                    dy = py - mean2[k, 1]
                    q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
                    gauss = np.exp(-0.5 * q)
                    if alpha_base[k] * gauss >= ALPHA_CLAMP:
                        continue
                    grad_alpha_base[p] += grad_alpha * gauss
                    grad_q = -0.5 * grad_alpha * a
                    grad_conic[p, 0] += grad_q * dx * dx
                    grad_conic[p, 1] += grad_q * 2.0 * dx * dy
                    grad_conic[p, 2] += grad_q * dy * dy
                    grad_mean2[p, 0] -= grad_q * (2.0 * conic[k, 0] * dx + 2.0 * conic[k, 1] * dy)
                    grad_mean2[p, 1] -= grad_q * (2.0 * conic[k, 1] * dx + 2.0 * conic[k, 2] * dy)
