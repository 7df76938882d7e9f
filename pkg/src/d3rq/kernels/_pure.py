"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``D3RQ_PURE=1`` is set.
Signatures match ``_ext.pyx``; results agree to rounding.
"""

import numpy as np


def project(values, probs, v_min, delta, n_atoms):
    """Split each (value, prob) pair onto its two bracketing atoms.

    ``values`` and ``probs`` are (B, K) float64; returns (B, n_atoms).
    Values are assumed to be inside [v_min, v_min + (n_atoms-1)*delta].
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    batch = values.shape[0]
    b = (values - v_min) / delta
    np.clip(b, 0.0, n_atoms - 1, out=b)
    lower = np.floor(b)
    upper = np.ceil(b)
    w_upper = b - lower
    w_lower = 1.0 - w_upper
    # exact hit: l == u, b - l == 0 so all mass lands on the lower atom
    rows = np.arange(batch)[:, None] * n_atoms
    out = np.zeros(batch * n_atoms)
    out += np.bincount((rows + lower.astype(np.int64)).ravel(),
                       weights=(probs * w_lower).ravel(), minlength=batch * n_atoms)
    out += np.bincount((rows + upper.astype(np.int64)).ravel(),
                       weights=(probs * w_upper).ravel(), minlength=batch * n_atoms)
    return out.reshape(batch, n_atoms)


def shift_crop(padded, shifts, height, width):
    """Bilinear crop of a padded batch at per-image continuous offsets.

    ``padded`` is (B, C, Hp, Wp); ``shifts`` is (B, 2) holding (dx, dy) in
    [-pad, pad]. Output pixel (i, j) reads padded[i + pad + dy, j + pad + dx].
    """
    batch, channels, hp, wp = padded.shape
    pad_y = (hp - height) / 2.0
    pad_x = (wp - width) / 2.0
    out = np.empty((batch, channels, height, width), dtype=padded.dtype)
    for k in range(batch):
        oy = pad_y + shifts[k, 1]
        ox = pad_x + shifts[k, 0]
        y0 = int(np.floor(oy))
        x0 = int(np.floor(ox))
        fy = oy - y0
        fx = ox - x0
        # at the far edge the fractional part is 0, so reuse the same row/col
        y1 = y0 + 1 if y0 + height < hp else y0
        x1 = x0 + 1 if x0 + width < wp else x0
        img = padded[k]
        # rows y0..y0+H-1 and y1..y1+H-1 stay in range because |shift| <= pad
        top_l = img[:, y0:y0 + height, x0:x0 + width]
        top_r = img[:, y0:y0 + height, x1:x1 + width]
        bot_l = img[:, y1:y1 + height, x0:x0 + width]
        bot_r = img[:, y1:y1 + height, x1:x1 + width]
        out[k] = ((1.0 - fy) * ((1.0 - fx) * top_l + fx * top_r)
                  + fy * ((1.0 - fx) * bot_l + fx * bot_r))
    return out


def nstep_walk(next_ptr, reward, terminal, truncated, starts, n, gamma):
    """Follow per-episode links from each start slot for up to ``n`` steps.

    Returns (g, m, last, bootstrap): discounted reward sum, steps taken,
    slot of the final transition, and whether to bootstrap from it.
    """
    count = len(starts)
    g = np.zeros(count)
    m = np.zeros(count, dtype=np.int64)
    last = np.empty(count, dtype=np.int64)
    bootstrap = np.ones(count, dtype=np.bool_)
    for k in range(count):
        slot = int(starts[k])
        acc = 0.0
        disc = 1.0
        steps = 0
        while True:
            acc += disc * reward[slot]
            disc *= gamma
            steps += 1
            if terminal[slot]:
                bootstrap[k] = False
                break
            if truncated[slot] or steps == n or next_ptr[slot] < 0:
                break
            slot = int(next_ptr[slot])
        g[k] = acc
        m[k] = steps
        last[k] = slot
    return g, m, last, bootstrap
