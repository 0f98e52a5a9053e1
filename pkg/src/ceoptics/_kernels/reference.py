"""Pure-numpy event kernels, semantically identical to the compiled ones.

Vectorized over pixels per frame transition; only the refractory filter
falls back to a per-active-pixel loop (dropping an event changes the
reference time for the next one, which is inherently sequential).

Both backends must keep the floating-point expressions literally
identical - the test suite compares their outputs bit for bit.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-9  # tolerance on d/T so exact threshold crossings still fire


def _event_counts(cur, l_ref, thresh):
    d = cur - l_ref
    mag = np.floor(np.abs(d) / thresh + EPS)
    return np.where(d >= 0, mag, -mag).astype(np.int64)


def stream_kernel(logl, times, thresh, refractory, l_ref, t_last):
    """Emit (t, u, v, p) arrays for every transition in the stack.

    l_ref and t_last are per-pixel state updated in place.
    """
    n_frames, n_rows, n_cols = logl.shape
    out_t, out_u, out_v, out_p = [], [], [], []
    for k in range(n_frames - 1):
        prev = logl[k]
        cur = logl[k + 1]
        n = _event_counts(cur, l_ref, thresh)
        active = np.flatnonzero(n.ravel())
        if active.size:
            counts = np.abs(n.ravel()[active])
            signs = np.sign(n.ravel()[active]).astype(np.int8)
            total = int(counts.sum())
            pix = np.repeat(active, counts)
            offsets = np.cumsum(counts) - counts
            kidx = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts) + 1
            sgn = np.repeat(signs, counts)
            levels = l_ref.ravel()[pix] + kidx * thresh * sgn
            p0 = prev.ravel()[pix]
            p1 = cur.ravel()[pix]
            tt = times[k] + (times[k + 1] - times[k]) * (levels - p0) / (p1 - p0)
            if refractory > 0.0:
                keep = np.ones(total, dtype=bool)
                tl = t_last.ravel()
                start = 0
                for pi, c in zip(active, counts):
                    last = tl[pi]
                    for e in range(start, start + int(c)):
                        if tt[e] - last >= refractory:
                            last = tt[e]
                        else:
                            keep[e] = False
                    tl[pi] = last
                    start += int(c)
                pix, tt, sgn = pix[keep], tt[keep], sgn[keep]
            out_t.append(tt)
            out_u.append((pix // n_cols).astype(np.int32))
            out_v.append((pix % n_cols).astype(np.int32))
            out_p.append(sgn)
        l_ref += n * thresh
    if not out_t:
        return (np.empty(0), np.empty(0, np.int32), np.empty(0, np.int32),
                np.empty(0, np.int8))
    return (np.concatenate(out_t), np.concatenate(out_u),
            np.concatenate(out_v), np.concatenate(out_p))


def bin_kernel(logl, times, thresh, refractory, l_ref, t_last, bin_size):
    """Accumulate signed event counts per bin without storing events.

    Trailing transitions that do not fill a complete bin are ignored
    (the public wrapper enforces exact divisibility).
    """
    n_bins = (logl.shape[0] - 1) // bin_size
    n_tr = n_bins * bin_size
    counts = np.zeros((n_bins,) + logl.shape[1:], dtype=np.int32)
    if refractory <= 0.0:
        for k in range(n_tr):
            n = _event_counts(logl[k + 1], l_ref, thresh)
            counts[k // bin_size] += n.astype(np.int32)
            l_ref += n * thresh
        return counts
    # dead-time filtering needs event timestamps; reuse the stream path
    for k in range(n_tr):
        t, u, v, p = stream_kernel(logl[k : k + 2], times[k : k + 2], thresh,
                                   refractory, l_ref, t_last)
        np.add.at(counts[k // bin_size], (u, v), p.astype(np.int32))
    return counts
