"""Asynchronous event synthesis from high-frame-rate intensity video.

Per-pixel state machine: a reference log-intensity L_ref is kept per
pixel; when a new frame's log intensity reaches L_ref +/- k*T for
integer k >= 1, k events of that polarity are emitted with timestamps
linearly interpolated inside the frame interval, and L_ref moves to the
crossed level (not to the current value - that choice is what makes the
binned-counts-versus-log-difference bound exact). The residual
|L - L_ref| therefore stays below T at every pixel after every
transition, so T times the binned polarity sum tracks the log-intensity
change of the underlying video to within T per pixel, no matter how
coarsely the motion is sub-sampled.

Idealized mode (the default: zero refractory period, no jitter) is what
every invariant test uses. A nonzero refractory period drops events
closer than the dead time to the previous emitted event at that pixel
while the reference keeps tracking, which reproduces the event-loss
behaviour of fast-moving sources on real hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import backend_name, bin_kernel, stream_kernel

DEFAULT_THRESHOLD = 0.1   # natural-log units; typical hardware contrast step
DEFAULT_FLOOR = 1e-12


@dataclass
class EventStream:
    """Events as parallel arrays: time (s), pixel row u, col v, polarity."""

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    shape: tuple

    def __len__(self):
        return self.t.size

    def sorted(self) -> "EventStream":
        """Canonical (time, pixel) ordering; deterministic tie-breaks."""
        order = np.lexsort((self.v, self.u, self.t))
        return EventStream(self.t[order], self.u[order], self.v[order],
                           self.p[order], self.shape)

    @classmethod
    def empty(cls, shape) -> "EventStream":
        return cls(np.empty(0), np.empty(0, np.int32), np.empty(0, np.int32),
                   np.empty(0, np.int8), tuple(shape))


@dataclass
class BinnedFrame:
    """Signed per-pixel polarity sums over one accumulation window."""

    counts: np.ndarray
    t_start: float
    t_end: float
    n_subframes: int


@dataclass
class SimState:
    """Carry-over per-pixel state for chunked simulation."""

    l_ref: np.ndarray
    t_last: np.ndarray

    @classmethod
    def from_log_frame(cls, log_frame, t0=-np.inf) -> "SimState":
        return cls(
            l_ref=np.array(log_frame, dtype=np.float64, copy=True),
            t_last=np.full(log_frame.shape, t0 if np.isfinite(t0) else -1e300),
        )


def log_intensity(frame, floor: float = DEFAULT_FLOOR, beta_pixel: float = 0.0):
    """Elementwise log(max(frame + beta_pixel, floor)).

    The floor keeps dark pixels finite; pick it near the sensor noise
    level when frames carry additive noise, otherwise leave it tiny.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size and frame.min() < 0:
        raise ValueError("intensity frames must be non-negative")
    if floor <= 0:
        raise ValueError("floor must be positive")
    return np.log(np.maximum(frame + beta_pixel, floor))


def log_diff_measurement(i_t, i_prev, beta_pixel: float = 0.0,
                         floor: float = DEFAULT_FLOOR):
    """Idealized measurement: log(I_t + beta) - log(I_prev + beta)."""
    i_t = np.asarray(i_t)
    i_prev = np.asarray(i_prev)
    if i_t.shape != i_prev.shape:
        raise ValueError(f"shape mismatch: {i_t.shape} vs {i_prev.shape}")
    return log_intensity(i_t, floor, beta_pixel) - log_intensity(i_prev, floor, beta_pixel)


def _check_times(timestamps, n_frames):
    times = np.asarray(timestamps, dtype=np.float64)
    if times.shape != (n_frames,):
        raise ValueError("need one timestamp per frame")
    if np.any(np.diff(times) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    return times


def _prepare_log(frames, floor, beta_pixel, rng, log_jitter_sigma):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError("need a (frames, rows, cols) stack with >= 2 frames")
    logl = log_intensity(frames, floor, beta_pixel)
    if log_jitter_sigma > 0:
        if rng is None:
            raise ValueError("log jitter requires an rng")
        logl = logl + rng.normal(0.0, log_jitter_sigma, size=logl.shape)
    return np.ascontiguousarray(logl)


def simulate_events(frames, timestamps, threshold: float = DEFAULT_THRESHOLD,
                    refractory: float = 0.0, *, beta_pixel: float = 0.0,
                    floor: float = DEFAULT_FLOOR, rng=None,
                    log_jitter_sigma: float = 0.0,
                    time_jitter_sigma: float = 0.0,
                    state: SimState | None = None) -> EventStream:
    """Convert an intensity stack into a canonically sorted event stream.

    The first frame initializes the per-pixel reference (no events) when
    no carry-over state is given.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    logl = _prepare_log(frames, floor, beta_pixel, rng, log_jitter_sigma)
    times = _check_times(timestamps, logl.shape[0])
    if state is None:
        state = SimState.from_log_frame(logl[0])
        logl, times = logl, times
    t, u, v, p = stream_kernel(logl, times, float(threshold), float(refractory),
                               state.l_ref, state.t_last)
    if time_jitter_sigma > 0:
        if rng is None:
            raise ValueError("time jitter requires an rng")
        t = t + rng.normal(0.0, time_jitter_sigma, size=t.shape)
        t = np.clip(t, times[0], times[-1])
    return EventStream(t, u, v, p, logl.shape[1:]).sorted()


def simulate_binned(frames, timestamps, frames_per_bin: int,
                    threshold: float = DEFAULT_THRESHOLD,
                    refractory: float = 0.0, *, beta_pixel: float = 0.0,
                    floor: float = DEFAULT_FLOOR, rng=None,
                    log_jitter_sigma: float = 0.0,
                    state: SimState | None = None):
    """Stream frames straight into binned polarity counts.

    Avoids materializing the event list, which matters for long noisy
    videos. The transition count (frames - 1) must be divisible by
    frames_per_bin. Returns (list of BinnedFrame, carry-over SimState).
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    logl = _prepare_log(frames, floor, beta_pixel, rng, log_jitter_sigma)
    times = _check_times(timestamps, logl.shape[0])
    n_tr = logl.shape[0] - 1
    if n_tr % frames_per_bin != 0:
        raise ValueError(
            f"{n_tr} transitions do not divide into bins of {frames_per_bin}"
        )
    if state is None:
        state = SimState.from_log_frame(logl[0])
    counts = bin_kernel(logl, times, float(threshold), float(refractory),
                        state.l_ref, state.t_last, int(frames_per_bin))
    bins = []
    for b in range(counts.shape[0]):
        i0, i1 = b * frames_per_bin, (b + 1) * frames_per_bin
        bins.append(BinnedFrame(counts=counts[b], t_start=float(times[i0]),
                                t_end=float(times[i1]),
                                n_subframes=frames_per_bin))
    return bins, state


def bin_events(stream: EventStream, t_start: float, t_end: float) -> BinnedFrame:
    """Sum polarities per pixel over [t_start, t_end)."""
    if not t_start < t_end:
        raise ValueError("need t_start < t_end")
    sel = (stream.t >= t_start) & (stream.t < t_end)
    counts = np.zeros(stream.shape, dtype=np.int32)
    np.add.at(counts, (stream.u[sel], stream.v[sel]), stream.p[sel].astype(np.int32))
    return BinnedFrame(counts=counts, t_start=float(t_start), t_end=float(t_end),
                       n_subframes=0)


def write_events_csv(path, stream: EventStream) -> None:
    with open(path, "w") as fh:
        fh.write("t,u,v,p\n")
        for t, u, v, p in zip(stream.t, stream.u, stream.v, stream.p):
            fh.write(f"{float(t)!r},{int(u)},{int(v)},{int(p):+d}\n")


def read_events_csv(path, shape) -> EventStream:
    t, u, v, p = [], [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "t,u,v,p":
            raise ValueError(f"unexpected event CSV header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            ts, us, vs, ps = line.split(",")
            t.append(float(ts))
            u.append(int(us))
            v.append(int(vs))
            p.append(int(ps))
    return EventStream(
        t=np.array(t, dtype=np.float64),
        u=np.array(u, dtype=np.int32),
        v=np.array(v, dtype=np.int32),
        p=np.array(p, dtype=np.int8),
        shape=tuple(shape),
    )


def simulator_backend() -> str:
    """Which kernel implementation is active ('compiled' or 'python')."""
    return backend_name()
