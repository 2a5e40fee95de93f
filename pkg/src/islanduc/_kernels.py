"""Fixed-step RK4 integrator kernels for the frequency-response models.

The kernels are written as straight float loops so numba can compile them;
when numba is unavailable they run as-is in the interpreter (slower, same
results up to summation order, which these loops keep fixed).

State per simulation: the COI frequency deviation (Hz) plus one governor
lag state per remaining unit (MW).  Governor output is clipped to
[0, headroom] when summed into the power balance; the lag state itself is
left free.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def _accel(df, r, shed, p_loss, demand0, d_pu, f0, two_msys, headroom):
    """d(deviation)/dt in Hz/s for the current state."""
    balance = shed - p_loss - d_pu * (demand0 - shed) * df / f0
    for i in range(r.shape[0]):
        out = r[i]
        if out < 0.0:
            out = 0.0
        elif out > headroom[i]:
            out = headroom[i]
        balance += out
    return f0 * balance / two_msys


@njit(cache=True)
def integrate_fixed_shed(n_steps, dt, f0, two_msys, p_loss, demand0, d_pu,
                         k_mw, t_g, headroom, shed_cum):
    """RK4 trace with a prescribed shed schedule.

    ``shed_cum[k]`` is the cumulative shed (MW) active during step ``k``,
    i.e. over [k*dt, (k+1)*dt).  Returns the deviation samples (Hz),
    length ``n_steps + 1``.
    """
    n = k_mw.shape[0]
    dev = np.empty(n_steps + 1)
    dev[0] = 0.0
    df = 0.0
    r = np.zeros(n)
    k1r = np.empty(n)
    k2r = np.empty(n)
    k3r = np.empty(n)
    k4r = np.empty(n)
    r2 = np.empty(n)
    r3 = np.empty(n)
    r4 = np.empty(n)
    for k in range(n_steps):
        shed = shed_cum[k]
        k1f = _accel(df, r, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        for i in range(n):
            k1r[i] = (-k_mw[i] * df / f0 - r[i]) / t_g[i]
            r2[i] = r[i] + 0.5 * dt * k1r[i]
        df2 = df + 0.5 * dt * k1f
        k2f = _accel(df2, r2, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        for i in range(n):
            k2r[i] = (-k_mw[i] * df2 / f0 - r2[i]) / t_g[i]
            r3[i] = r[i] + 0.5 * dt * k2r[i]
        df3 = df + 0.5 * dt * k2f
        k3f = _accel(df3, r3, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        for i in range(n):
            k3r[i] = (-k_mw[i] * df3 / f0 - r3[i]) / t_g[i]
            r4[i] = r[i] + dt * k3r[i]
        df4 = df + dt * k3f
        k4f = _accel(df4, r4, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        df = df + dt * (k1f + 2.0 * k2f + 2.0 * k3f + k4f) / 6.0
        for i in range(n):
            k4r[i] = (-k_mw[i] * df4 / f0 - r4[i]) / t_g[i]
            r[i] = r[i] + dt * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]) / 6.0
        dev[k + 1] = df
    return dev


@njit(cache=True)
def integrate_relay(n_steps, dt, f0, two_msys, p_loss, demand0, d_pu,
                    k_mw, t_g, headroom,
                    thresholds_hz, delays_s, block_mw, block_frac):
    """RK4 trace with step-wise relay shedding.

    Each relay stage picks up while frequency sits below its threshold,
    resets on recovery, and latches a one-shot block after its delay.
    ``block_mw[s] >= 0`` gives a fixed block; a negative entry means the
    block is ``block_frac[s]`` of the currently connected demand.
    Returns (deviation samples, total shed MW).
    """
    n = k_mw.shape[0]
    n_stages = thresholds_hz.shape[0]
    dev = np.empty(n_steps + 1)
    dev[0] = 0.0
    df = 0.0
    r = np.zeros(n)
    k1r = np.empty(n)
    k2r = np.empty(n)
    k3r = np.empty(n)
    k4r = np.empty(n)
    r2 = np.empty(n)
    r3 = np.empty(n)
    r4 = np.empty(n)
    pickup = np.zeros(n_stages)
    tripped = np.zeros(n_stages, dtype=np.bool_)
    shed = 0.0
    for k in range(n_steps):
        freq = f0 + df
        for s in range(n_stages):
            if tripped[s]:
                continue
            if freq < thresholds_hz[s]:
                pickup[s] += dt
                if pickup[s] >= delays_s[s] - 1e-12:
                    tripped[s] = True
                    if block_mw[s] >= 0.0:
                        block = block_mw[s]
                    else:
                        block = block_frac[s] * (demand0 - shed)
                    if block > demand0 - shed:
                        block = demand0 - shed
                    shed += block
            else:
                pickup[s] = 0.0
        k1f = _accel(df, r, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        for i in range(n):
            k1r[i] = (-k_mw[i] * df / f0 - r[i]) / t_g[i]
            r2[i] = r[i] + 0.5 * dt * k1r[i]
        df2 = df + 0.5 * dt * k1f
        k2f = _accel(df2, r2, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        for i in range(n):
            k2r[i] = (-k_mw[i] * df2 / f0 - r2[i]) / t_g[i]
            r3[i] = r[i] + 0.5 * dt * k2r[i]
        df3 = df + 0.5 * dt * k2f
        k3f = _accel(df3, r3, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        for i in range(n):
            k3r[i] = (-k_mw[i] * df3 / f0 - r3[i]) / t_g[i]
            r4[i] = r[i] + dt * k3r[i]
        df4 = df + dt * k3f
        k4f = _accel(df4, r4, shed, p_loss, demand0, d_pu, f0, two_msys, headroom)
        df = df + dt * (k1f + 2.0 * k2f + 2.0 * k3f + k4f) / 6.0
        for i in range(n):
            k4r[i] = (-k_mw[i] * df4 / f0 - r4[i]) / t_g[i]
            r[i] = r[i] + dt * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]) / 6.0
        dev[k + 1] = df
    return dev, shed
