"""Hot loops: tabular Q-routing episodes and deterministic schedule replay.

Each kernel is written once as plain Python over numpy arrays and compiled
with numba when available (see ``constel._accel``). Schedule replay also has
a vectorised numpy implementation used when numba is disabled; both produce
bit-identical totals because per-element arithmetic is evaluated in the same
order and per-slot sums are accumulated sequentially.
"""
import numpy as np

from constel._accel import USE_NUMBA, jit

# Layout of the rate vector consumed by the replay kernels.
RATE_NAMES = (
    "dB_bg", "dB_dl", "dB_sun",
    "dM_tm", "dM_dl", "dM_aq",
    "dR_aq", "dR_dl",
    "P_bat", "P_mem", "P_simGS", "P_simAT", "P_invAct",
)

NOP, ACQ, DL, ACQ_DL = 0, 1, 2, 3


@jit
def qrouting_episodes(q, nbr_ptr, nbr_idx, prop, qlo, qhi, src, dst,
                      eps, decay, alpha, gamma, loop_penalty, bonus,
                      u, max_episodes, stats):
    """Run up to ``max_episodes`` training episodes in place on ``q``.

    Every step consumes exactly three uniforms from ``u`` (explore test,
    exploration pick, queue sample). An episode is only started when ``u``
    holds enough draws for a worst-case episode (one step per node), so the
    caller can refill the buffer between calls without splitting an episode.

    Returns (episodes_run, epsilon_after).
    """
    n = q.shape[0]
    visited = np.zeros(n, dtype=np.bool_)
    pos = 0
    ep = 0
    while ep < max_episodes and pos + 3 * n <= u.shape[0]:
        visited[:] = False
        state = src
        steps = 0
        total = 0.0
        delivered = 0
        while True:
            visited[state] = True
            lo = nbr_ptr[state]
            hi = nbr_ptr[state + 1]
            k = hi - lo
            if k == 0:
                break
            if u[pos] < eps:
                j = lo + int(u[pos + 1] * k)
                if j >= hi:
                    j = hi - 1
            else:
                j = lo
                best = q[state, nbr_idx[lo]]
                for jj in range(lo + 1, hi):
                    val = q[state, nbr_idx[jj]]
                    if val > best:
                        best = val
                        j = jj
            a = nbr_idx[j]
            lq = qlo[j] + u[pos + 2] * (qhi[j] - qlo[j])
            pos += 3
            target = -bonus if a == dst else 0.0
            r = -(prop[j] + lq + target)
            nlo = nbr_ptr[a]
            nhi = nbr_ptr[a + 1]
            m = 0.0
            if nhi > nlo:
                m = q[a, nbr_idx[nlo]]
                for jj in range(nlo + 1, nhi):
                    val = q[a, nbr_idx[jj]]
                    if val > m:
                        m = val
            q[state, a] = (1.0 - alpha) * q[state, a] + alpha * (r + gamma * m)
            total += r
            steps += 1
            if a == dst:
                delivered = 1
                break
            if visited[a]:
                r2 = r - loop_penalty
                q[state, a] = (1.0 - alpha) * q[state, a] + alpha * (r2 + gamma * m)
                break
            state = a
        stats[ep, 0] = steps
        stats[ep, 1] = total
        stats[ep, 2] = delivered
        eps = eps * decay
        ep += 1
    return ep, eps


@jit
def replay_schedule_kernel(actions, tau, at, gs, sun, init_bat, init_mem, rates, n_at, n_gs):
    """Total reward of a fixed [sat][slot] action table, stochastic rates off."""
    n, T = actions.shape
    dB_bg, dB_dl, dB_sun = rates[0], rates[1], rates[2]
    dM_tm, dM_dl, dM_aq = rates[3], rates[4], rates[5]
    dR_aq, dR_dl = rates[6], rates[7]
    P_bat, P_mem, P_gs, P_at, P_inv = rates[8], rates[9], rates[10], rates[11], rates[12]
    bat = init_bat.copy()
    mem = init_mem.copy()
    # slot stamp per asset id; an asset is claimed in slot t iff stamp == t
    gs_stamp = np.full(n_gs + 1, -1, dtype=np.int64)
    at_stamp = np.full(n_at + 1, -1, dtype=np.int64)
    total = 0.0
    for t in range(T):
        tt = tau[t]
        step_total = 0.0
        for i in range(n):
            a = actions[i, t]
            want_q = a == ACQ or a == ACQ_DL
            want_d = a == DL or a == ACQ_DL
            oat = at[i, t]
            ogs = gs[i, t]
            s = float(sun[i, t])
            if (want_q and oat == 0) or (want_d and ogs == 0):
                pre_b = bat[i] + tt * (dB_bg + 0.0 * dB_dl + s * dB_sun)
                pre_m = mem[i] + tt * (dM_tm + 0.0 * dM_dl + 0.0 * dM_aq)
                bat[i] = min(max(pre_b, 0.0), 1.0)
                mem[i] = min(max(pre_m, 0.0), 1.0)
                step_total += -P_inv
                continue
            chi_dl = 0.0
            chi_aq = 0.0
            c_gs = False
            c_at = False
            if want_d:
                if gs_stamp[ogs] == t:
                    c_gs = True
                else:
                    gs_stamp[ogs] = t
                    chi_dl = 1.0
            if want_q:
                if at_stamp[oat] == t:
                    c_at = True
                else:
                    at_stamp[oat] = t
                    chi_aq = 1.0
            pre_b = bat[i] + tt * (dB_bg + chi_dl * dB_dl + s * dB_sun)
            pre_m = mem[i] + tt * (dM_tm + chi_dl * dM_dl + chi_aq * dM_aq)
            r = tt * chi_aq * dR_aq + tt * chi_dl * dR_dl
            if pre_b < 0.0:
                r -= P_bat
            if pre_m > 1.0:
                r -= P_mem
            if c_gs:
                r -= P_gs
            if c_at:
                r -= P_at
            bat[i] = min(max(pre_b, 0.0), 1.0)
            mem[i] = min(max(pre_m, 0.0), 1.0)
            step_total += r
        total += step_total
    return total


def _first_claims(ids, claim):
    """Winners among ``claim`` cells of an (n, T) table: first claimant per (slot, id) by ascending sat."""
    n, T = ids.shape
    win = np.zeros(n * T, dtype=bool)
    # slot-major flattening puts lower sat indices first within each slot
    flat_claim = claim.T.ravel()
    idx = np.flatnonzero(flat_claim)
    if idx.size:
        keys = (idx // n) * (int(ids.max()) + 1) + ids.T.ravel()[idx]
        _, first = np.unique(keys, return_index=True)
        win[idx[first]] = True
    return win.reshape(T, n).T


def replay_schedule_numpy(actions, tau, at, gs, sun, init_bat, init_mem, rates, n_at, n_gs):
    """Array twin of :func:`replay_schedule_kernel`; only the clamped recurrence loops over slots."""
    n, T = actions.shape
    dB_bg, dB_dl, dB_sun, dM_tm, dM_dl, dM_aq, dR_aq, dR_dl, P_bat, P_mem, P_gs, P_at, P_inv = (
        float(x) for x in rates
    )
    tt = np.asarray(tau, dtype=np.float64)[None, :]
    s = sun.astype(np.float64)
    want_q = (actions == ACQ) | (actions == ACQ_DL)
    want_d = (actions == DL) | (actions == ACQ_DL)
    invalid = (want_q & (at == 0)) | (want_d & (gs == 0))
    claim_d = want_d & ~invalid
    claim_q = want_q & ~invalid
    win_d = _first_claims(gs, claim_d)
    win_q = _first_claims(at, claim_q)
    chi_dl = win_d.astype(np.float64)
    chi_aq = win_q.astype(np.float64)
    inc_b = tt * (dB_bg + chi_dl * dB_dl + s * dB_sun)
    inc_m = tt * (dM_tm + chi_dl * dM_dl + chi_aq * dM_aq)
    pre_b = np.empty((n, T))
    pre_m = np.empty((n, T))
    bat = np.array(init_bat, dtype=np.float64)
    mem = np.array(init_mem, dtype=np.float64)
    for t in range(T):
        pre_b[:, t] = bat + inc_b[:, t]
        pre_m[:, t] = mem + inc_m[:, t]
        bat = np.minimum(np.maximum(pre_b[:, t], 0.0), 1.0)
        mem = np.minimum(np.maximum(pre_m[:, t], 0.0), 1.0)
    r = tt * chi_aq * dR_aq + tt * chi_dl * dR_dl
    r = r - np.where(pre_b < 0.0, P_bat, 0.0)
    r = r - np.where(pre_m > 1.0, P_mem, 0.0)
    r = r - np.where(claim_d & ~win_d, P_gs, 0.0)
    r = r - np.where(claim_q & ~win_q, P_at, 0.0)
    r = np.where(invalid, -P_inv, r)
    # same accumulation order as the kernel keeps the totals bit-identical
    total = 0.0
    for col in r.T.tolist():
        step_total = 0.0
        for x in col:
            step_total += x
        total += step_total
    return total


replay_schedule = replay_schedule_kernel if USE_NUMBA else replay_schedule_numpy
