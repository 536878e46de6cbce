"""Compiled sample loop for the two-loop simulation.

Everything here works on plain arrays; :mod:`lockloop.cascade` builds the
coefficients and interprets the status codes.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_INNER_UNSTABLE = 1
STATUS_OUTER_UNSTABLE = 2


@njit(cache=True, inline="always")
def _sos_step(sos, zi, x):
    # transposed direct form II, one sample through every section
    for i in range(sos.shape[0]):
        y = sos[i, 0] * x + zi[i, 0]
        zi[i, 0] = sos[i, 1] * x - sos[i, 4] * y + zi[i, 1]
        zi[i, 1] = sos[i, 2] * x - sos[i, 5] * y
        x = y
    return x


@njit(cache=True, inline="always")
def _pid_step(x, pd_sos, pd_zi, ki_half, istate, lp_sos, lp_zi, sat):
    """One PID sample.  istate = [integrator, previous input, saturated flag].

    Integration is frozen while the output is clamped and the error would
    push it further into the limit (conditional anti-windup).
    """
    trial = istate[0] + ki_half * (x + istate[1])
    y = _sos_step(pd_sos, pd_zi, x) + trial
    y = _sos_step(lp_sos, lp_zi, y)
    clamped = 0.0
    if y > sat:
        clamped = 1.0
        if x > 0:
            trial = istate[0]
        y = sat
    elif y < -sat:
        clamped = 1.0
        if x < 0:
            trial = istate[0]
        y = -sat
    istate[0] = trial
    istate[1] = x
    new_event = clamped > 0 and istate[2] == 0
    istate[2] = clamped
    return y, new_event


@njit(cache=True)
def run_loops(L, C, n1, n2,
              inner_on, slope1, cav_sos, pid1_pd, pid1_ki_half, pid1_lp, pid1_sat, act_sos,
              aux_on, aux_pd, aux_ki_half, aux_lp, aux_sat, aux_act_sos, delay,
              outer_on, outer_target, block, slope2, lockin_sos, pid2_pd, pid2_ki_half, pid2_lp,
              pid2_sat, out_sos, thr_inner, thr_outer,
              abs_out, rel_out, cav_out, rec_fast, rec_aux, rec_outer):
    """Step both loops over the whole record.

    ``outer_target`` 0 moves the cavity mode, 1 moves the laser.  Returns
    (status, failing block index, saturation events).
    """
    n = L.size
    cav_zi = np.zeros((cav_sos.shape[0], 2))
    p1_pd_zi = np.zeros((pid1_pd.shape[0], 2))
    p1_lp_zi = np.zeros((pid1_lp.shape[0], 2))
    act_zi = np.zeros((act_sos.shape[0], 2))
    aux_pd_zi = np.zeros((aux_pd.shape[0], 2))
    aux_lp_zi = np.zeros((aux_lp.shape[0], 2))
    aux_act_zi = np.zeros((aux_act_sos.shape[0], 2))
    li_zi = np.zeros((lockin_sos.shape[0], 2))
    p2_pd_zi = np.zeros((pid2_pd.shape[0], 2))
    p2_lp_zi = np.zeros((pid2_lp.shape[0], 2))
    out_zi = np.zeros((out_sos.shape[0], 2))
    i1 = np.zeros(3)
    ia = np.zeros(3)
    i2 = np.zeros(3)
    dbuf = np.zeros(max(delay, 1))
    dpos = 0

    u_fast = 0.0
    u_aux = 0.0
    hold = 0.0
    acc = 0.0
    acc_fast = 0.0
    acc_aux = 0.0
    ss_rel = 0.0
    ss_abs = 0.0
    events = 0
    j = 0
    for k in range(n):
        las = L[k] - u_fast - u_aux
        cav = C[k]
        if outer_target == 0:
            cav -= hold
        else:
            las -= hold
        rel = las - cav
        abs_out[k] = las
        rel_out[k] = rel
        cav_out[k] = cav
        ss_rel += rel * rel
        ss_abs += las * las
        acc += las
        acc_fast += u_fast
        acc_aux += u_aux

        if inner_on:
            e = slope1 * _sos_step(cav_sos, cav_zi, rel) + n1[k]
            if delay > 0:
                ed = dbuf[dpos]
                dbuf[dpos] = e
                dpos += 1
                if dpos == delay:
                    dpos = 0
            else:
                ed = e
            y, ev = _pid_step(ed, pid1_pd, p1_pd_zi, pid1_ki_half, i1, pid1_lp, p1_lp_zi, pid1_sat)
            if ev:
                events += 1
            u_fast = _sos_step(act_sos, act_zi, y)
            if aux_on:
                ya, ev = _pid_step(ed, aux_pd, aux_pd_zi, aux_ki_half, ia, aux_lp, aux_lp_zi, aux_sat)
                if ev:
                    events += 1
                u_aux = _sos_step(aux_act_sos, aux_act_zi, ya)

        if (k + 1) % block == 0:
            if not (ss_rel == ss_rel) or not (ss_abs == ss_abs):
                return (STATUS_INNER_UNSTABLE if inner_on else STATUS_OUTER_UNSTABLE), j, events
            if inner_on and np.sqrt(ss_rel / block) > thr_inner:
                return STATUS_INNER_UNSTABLE, j, events
            if outer_on and np.sqrt(ss_abs / block) > thr_outer:
                return STATUS_OUTER_UNSTABLE, j, events
            rec_fast[j] = acc_fast / block
            rec_aux[j] = acc_aux / block
            rec_outer[j] = hold
            if outer_on:
                e2 = slope2 * (acc / block) + n2[j]
                e2 = _sos_step(lockin_sos, li_zi, e2)
                y2, ev = _pid_step(e2, pid2_pd, p2_pd_zi, pid2_ki_half, i2, pid2_lp, p2_lp_zi, pid2_sat)
                if ev:
                    events += 1
                hold = _sos_step(out_sos, out_zi, y2)
            acc = 0.0
            acc_fast = 0.0
            acc_aux = 0.0
            ss_rel = 0.0
            ss_abs = 0.0
            j += 1
    return STATUS_OK, -1, events
