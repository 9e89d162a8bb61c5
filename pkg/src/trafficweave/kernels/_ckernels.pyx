# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the pure-numpy kernels in ``_pykernels``.

Same signatures and semantics; fused loops avoid the large temporaries the
numpy fallback allocates per step.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, tanh

cnp.import_array()

DEF HUMAN_ACTION_LIMIT = 10.0


cdef inline float _sigmoidf(float x) noexcept nogil:
    return <float>(1.0 / (1.0 + exp(-<double>x)))


def lstm_cell(float[:, ::1] pre, float[:, ::1] c):
    """Fused LSTM cell activation; gate order [input, forget, cell, output]."""
    cdef Py_ssize_t B = pre.shape[0]
    cdef Py_ssize_t H = c.shape[1]
    h_new_arr = np.empty((B, H), dtype=np.float32)
    c_new_arr = np.empty((B, H), dtype=np.float32)
    cdef float[:, ::1] h_new = h_new_arr
    cdef float[:, ::1] c_new = c_new_arr
    cdef Py_ssize_t b, j
    cdef float i_g, f_g, g_g, o_g, cn
    with nogil:
        for b in range(B):
            for j in range(H):
                i_g = _sigmoidf(pre[b, j])
                f_g = _sigmoidf(pre[b, H + j])
                g_g = <float>tanh(<double>pre[b, 2 * H + j])
                o_g = _sigmoidf(pre[b, 3 * H + j])
                cn = f_g * c[b, j] + i_g * g_g
                c_new[b, j] = cn
                h_new[b, j] = o_g * <float>tanh(<double>cn)
    return h_new_arr, c_new_arr


def gmm_sample(float[:, ::1] weights, float[:, :, ::1] means,
               float[:, :, ::1] scales, float[:, ::1] corrs,
               float[::1] u, float[:, ::1] eps):
    """Draw one correlated bivariate action per row from a per-row GMM."""
    cdef Py_ssize_t B = weights.shape[0]
    cdef Py_ssize_t M = weights.shape[1]
    out_arr = np.empty((B, 2), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t b, k, comp
    cdef float cum, r
    with nogil:
        for b in range(B):
            cum = 0.0
            comp = M - 1
            for k in range(M):
                cum += weights[b, k]
                if u[b] <= cum:
                    comp = k
                    break
            r = corrs[b, comp]
            out[b, 0] = means[b, comp, 0] + scales[b, comp, 0] * eps[b, 0]
            out[b, 1] = means[b, comp, 1] + scales[b, comp, 1] * (
                r * eps[b, 0] + <float>sqrt(<double>(1.0 - r * r)) * eps[b, 1])
    return out_arr


def score_rollouts(double[::1] human0, float[:, :, ::1] human_actions,
                   int[::1] plan_idx, float[:, :, ::1] robot_traj,
                   int[::1] terminal_idx, double tau_goal, double gamma,
                   double dt, double[::1] w, human_traj_out=None):
    """Roll out sampled human futures and accumulate discounted plan costs.

    See ``_pykernels.score_rollouts`` for the argument contract.
    """
    cdef Py_ssize_t B = human_actions.shape[0]
    cdef Py_ssize_t N = human_actions.shape[1]
    costs_arr = np.zeros(B, dtype=np.float64)
    cdef double[::1] costs = costs_arr
    cdef float[:, :, ::1] traj_out
    cdef bint want_traj = human_traj_out is not None
    if want_traj:
        traj_out = human_traj_out

    cdef double coll_scale = w[0], box_s = w[1], box_tau = w[2], coll_radius = w[3]
    cdef double ctrl_scale = w[4], lane_scale = w[5], lane_offset = w[6]
    cdef double lane_slope = w[7], lane_sign = w[8], disamb_scale = w[9]
    cdef double term_coll = w[10]

    cdef float fdt = <float>dt
    cdef float fhalf_dt2 = <float>(0.5 * dt * dt)
    cdef Py_ssize_t b, i, p
    cdef int term, step
    cdef float s, tau, sd, td, a, at, sd_next, t_int, t_stop
    cdef double disc, ds, dtau, dsd, j_c, j_a, j_l, j_d, urgency, rs, rtau, rsd, ru
    with nogil:
        for b in range(B):
            s = <float>human0[0]
            tau = <float>human0[1]
            sd = <float>human0[2]
            td = <float>human0[3]
            p = plan_idx[b]
            term = terminal_idx[p]
            disc = 1.0
            for i in range(N):
                step = <int>i + 1
                a = human_actions[b, i, 0]
                if a > HUMAN_ACTION_LIMIT:
                    a = HUMAN_ACTION_LIMIT
                elif a < -HUMAN_ACTION_LIMIT:
                    a = -HUMAN_ACTION_LIMIT
                at = human_actions[b, i, 1]
                if at > HUMAN_ACTION_LIMIT:
                    at = HUMAN_ACTION_LIMIT
                elif at < -HUMAN_ACTION_LIMIT:
                    at = -HUMAN_ACTION_LIMIT
                sd_next = sd + a * fdt
                if sd_next < 0.0:
                    t_stop = -sd / a if a != 0.0 else 0.0
                    t_int = t_stop
                    sd_next = 0.0
                else:
                    t_int = fdt
                s = s + sd * t_int + <float>0.5 * a * t_int * t_int
                sd = sd_next
                tau = tau + td * fdt + fhalf_dt2 * at
                td = td + at * fdt
                if want_traj:
                    traj_out[b, i, 0] = s
                    traj_out[b, i, 1] = tau

                disc *= gamma
                if step > term:
                    continue
                rs = <double>robot_traj[p, i, 0]
                rtau = <double>robot_traj[p, i, 1]
                rsd = <double>robot_traj[p, i, 2]
                ru = <double>robot_traj[p, i, 3]
                ds = rs - <double>s
                dtau = rtau - <double>tau
                if step == term:
                    j_l = lane_scale * fabs(rtau - tau_goal)
                    if fabs(ds) < box_s and fabs(dtau) < box_tau:
                        j_l += term_coll
                    costs[b] += disc * j_l
                    continue
                dsd = rsd - <double>sd
                if fabs(ds) < box_s and fabs(dtau) < box_tau:
                    j_c = coll_scale * (coll_radius - sqrt(ds * ds + dtau * dtau))
                else:
                    j_c = 0.0
                j_a = ctrl_scale * ru * ru
                urgency = lane_offset + rs * lane_slope
                if urgency > 1.0:
                    urgency = 1.0
                j_l = lane_sign * lane_scale * urgency * fabs(rtau - tau_goal)
                j_d = ds * dsd
                if j_d < 0.0:
                    j_d = 0.0
                elif j_d > 1.0:
                    j_d = 1.0
                j_d = -disamb_scale * j_d
                costs[b] += disc * (j_c + j_a + j_l + j_d)
    return costs_arr
