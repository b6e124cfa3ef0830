"""Synchronous log-domain sum-product on the star+clique scene topology.

All kernels work on a batch of G unary sets that share one graph size N and
the two pairwise tables:

    us  (G, Ts)      scene unary log-potentials
    ua  (G, N, Ta)   person unary log-potentials
    A   (Ts, Ta)     scene-person log table
    B   (Ta, Ta)     person-person log table (symmetric)

Messages are kept as normalized log vectors:

    SP (G, N, Ta)     scene -> person p
    PS (G, N, Ts)     person p -> scene
    PP (G, N, N, Ta)  person p -> person q  (diagonal unused, held at 0)

A message LSE_a(T[a, b] + h[a]) is evaluated as log(exp(h - max h) @ exp(T -
max T)) plus constants that the normalization removes, so each message costs
one exp per label and a small matmul.

The numba path (marginals only) is used when numba imports and
``EERAL_NUMBA`` is not "0".  The reverse pass is numpy only; it runs on
whole same-size groups of graphs.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("EERAL_NUMBA", "1") != "0"

CLAMP_OFF = -1e30


def _softmax(x, axis):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _exp_table(T):
    return np.exp(T - T.max())


def _shifted_exp(h):
    return np.exp(h - h.max(axis=-1, keepdims=True))


def _log_normalize(v):
    return np.log(v) - np.log(v.sum(axis=-1, keepdims=True))


def _offdiag(n):
    return (1.0 - np.eye(n))[None, :, :, None]


def _beliefs(us, ua, SP, PS, PP):
    return us + PS.sum(axis=1), ua + SP + PP.sum(axis=1)


def _cavities(us, ua, SP, PS, PP):
    bs, bp = _beliefs(us, ua, SP, PS, PP)
    hs = bs[:, None, :] - PS                            # scene minus what came from p
    hsp = bp - SP                                       # p minus what came from scene
    hpq = bp[:, :, None, :] - PP.transpose(0, 2, 1, 3)  # [p, q]: p minus what came from q
    return hs, hsp, hpq


def bp_forward_numpy(us, ua, A, B, rounds, damping=0.0, keep_history=False):
    """Run ``rounds`` flooding sweeps; returns final (bs, bp) log-beliefs.

    With ``keep_history`` the per-round input messages are returned too, as
    needed by :func:`bp_backward`.
    """
    G, N, Ta = ua.shape
    Ts = us.shape[1]
    EA, EB = _exp_table(A), _exp_table(B)
    SP = np.zeros((G, N, Ta))
    PS = np.zeros((G, N, Ts))
    PP = np.zeros((G, N, N, Ta))
    mask = _offdiag(N)
    history = []
    for _ in range(rounds):
        if keep_history:
            history.append((SP, PS, PP))
        hs, hsp, hpq = _cavities(us, ua, SP, PS, PP)
        nSP = _log_normalize(_shifted_exp(hs) @ EA)
        nPS = _log_normalize(_shifted_exp(hsp) @ EA.T)
        nPP = _log_normalize(_shifted_exp(hpq) @ EB) * mask
        if damping:
            nSP = (1.0 - damping) * nSP + damping * SP
            nPS = (1.0 - damping) * nPS + damping * PS
            nPP = (1.0 - damping) * nPP + damping * PP
        SP, PS, PP = nSP, nPS, nPP
    bs, bp = _beliefs(us, ua, SP, PS, PP)
    if keep_history:
        return bs, bp, history
    return bs, bp


def bp_marginals_numpy(us, ua, A, B, rounds, damping=0.0):
    bs, bp = bp_forward_numpy(us, ua, A, B, rounds, damping)
    return _softmax(bs, -1), _softmax(bp, -1)


def _message_backward(h, E, G):
    """Gradients of normalize(log(exp(h') @ E)) w.r.t. h and the log table.

    Normalizers and max-shifts are held constant (see :func:`bp_backward`).
    """
    eh = _shifted_exp(h)
    R = G / (eh @ E)
    g_h = eh * (R @ E.T)
    g_T = E * (eh.reshape(-1, eh.shape[-1]).T @ R.reshape(-1, R.shape[-1]))
    return g_h, g_T


def bp_backward(us, ua, A, B, history, damping, g_bs, g_bp):
    """Reverse pass through the unrolled rounds.

    ``g_bs``/``g_bp`` are loss gradients w.r.t. the final log-beliefs.
    Returns gradients w.r.t. (us, ua, A, B).  Per-message normalizers are
    treated as constants: every downstream quantity is invariant to a
    constant shift of any message, so this yields the exact derivative.
    """
    G, N, Ta = ua.shape
    EA, EB = _exp_table(A), _exp_table(B)
    mask = _offdiag(N)
    g_us = g_bs.copy()
    g_ua = g_bp.copy()
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    G_PS = np.broadcast_to(g_bs[:, None, :], (G, N, us.shape[1])).copy()
    G_SP = g_bp.copy()
    G_PP = g_bp[:, None, :, :] * mask
    for SP, PS, PP in reversed(history):
        if damping:
            carry = (damping * G_SP, damping * G_PS, damping * G_PP)
            G_SP, G_PS, G_PP = (1.0 - damping) * G_SP, (1.0 - damping) * G_PS, (1.0 - damping) * G_PP
        hs, hsp, hpq = _cavities(us, ua, SP, PS, PP)
        g_hs, t1 = _message_backward(hs, EA, G_SP)
        g_hsp, t2 = _message_backward(hsp, EA.T, G_PS)
        g_hpq, t3 = _message_backward(hpq, EB, G_PP)
        gA += t1 + t2.T
        gB += t3
        g_hpq *= mask

        g_b_s = g_hs.sum(axis=1)
        g_b_p = g_hsp + g_hpq.sum(axis=2)
        g_us += g_b_s
        g_ua += g_b_p
        G_PS = g_b_s[:, None, :] - g_hs
        G_SP = g_b_p - g_hsp
        G_PP = (g_b_p[:, None, :, :] - g_hpq.transpose(0, 2, 1, 3)) * mask
        if damping:
            G_SP, G_PS, G_PP = G_SP + carry[0], G_PS + carry[1], G_PP + carry[2]
    return g_us, g_ua, gA, gB


if NUMBA_AVAILABLE:
    # The compiled kernel runs in a rescaled probability domain: unaries are
    # exponentiated once per row, messages are positive normalized vectors and
    # beliefs are running products kept at max 1.  No exp/log in the sweep.

    @numba.njit(cache=True, nogil=True)
    def _exp_shift_into(x, out):
        m = -np.inf
        for k in range(x.shape[0]):
            if x[k] > m:
                m = x[k]
        for k in range(x.shape[0]):
            out[k] = np.exp(x[k] - m)

    @numba.njit(cache=True, nogil=True)
    def _rescale(v):
        m = 0.0
        for k in range(v.shape[0]):
            if v[k] > m:
                m = v[k]
        inv = 1.0 / m
        for k in range(v.shape[0]):
            v[k] *= inv

    @numba.njit(cache=True, nogil=True)
    def _message_nb(belief, incoming, E, out):
        """out <- normalize((belief / incoming) @ E)."""
        nb = E.shape[1]
        for b in range(nb):
            out[b] = 0.0
        for a in range(belief.shape[0]):
            c = belief[a] / incoming[a]
            for b in range(nb):
                out[b] += c * E[a, b]
        tot = 0.0
        for b in range(nb):
            tot += out[b]
        inv = 1.0 / tot
        for b in range(nb):
            out[b] *= inv

    @numba.njit(cache=True, nogil=True)
    def _commit_nb(new, old, damping):
        if damping == 0.0:
            for k in range(new.shape[0]):
                old[k] = new[k]
        else:
            tot = 0.0
            for k in range(new.shape[0]):
                old[k] = new[k] ** (1.0 - damping) * old[k] ** damping
                tot += old[k]
            for k in range(new.shape[0]):
                old[k] /= tot

    @numba.njit(cache=True, nogil=True)
    def _bp_marginals_nb(us, ua, EA, EAt, EB, rounds, damping, out_s, out_a):
        G, N, Ta = ua.shape
        Ts = us.shape[1]
        SP = np.empty((N, Ta))
        PS = np.empty((N, Ts))
        PP = np.empty((N, N, Ta))
        nSP = np.empty((N, Ta))
        nPS = np.empty((N, Ts))
        nPP = np.empty((N, N, Ta))
        eus = np.empty(Ts)
        eua = np.empty((N, Ta))
        bs = np.empty(Ts)
        bp = np.empty((N, Ta))
        for g in range(G):
            _exp_shift_into(us[g], eus)
            for p in range(N):
                _exp_shift_into(ua[g, p], eua[p])
            SP[:] = 1.0 / Ta
            PS[:] = 1.0 / Ts
            PP[:] = 1.0 / Ta
            for r in range(rounds + 1):
                for a in range(Ts):
                    bs[a] = eus[a]
                for p in range(N):
                    for a in range(Ts):
                        bs[a] *= PS[p, a]
                    _rescale(bs)
                for p in range(N):
                    for b in range(Ta):
                        bp[p, b] = eua[p, b] * SP[p, b]
                    _rescale(bp[p])
                    for q in range(N):
                        if q != p:
                            for b in range(Ta):
                                bp[p, b] *= PP[q, p, b]
                            _rescale(bp[p])
                if r == rounds:
                    break
                for p in range(N):
                    _message_nb(bs, PS[p], EA, nSP[p])
                    _message_nb(bp[p], SP[p], EAt, nPS[p])
                    for q in range(N):
                        if q != p:
                            _message_nb(bp[p], PP[q, p], EB, nPP[p, q])
                for p in range(N):
                    _commit_nb(nSP[p], SP[p], damping)
                    _commit_nb(nPS[p], PS[p], damping)
                    for q in range(N):
                        if q != p:
                            _commit_nb(nPP[p, q], PP[p, q], damping)
            tot = bs.sum()
            for a in range(Ts):
                out_s[g, a] = bs[a] / tot
            for p in range(N):
                tot = bp[p].sum()
                for b in range(Ta):
                    out_a[g, p, b] = bp[p, b] / tot


def bp_marginals_numba(us, ua, A, B, rounds, damping=0.0):
    if not NUMBA_AVAILABLE:  # pragma: no cover
        raise RuntimeError("numba is not installed")
    us = np.ascontiguousarray(us, dtype=np.float64)
    ua = np.ascontiguousarray(ua, dtype=np.float64)
    EA = _exp_table(np.asarray(A, dtype=np.float64))
    out_s = np.empty_like(us)
    out_a = np.empty_like(ua)
    _bp_marginals_nb(us, ua, np.ascontiguousarray(EA), np.ascontiguousarray(EA.T),
                     np.ascontiguousarray(_exp_table(np.asarray(B, dtype=np.float64))),
                     int(rounds), float(damping), out_s, out_a)
    return out_s, out_a


def bp_marginals(us, ua, A, B, rounds, damping=0.0):
    """Marginals (ps (G, Ts), pa (G, N, Ta)) after ``rounds`` sweeps."""
    if USE_NUMBA:
        return bp_marginals_numba(us, ua, A, B, rounds, damping)
    return bp_marginals_numpy(us, ua, A, B, rounds, damping)
