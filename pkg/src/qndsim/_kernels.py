"""Hot numerical kernels: numba-jitted with a pure-numpy fallback.

The backend is chosen at import time from the environment variable
``QNDSIM_BACKEND``: ``auto`` (default, numba when importable), ``numba``
(require numba), or ``numpy`` (force the fallback).  Both implementations
are behaviorally identical and cross-checked against each other and
against matrix-exponential oracles in the test suite.

Kernels:

- ``lindblad_rk4``  fixed-step RK4 propagation of a stack of density-like
  matrices under one Lindblad generator with a classical drive; optionally
  couples the stack members as a ladder of operator-insertion sources.
- ``capture_rk4``   RK4 propagation of the system extended by an auxiliary
  capture mode with a time-dependent coupling, with per-step substepping
  (the early-time coupling is stiff).
- ``mle_iterations``  iterative R*rho*R maximum-likelihood fixed point.
"""

from __future__ import annotations

import os

import numpy as np

_ENV = os.environ.get("QNDSIM_BACKEND", "auto").strip().lower()
if _ENV not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"QNDSIM_BACKEND must be one of auto|numba|numpy, got {_ENV!r}")

_HAVE_NUMBA = False
if _ENV in ("auto", "numba"):
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _ENV == "numba":
            raise RuntimeError("QNDSIM_BACKEND=numba but numba is not importable")

BACKEND = "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure numpy implementations


def _rhs_batch_numpy(u, h_nh, hd, c_ops, cd_ops, a_op, adag_op, wv, use_lattice):
    out = -1j * (h_nh @ u - u @ hd)
    for i in range(c_ops.shape[0]):
        out += c_ops[i] @ u @ cd_ops[i]
    if use_lattice:
        wb = np.conjugate(wv)
        for m in range(3):
            for n in range(3):
                k = 3 * m + n
                if n:
                    out[k] += wv * (a_op @ u[k - 1])
                if m:
                    out[k] += wb * (u[k - 3] @ adag_op)
    return out


def lindblad_rk4_numpy(
    u0, h_nh_const, c_ops, a_op, adag_op, eps, w, use_lattice, dt, nsteps, store_every, top_idx
):
    """Propagate the stack u0 over nsteps of size dt.

    eps and w are sampled on the half-step grid (2*nsteps+1 values).
    Returns (final stack, node-0 snapshots every store_every steps including
    the initial one, max |trace-1| of node 0, max top-level population).
    """
    u = u0.astype(np.complex128).copy()
    d = u.shape[1]
    cd_ops = np.conjugate(np.transpose(c_ops, (0, 2, 1))).copy()
    n_store = nsteps // store_every + 1
    traj = np.empty((n_store, d, d), dtype=np.complex128)
    traj[0] = u[0]
    stored = 1
    max_tr = 0.0
    max_top = 0.0
    for step in range(nsteps):
        k = 2 * step
        hs = []
        for j in (k, k + 1, k + 2):
            e = eps[j]
            h = h_nh_const + (1j * e) * adag_op + (-1j * np.conjugate(e)) * a_op
            hs.append((h, np.ascontiguousarray(h.conj().T)))
        k1 = _rhs_batch_numpy(u, hs[0][0], hs[0][1], c_ops, cd_ops, a_op, adag_op, w[k], use_lattice)
        u2 = u + (dt / 2) * k1
        k2 = _rhs_batch_numpy(u2, hs[1][0], hs[1][1], c_ops, cd_ops, a_op, adag_op, w[k + 1], use_lattice)
        u3 = u + (dt / 2) * k2
        k3 = _rhs_batch_numpy(u3, hs[1][0], hs[1][1], c_ops, cd_ops, a_op, adag_op, w[k + 1], use_lattice)
        u4 = u + dt * k3
        k4 = _rhs_batch_numpy(u4, hs[2][0], hs[2][1], c_ops, cd_ops, a_op, adag_op, w[k + 2], use_lattice)
        u = u + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        tr_defect = abs(np.real(np.trace(u[0])) - 1.0) + abs(np.imag(np.trace(u[0])))
        if tr_defect > max_tr:
            max_tr = tr_defect
        top = 0.0
        for idx in top_idx:
            top += float(np.real(u[0][idx, idx]))
        if top > max_top:
            max_top = top
        if (step + 1) % store_every == 0:
            traj[stored] = u[0]
            stored += 1
    return u, traj[:stored], max_tr, max_top


def _rhs_capture_numpy(
    r, k_const, c_const, cd_const, a_op, adag_op, b_op, bdag_op, bdag_a, bdag_b, c0, sqrt_kex, g, be
):
    gc = np.conjugate(g)
    bec = np.conjugate(be)
    h = (
        k_const
        + (sqrt_kex * be) * adag_op
        + (sqrt_kex * bec) * a_op
        + (1j * g * bec) * b_op
        + (-1j * gc * be) * bdag_op
        + (-sqrt_kex * gc) * bdag_a
        + (-0.5j * (g.real**2 + g.imag**2)) * bdag_b
    )
    ct = c0 + g * b_op
    out = -1j * (h @ r - r @ np.ascontiguousarray(h.conj().T))
    out += ct @ r @ np.ascontiguousarray(ct.conj().T)
    for i in range(c_const.shape[0]):
        out += c_const[i] @ r @ cd_const[i]
    return out


def capture_rk4_numpy(
    rho0,
    k_const,
    c_const,
    a_op,
    adag_op,
    b_op,
    bdag_op,
    bdag_a,
    bdag_b,
    c0,
    sqrt_kex,
    gt,
    beta,
    offsets,
    nsub,
    dt,
    cav_idx,
    b_idx,
):
    """Propagate rho0 through len(nsub) steps of size dt with substepping.

    Step i uses the flattened stage arrays gt/beta at
    [offsets[i] : offsets[i] + 2*nsub[i] + 1].
    Returns (rho, max |trace-1|, max cavity-top population, max capture-top
    population).
    """
    rho = rho0.astype(np.complex128).copy()
    cd_const = np.conjugate(np.transpose(c_const, (0, 2, 1))).copy()
    max_tr = 0.0
    max_cav = 0.0
    max_b = 0.0
    args = (k_const, c_const, cd_const, a_op, adag_op, b_op, bdag_op, bdag_a, bdag_b, c0, sqrt_kex)
    for i in range(len(nsub)):
        o = int(offsets[i])
        ns = int(nsub[i])
        h = dt / ns
        for s in range(ns):
            j = o + 2 * s
            k1 = _rhs_capture_numpy(rho, *args, gt[j], beta[j])
            k2 = _rhs_capture_numpy(rho + (h / 2) * k1, *args, gt[j + 1], beta[j + 1])
            k3 = _rhs_capture_numpy(rho + (h / 2) * k2, *args, gt[j + 1], beta[j + 1])
            k4 = _rhs_capture_numpy(rho + h * k3, *args, gt[j + 2], beta[j + 2])
            rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        tr = np.trace(rho)
        defect = abs(tr.real - 1.0) + abs(tr.imag)
        if defect > max_tr:
            max_tr = defect
        cav = 0.0
        for idx in cav_idx:
            cav += float(np.real(rho[idx, idx]))
        if cav > max_cav:
            max_cav = cav
        btop = 0.0
        for idx in b_idx:
            btop += float(np.real(rho[idx, idx]))
        if btop > max_b:
            max_b = btop
    return rho, max_tr, max_cav, max_b


def mle_iterations_numpy(povm, freqs, rho0, n_settings, max_iter, tol, floor):
    """Iterate rho -> R rho R with R = (1/n_settings) sum_s (f_s/p_s) Pi_s.

    Returns (rho, log-likelihood per recorded iteration, iterations done).
    Stops early when the log-likelihood gain drops below tol.
    """
    rho = rho0.astype(np.complex128).copy()
    d = rho.shape[0]
    s_count = povm.shape[0]
    pmat = povm.reshape(s_count, d * d)
    logliks = np.empty(max_iter, dtype=np.float64)
    mask = freqs > 0
    prev = -np.inf
    it = 0
    for it in range(max_iter):
        p = np.real(pmat @ rho.T.ravel())
        pc = np.maximum(p, floor)
        ll = float(np.dot(freqs[mask], np.log(pc[mask])))
        logliks[it] = ll
        if it > 0 and ll - prev < tol:
            it += 1
            break
        prev = ll
        wvec = (freqs / pc / n_settings).astype(np.float64)
        r_op = (wvec @ pmat).reshape(d, d)
        rho = r_op @ rho @ r_op
        rho = (rho + rho.conj().T) / 2
        rho = rho / np.real(np.trace(rho))
    else:
        it += 1
    return rho, logliks[:it], it


# ---------------------------------------------------------------------------
# numba implementations

if _HAVE_NUMBA:

    @njit(cache=True)
    def _rhs_batch_numba(u, h_nh, hd, c_ops, cd_ops, a_op, adag_op, wv, use_lattice, out):
        kk = u.shape[0]
        for k in range(kk):
            out[k] = -1j * (np.dot(h_nh, u[k]) - np.dot(u[k], hd))
            for i in range(c_ops.shape[0]):
                out[k] += np.dot(c_ops[i], np.dot(u[k], cd_ops[i]))
        if use_lattice:
            wb = np.conjugate(wv)
            for m in range(3):
                for n in range(3):
                    k = 3 * m + n
                    if n:
                        out[k] += wv * np.dot(a_op, u[k - 1])
                    if m:
                        out[k] += wb * np.dot(u[k - 3], adag_op)

    @njit(cache=True)
    def _lindblad_rk4_numba(
        u0, h_nh_const, c_ops, a_op, adag_op, eps, w, use_lattice, dt, nsteps, store_every, top_idx
    ):
        u = u0.copy()
        kk = u.shape[0]
        d = u.shape[1]
        nc = c_ops.shape[0]
        cd_ops = np.empty_like(c_ops)
        for i in range(nc):
            cd_ops[i] = np.ascontiguousarray(c_ops[i].conj().T)
        n_store = nsteps // store_every + 1
        traj = np.empty((n_store, d, d), dtype=np.complex128)
        traj[0] = u[0]
        stored = 1
        max_tr = 0.0
        max_top = 0.0
        k1 = np.empty_like(u)
        k2 = np.empty_like(u)
        k3 = np.empty_like(u)
        k4 = np.empty_like(u)
        for step in range(nsteps):
            j = 2 * step
            e0 = eps[j]
            e1 = eps[j + 1]
            e2 = eps[j + 2]
            h0 = h_nh_const + (1j * e0) * adag_op + (-1j * np.conjugate(e0)) * a_op
            h1 = h_nh_const + (1j * e1) * adag_op + (-1j * np.conjugate(e1)) * a_op
            h2 = h_nh_const + (1j * e2) * adag_op + (-1j * np.conjugate(e2)) * a_op
            hd0 = np.ascontiguousarray(h0.conj().T)
            hd1 = np.ascontiguousarray(h1.conj().T)
            hd2 = np.ascontiguousarray(h2.conj().T)
            _rhs_batch_numba(u, h0, hd0, c_ops, cd_ops, a_op, adag_op, w[j], use_lattice, k1)
            _rhs_batch_numba(
                u + (dt / 2) * k1, h1, hd1, c_ops, cd_ops, a_op, adag_op, w[j + 1], use_lattice, k2
            )
            _rhs_batch_numba(
                u + (dt / 2) * k2, h1, hd1, c_ops, cd_ops, a_op, adag_op, w[j + 1], use_lattice, k3
            )
            _rhs_batch_numba(
                u + dt * k3, h2, hd2, c_ops, cd_ops, a_op, adag_op, w[j + 2], use_lattice, k4
            )
            u = u + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            tr = np.trace(u[0])
            defect = abs(tr.real - 1.0) + abs(tr.imag)
            if defect > max_tr:
                max_tr = defect
            top = 0.0
            for ii in range(top_idx.shape[0]):
                top += u[0][top_idx[ii], top_idx[ii]].real
            if top > max_top:
                max_top = top
            if (step + 1) % store_every == 0:
                traj[stored] = u[0]
                stored += 1
        return u, traj[:stored], max_tr, max_top

    @njit(cache=True)
    def _rhs_capture_numba(
        r, k_const, c_const, cd_const, a_op, adag_op, b_op, bdag_op, bdag_a, bdag_b, c0, sqrt_kex, g, be
    ):
        gc = np.conjugate(g)
        bec = np.conjugate(be)
        h = (
            k_const
            + (sqrt_kex * be) * adag_op
            + (sqrt_kex * bec) * a_op
            + (1j * g * bec) * b_op
            + (-1j * gc * be) * bdag_op
            + (-sqrt_kex * gc) * bdag_a
            + (-0.5j * (g.real**2 + g.imag**2)) * bdag_b
        )
        hd = np.ascontiguousarray(h.conj().T)
        ct = c0 + g * b_op
        ctd = np.ascontiguousarray(ct.conj().T)
        out = -1j * (np.dot(h, r) - np.dot(r, hd))
        out += np.dot(ct, np.dot(r, ctd))
        for i in range(c_const.shape[0]):
            out += np.dot(c_const[i], np.dot(r, cd_const[i]))
        return out

    @njit(cache=True)
    def _capture_rk4_numba(
        rho0,
        k_const,
        c_const,
        a_op,
        adag_op,
        b_op,
        bdag_op,
        bdag_a,
        bdag_b,
        c0,
        sqrt_kex,
        gt,
        beta,
        offsets,
        nsub,
        dt,
        cav_idx,
        b_idx,
    ):
        rho = rho0.copy()
        nc = c_const.shape[0]
        cd_const = np.empty_like(c_const)
        for i in range(nc):
            cd_const[i] = np.ascontiguousarray(c_const[i].conj().T)
        max_tr = 0.0
        max_cav = 0.0
        max_b = 0.0
        for i in range(nsub.shape[0]):
            o = offsets[i]
            ns = nsub[i]
            h = dt / ns
            for s in range(ns):
                j = o + 2 * s
                k1 = _rhs_capture_numba(
                    rho, k_const, c_const, cd_const, a_op, adag_op, b_op, bdag_op,
                    bdag_a, bdag_b, c0, sqrt_kex, gt[j], beta[j],
                )
                k2 = _rhs_capture_numba(
                    rho + (h / 2) * k1, k_const, c_const, cd_const, a_op, adag_op, b_op,
                    bdag_op, bdag_a, bdag_b, c0, sqrt_kex, gt[j + 1], beta[j + 1],
                )
                k3 = _rhs_capture_numba(
                    rho + (h / 2) * k2, k_const, c_const, cd_const, a_op, adag_op, b_op,
                    bdag_op, bdag_a, bdag_b, c0, sqrt_kex, gt[j + 1], beta[j + 1],
                )
                k4 = _rhs_capture_numba(
                    rho + h * k3, k_const, c_const, cd_const, a_op, adag_op, b_op,
                    bdag_op, bdag_a, bdag_b, c0, sqrt_kex, gt[j + 2], beta[j + 2],
                )
                rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            tr = np.trace(rho)
            defect = abs(tr.real - 1.0) + abs(tr.imag)
            if defect > max_tr:
                max_tr = defect
            cav = 0.0
            for ii in range(cav_idx.shape[0]):
                cav += rho[cav_idx[ii], cav_idx[ii]].real
            if cav > max_cav:
                max_cav = cav
            btop = 0.0
            for ii in range(b_idx.shape[0]):
                btop += rho[b_idx[ii], b_idx[ii]].real
            if btop > max_b:
                max_b = btop
        return rho, max_tr, max_cav, max_b

    @njit(cache=True)
    def _mle_iterations_numba(povm, freqs, rho0, n_settings, max_iter, tol, floor):
        rho = rho0.copy()
        d = rho.shape[0]
        s_count = povm.shape[0]
        logliks = np.empty(max_iter, dtype=np.float64)
        p = np.empty(s_count, dtype=np.float64)
        prev = -np.inf
        it = 0
        done = 0
        for it in range(max_iter):
            for s in range(s_count):
                acc = 0.0
                for a in range(d):
                    for bcol in range(d):
                        acc += (povm[s, a, bcol] * rho[bcol, a]).real
                p[s] = acc if acc > floor else floor
            ll = 0.0
            for s in range(s_count):
                if freqs[s] > 0.0:
                    ll += freqs[s] * np.log(p[s])
            logliks[it] = ll
            done = it + 1
            if it > 0 and ll - prev < tol:
                break
            prev = ll
            r_op = np.zeros((d, d), dtype=np.complex128)
            for s in range(s_count):
                wgt = freqs[s] / p[s] / n_settings
                if wgt != 0.0:
                    r_op += wgt * povm[s]
            rho = np.dot(r_op, np.dot(rho, r_op))
            rho = (rho + rho.conj().T) / 2
            tr = np.trace(rho).real
            rho = rho / tr
        return rho, logliks[:done], done


# ---------------------------------------------------------------------------
# dispatch

if BACKEND == "numba":
    lindblad_rk4 = _lindblad_rk4_numba
    capture_rk4 = _capture_rk4_numba
    mle_iterations = _mle_iterations_numba
else:
    lindblad_rk4 = lindblad_rk4_numpy
    capture_rk4 = capture_rk4_numpy
    mle_iterations = mle_iterations_numpy
