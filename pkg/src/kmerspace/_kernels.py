"""Hot numeric kernels: numba-jitted fast paths with pure-numpy fallbacks.

The backend is chosen once at import from the KMERSPACE_KERNELS env var
("numba", "numpy" or "auto") and can be switched at runtime with
:func:`use_backend`.  "auto" routes each kernel to whichever side wins on
typical shapes (see benchmarks/bench_kernels.py): the conv kernels reduce to
a few BLAS matmuls in numpy and beat the jitted loops at the channel counts
that dominate training, while the window-scan kernel is ~3x faster jitted.
"numba"/"numpy" force every kernel to one side.

All kernels are deterministic: per output element the accumulation order is
fixed, so results do not depend on the numba thread count.
"""

import os
import warnings

import numpy as np

_ENV_FLAG = "KMERSPACE_KERNELS"

try:
    import numba
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

if _HAVE_NUMBA:
    _threads = os.environ.get("KMERSPACE_THREADS")
    if _threads:
        numba.set_num_threads(max(1, int(_threads)))


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _np_conv1d_forward(xp, w, stride):
    kw = w.shape[0]
    lout = (xp.shape[1] - kw) // stride + 1
    hi = (lout - 1) * stride + 1
    out = xp[:, 0:hi:stride, :] @ w[0]
    for t in range(1, kw):
        out += xp[:, t:t + hi:stride, :] @ w[t]
    return out


def _np_conv1d_grad_input(dy, w, stride, lpad):
    batch, lout, _ = dy.shape
    kw, cin, _ = w.shape
    hi = (lout - 1) * stride + 1
    dxp = np.zeros((batch, lpad, cin), dtype=dy.dtype)
    for t in range(kw):
        dxp[:, t:t + hi:stride, :] += dy @ w[t].T
    return dxp


def _np_conv1d_grad_weight(xp, dy, stride, kw):
    lout = dy.shape[1]
    hi = (lout - 1) * stride + 1
    dw = np.empty((kw, xp.shape[2], dy.shape[2]), dtype=dy.dtype)
    for t in range(kw):
        dw[t] = np.tensordot(xp[:, t:t + hi:stride, :], dy, axes=([0, 1], [0, 1]))
    return dw


def _np_window_scores(genome, fwd, rev, lo, n_off):
    rl = fwd.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(genome[lo:lo + n_off + rl - 1], rl)
    sf = (win == fwd).sum(axis=1, dtype=np.int32)
    sr = (win == rev).sum(axis=1, dtype=np.int32)
    return sf, sr


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _nb_conv1d_forward(xp, w, stride, out):
        batch, lout, cout = out.shape
        kw, cin, _ = w.shape
        for b in prange(batch):
            for l in range(lout):
                base = l * stride
                for t in range(kw):
                    for ci in range(cin):
                        xv = xp[b, base + t, ci]
                        for co in range(cout):
                            out[b, l, co] += xv * w[t, ci, co]

    @njit(cache=True, parallel=True)
    def _nb_conv1d_grad_input(dy, wt, stride, dxp):
        batch, lout, cout = dy.shape
        kw, _, cin = wt.shape
        for b in prange(batch):
            for l in range(lout):
                base = l * stride
                for t in range(kw):
                    for co in range(cout):
                        dv = dy[b, l, co]
                        for ci in range(cin):
                            dxp[b, base + t, ci] += dv * wt[t, co, ci]

    @njit(cache=True, parallel=True)
    def _nb_conv1d_grad_weight(xp, dy, stride, dw):
        batch, lout, cout = dy.shape
        kw = dw.shape[0]
        cin = dw.shape[1]
        for t in prange(kw):
            for b in range(batch):
                for l in range(lout):
                    base = l * stride
                    for ci in range(cin):
                        xv = xp[b, base + t, ci]
                        for co in range(cout):
                            dw[t, ci, co] += xv * dy[b, l, co]

    @njit(cache=True, parallel=True)
    def _nb_window_scores(genome, fwd, rev, lo, sf, sr):
        n_off = sf.shape[0]
        rl = fwd.shape[0]
        for o in prange(n_off):
            f = 0
            r = 0
            for j in range(rl):
                g = genome[lo + o + j]
                if g == fwd[j]:
                    f += 1
                if g == rev[j]:
                    r += 1
            sf[o] = f
            sr[o] = r


# ---------------------------------------------------------------------------
# backend selection and dispatch
# ---------------------------------------------------------------------------

def _resolve(name):
    if name in (None, ""):
        name = "auto"
    if name == "numba" and not _HAVE_NUMBA:
        warnings.warn("numba requested via %s but not importable; using numpy" % _ENV_FLAG)
        return "numpy"
    if name not in ("auto", "numba", "numpy"):
        raise ValueError("unknown kernel backend %r" % name)
    if name == "auto" and not _HAVE_NUMBA:
        return "numpy"
    return name


_BACKEND = _resolve(os.environ.get(_ENV_FLAG, "auto"))


def use_backend(name):
    """Select the kernel backend ("auto", "numba" or "numpy") for this process."""
    global _BACKEND
    _BACKEND = _resolve(name)


def active_backend():
    return _BACKEND


def _jit_conv():
    return _BACKEND == "numba"


def _jit_scan():
    return _BACKEND in ("numba", "auto")


def conv1d_forward(xpad, w, stride=1):
    """Valid cross-correlation of pre-padded (B, Lp, Cin) with (K, Cin, Cout)."""
    if _jit_conv():
        xpad = np.ascontiguousarray(xpad)
        w = np.ascontiguousarray(w)
        kw = w.shape[0]
        lout = (xpad.shape[1] - kw) // stride + 1
        out = np.zeros((xpad.shape[0], lout, w.shape[2]), dtype=xpad.dtype)
        _nb_conv1d_forward(xpad, w, stride, out)
        return out
    return _np_conv1d_forward(xpad, w, stride)


def conv1d_grad_input(dy, w, stride, lpad):
    """Gradient of conv1d_forward w.r.t. the padded input."""
    if _jit_conv():
        dy = np.ascontiguousarray(dy)
        wt = np.ascontiguousarray(w.transpose(0, 2, 1))
        dxp = np.zeros((dy.shape[0], lpad, w.shape[1]), dtype=dy.dtype)
        _nb_conv1d_grad_input(dy, wt, stride, dxp)
        return dxp
    return _np_conv1d_grad_input(dy, w, stride, lpad)


def conv1d_grad_weight(xpad, dy, stride, kw):
    """Gradient of conv1d_forward w.r.t. the (K, Cin, Cout) weight."""
    if _jit_conv():
        xpad = np.ascontiguousarray(xpad)
        dy = np.ascontiguousarray(dy)
        dw = np.zeros((kw, xpad.shape[2], dy.shape[2]), dtype=dy.dtype)
        _nb_conv1d_grad_weight(xpad, dy, stride, dw)
        return dw
    return _np_conv1d_grad_weight(xpad, dy, stride, kw)


def window_match_scores(genome_codes, fwd_codes, rev_codes, lo, n_off):
    """Per-offset match counts of a read (and its revcomp) against the genome.

    genome_codes is the full int8-coded genome; offsets scored are
    lo, lo+1, ..., lo+n_off-1.
    """
    if _jit_scan():
        sf = np.empty(n_off, dtype=np.int32)
        sr = np.empty(n_off, dtype=np.int32)
        _nb_window_scores(genome_codes, fwd_codes, rev_codes, lo, sf, sr)
        return sf, sr
    return _np_window_scores(genome_codes, fwd_codes, rev_codes, lo, n_off)
