"""Dense linear algebra for small multipartite quantum systems.

Matrices are plain complex numpy arrays; a :class:`QuantumState` pairs a
density matrix with the ordered list of subsystem dimensions it lives on.
All Hilbert-space dimensions in this package are tiny (<= ~100), so dense
eigendecompositions are used throughout.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

#: Hard cap on the linear dimension of any constructed matrix.
DIM_CAP = 4096

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
EIGENVALUE_FLOOR = -1e-9


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with a dimension guard."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("tensor expects 2-D matrices")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows > DIM_CAP or cols > DIM_CAP:
        raise ValueError(f"tensor result {rows}x{cols} exceeds dimension cap {DIM_CAP}")
    return np.kron(a, b)


def dag(a: np.ndarray) -> np.ndarray:
    return np.conjugate(a.T)


def destroy(dim: int) -> np.ndarray:
    """Bosonic annihilation operator on a truncated Fock space."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def fock(dim: int, n: int) -> np.ndarray:
    """Number-state ket |n> as a 1-D array."""
    if not 0 <= n < dim:
        raise ValueError(f"fock level {n} outside dimension {dim}")
    ket = np.zeros(dim, dtype=complex)
    ket[n] = 1.0
    return ket


def ket_density(psi: np.ndarray) -> np.ndarray:
    """|psi><psi| for a (not necessarily normalized) ket."""
    psi = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise ValueError("zero ket")
    psi = psi / norm
    return np.outer(psi, psi.conj())


def coherent(dim: int, alpha: complex) -> np.ndarray:
    """Truncated coherent-state ket, renormalized on the truncated space."""
    n = np.arange(dim)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    amp = np.exp(-abs(alpha) ** 2 / 2) * np.power(complex(alpha), n) / np.exp(log_fact / 2)
    return amp / np.linalg.norm(amp)


def thermal(dim: int, nbar: float) -> np.ndarray:
    """Thermal density matrix with mean occupation nbar, renormalized."""
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    if nbar == 0:
        return ket_density(fock(dim, 0))
    r = nbar / (1.0 + nbar)
    p = r ** np.arange(dim)
    p /= p.sum()
    return np.diag(p).astype(complex)


class QuantumState:
    """Density matrix over an ordered tensor product of subsystems.

    Validates hermiticity, unit trace, and positivity on construction.
    Eigenvalues in [EIGENVALUE_FLOOR, 0) are clipped to zero (with a
    renormalization and a warning); anything more negative raises.
    """

    __slots__ = ("rho", "dims")

    def __init__(self, rho: np.ndarray, dims) -> None:
        rho = np.asarray(rho, dtype=complex)
        dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in dims):
            raise ValueError("subsystem dimensions must be >= 1")
        d = int(np.prod(dims))
        if rho.shape != (d, d):
            raise ValueError(f"rho shape {rho.shape} does not match dims {dims}")
        if not np.all(np.isfinite(rho)):
            raise ValueError("non-finite entries in rho")
        herm_defect = np.max(np.abs(rho - rho.conj().T))
        if herm_defect > HERMITICITY_TOL:
            raise ValueError(f"rho not Hermitian (defect {herm_defect:.3e})")
        rho = (rho + rho.conj().T) / 2
        tr = float(np.real(np.trace(rho)))
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace {tr!r} deviates from 1 beyond tolerance")
        rho = rho / tr
        evals, evecs = np.linalg.eigh(rho)
        min_eval = float(evals[0])
        if min_eval < EIGENVALUE_FLOOR:
            raise ValueError(f"negative eigenvalue {min_eval:.3e} below repair floor")
        if min_eval < 0:
            if min_eval < -1e-14:  # below that it is bare round-off; clip silently
                warnings.warn(
                    f"clipping negative eigenvalue {min_eval:.3e} of a density matrix",
                    RuntimeWarning,
                    stacklevel=2,
                )
            clipped = np.clip(evals, 0.0, None)
            rho = (evecs * clipped) @ evecs.conj().T
            rho = (rho + rho.conj().T) / 2
            rho = rho / np.real(np.trace(rho))
        self.rho = rho
        self.dims = dims

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def copy(self) -> "QuantumState":
        return QuantumState(self.rho.copy(), self.dims)

    def __repr__(self) -> str:  # pragma: no cover
        return f"QuantumState(dims={self.dims})"


def clip_and_renormalize(
    rho: np.ndarray,
    *,
    warn_above: float = 1e-9,
    error_above: float = 5e-3,
) -> np.ndarray:
    """Project a nearly physical Hermitian matrix onto the PSD unit-trace set.

    Clips negative eigenvalues to zero and renormalizes the trace.  Used for
    matrices carrying a known small truncation bias (e.g. states rebuilt from
    a finite set of operator moments), whose negativity defect can exceed the
    strict QuantumState repair floor.  A defect above ``warn_above`` warns;
    above ``error_above`` raises.
    """
    rho = np.asarray(rho, dtype=complex)
    rho = (rho + rho.conj().T) / 2
    evals, evecs = np.linalg.eigh(rho)
    defect = max(0.0, -float(evals[0]))
    if defect > error_above:
        raise ValueError(f"eigenvalue defect {defect:.3e} exceeds {error_above:.1e}")
    if defect > warn_above:
        warnings.warn(
            f"projecting out eigenvalue defect {defect:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    clipped = np.clip(evals, 0.0, None)
    out = (evecs * clipped) @ evecs.conj().T
    out = (out + out.conj().T) / 2
    tr = float(np.real(np.trace(out)))
    if tr <= 0:
        raise ValueError("non-positive trace after clipping")
    return out / tr


def partial_trace(state: QuantumState, keep) -> QuantumState:
    """Reduced state over the subsystems listed in ``keep`` (original order)."""
    keep = sorted(set(int(k) for k in keep))
    n = len(state.dims)
    if not keep:
        raise ValueError("keep set must be non-empty")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"keep indices {keep} out of range for {n} subsystems")
    tensor_rho = state.rho.reshape(state.dims + state.dims)
    row = list(range(n))
    col = [i + n if i in keep else i for i in range(n)]
    out = [i for i in keep] + [i + n for i in keep]
    reduced = np.einsum(tensor_rho, row + col, out)
    kept_dims = tuple(state.dims[i] for i in keep)
    d = int(np.prod(kept_dims))
    return QuantumState(reduced.reshape(d, d), kept_dims)


def partial_transpose(state: QuantumState, subsystem: int) -> np.ndarray:
    """Transpose on one subsystem; returns a plain matrix (may be non-PSD)."""
    n = len(state.dims)
    if not 0 <= subsystem < n:
        raise ValueError(f"subsystem {subsystem} out of range for {n} subsystems")
    tensor_rho = state.rho.reshape(state.dims + state.dims)
    axes = list(range(2 * n))
    axes[subsystem], axes[subsystem + n] = axes[subsystem + n], axes[subsystem]
    d = state.dim
    return tensor_rho.transpose(axes).reshape(d, d)


def trace_norm(a: np.ndarray) -> float:
    """Trace norm of a Hermitian matrix (sum of |eigenvalues|)."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(a))))


def negativity(state: QuantumState, cut: int = 1) -> float:
    """Entanglement negativity (||rho^PT||_1 - 1)/2 across subsystem ``cut``."""
    pt = partial_transpose(state, cut)
    evals = np.linalg.eigvalsh(pt)
    return float(np.sum(np.abs(evals[evals < 0])))


def fidelity(state: QuantumState, target: QuantumState) -> float:
    """Uhlmann fidelity (squared convention: equals <psi|rho|psi> for pure targets)."""
    if state.dims != target.dims:
        raise ValueError(f"dimension mismatch: {state.dims} vs {target.dims}")
    rho, sigma = state.rho, target.rho
    evals, evecs = np.linalg.eigh(rho)
    sqrt_rho = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    m = sqrt_rho @ sigma @ sqrt_rho
    m_evals = np.clip(np.linalg.eigvalsh(m), 0.0, None)
    if m_evals[-1] > 0:  # drop pure round-off modes: sqrt amplifies them
        m_evals[m_evals < 1e-13 * m_evals[-1]] = 0.0
    f = float(np.sum(np.sqrt(m_evals)) ** 2)
    return min(max(f, 0.0), 1.0)
