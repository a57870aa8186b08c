"""Exact free-fermion engine for charge measurements on the lattice.

Ground states of the quadratic chain

    H = -1/2 sum_j (c+_j c_{j+1} + kappa c+_j c+_{j+1} + h.c. + 2 h c+_j c_j)

are Gaussian, so every flux-dressed replica trace reduces to determinants
of the two-point Nambu correlation matrix. Two presets are wired to
infinite-chain kernels: the half-filled tight-binding chain
(kappa = h = 0, the U(1) lattice realization of the compact boson at
K = 1) and the critical Ising chain (kappa = h = 1). Arbitrary couplings
are supported through finite open chains, which also feed the brute-force
exact-diagonalization oracle used to gate every formula on <= 12 sites.

Conventions: doubled operators are stacked particle-first,
psi = (c_0 .. c_{m-1}, c+_0 .. c+_{m-1}); the correlation matrix is
Gamma[a, b] = 2 <psi+_a psi_b> - delta. A Gaussian operator written as
exp((1/2) psi+ H psi) then has Gamma = tanh(H/2)^T and trace
sqrt(det(1 + e^H)), and all algebra below is phrased in D = Gamma^T so
that kernels multiply in operator order. Division-free Mobius forms are
used throughout: exactly occupied or empty modes (present in the paired
presets, where Majorana dimers decouple) never hit a singular inverse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.linalg import eigsh

from opens.errors import BranchTrackingError, DomainError, SingularMatrixError

CLIP = 1e-12


@dataclass(frozen=True)
class LatticeModel:
    """Pairing strength kappa and field h of the quadratic chain."""

    kappa: float = 0.0
    h_field: float = 0.0

    @property
    def is_tight_binding(self) -> bool:
        return self.kappa == 0.0 and self.h_field == 0.0

    @property
    def is_ising(self) -> bool:
        return self.kappa == 1.0 and self.h_field == 1.0

    @property
    def is_preset(self) -> bool:
        return self.is_tight_binding or self.is_ising


TIGHT_BINDING = LatticeModel(0.0, 0.0)
ISING = LatticeModel(1.0, 1.0)


@dataclass(frozen=True)
class SubsystemLayout:
    """ell1 probed sites, d traced gap sites, ell2 measured sites."""

    ell1: int
    d: int
    ell2: int

    def __post_init__(self):
        if self.ell1 < 1 or self.ell2 < 1 or self.d < 0:
            raise ValueError("need ell1 >= 1, ell2 >= 1, d >= 0")

    @property
    def window(self) -> int:
        return self.ell1 + self.d + self.ell2

    @property
    def sites_A(self):
        return list(range(self.ell1))

    @property
    def sites_B(self):
        return list(range(self.ell1 + self.d, self.ell1 + self.d + self.ell2))


class NambuCorrelationMatrix:
    """Two-point matrix over doubled indices for a Gaussian fermion state."""

    def __init__(self, gamma: np.ndarray):
        gamma = np.asarray(gamma)
        m2 = gamma.shape[0]
        if gamma.ndim != 2 or gamma.shape[1] != m2 or m2 % 2:
            raise ValueError(f"need a 2m x 2m matrix, got shape {gamma.shape}")
        herm = np.abs(gamma - gamma.conj().T).max()
        if herm > 1e-10:
            raise ValueError(f"correlation matrix not Hermitian, residue {herm:.2e}")
        ev = np.linalg.eigvalsh(gamma)
        if ev.min() < -1.0 - 1e-10 or ev.max() > 1.0 + 1e-10:
            raise ValueError(f"eigenvalues outside [-1, 1]: [{ev.min()}, {ev.max()}]")
        self.gamma = gamma
        self.m = m2 // 2

    def nambu_swap(self) -> np.ndarray:
        """Particle-hole conjugate Sx Gamma^T Sx; equals -Gamma."""
        m = self.m
        sw = np.block(
            [[np.zeros((m, m)), np.eye(m)], [np.eye(m), np.zeros((m, m))]]
        )
        return sw @ self.gamma.T @ sw

    def restrict(self, sites) -> "NambuCorrelationMatrix":
        """Correlations of the subsystem on the given window positions."""
        idx = np.r_[np.asarray(sites), np.asarray(sites) + self.m]
        return NambuCorrelationMatrix(self.gamma[np.ix_(idx, idx)])

    def dmatrix(self, clip: float = CLIP) -> np.ndarray:
        """Transposed, eigenvalue-clipped copy used by the kernel algebra."""
        d = self.gamma.T.copy()
        w, v = np.linalg.eigh(d)
        if np.abs(w).max() <= 1.0 - clip:
            return d
        w = np.clip(w, -1.0 + clip, 1.0 - clip)
        return (v * w) @ v.conj().T

    def renyi_entropy(self, n: float) -> float:
        """Renyi entropy of the Gaussian state from the mode occupations."""
        nu = np.linalg.eigvalsh(self.gamma)
        p = np.clip((1.0 + nu) / 2.0, 1e-300, 1.0)
        q = np.clip((1.0 - nu) / 2.0, 1e-300, 1.0)
        if n == 1:
            s = -(p * np.log(p) + q * np.log(q))
        else:
            s = np.log(p**n + q**n) / (1.0 - n)
        return 0.5 * float(np.sum(s))  # doubled indices count each mode twice


# ---------------------------------------------------------------------------
# correlation kernels


def tight_binding_c(r: int) -> float:
    """<c+_j c_{j+r}> of the half-filled infinite chain, sin(pi r/2)/(pi r)."""
    r = abs(int(r))
    if r == 0:
        return 0.5
    if r % 2 == 0:
        return 0.0
    return (-1.0) ** ((r - 1) // 2) / (np.pi * r)


def ising_c(r: int) -> float:
    """<c+_j c_{j+r}> of the critical Ising chain (kappa = h = 1)."""
    base = 0.5 if r == 0 else 0.0
    return base + (-1.0) ** (abs(r) + 1) / (np.pi * (4.0 * r * r - 1.0))


def ising_f(r: int) -> float:
    """<c_j c_{j+r}> of the critical Ising chain; odd in r."""
    if r == 0:
        return 0.0
    return (-1.0) ** r * 2.0 * r / (np.pi * (4.0 * r * r - 1.0))


def _gamma_from_cf(C: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Assemble the doubled matrix from <c+c> and <cc> blocks (real case)."""
    m = C.shape[0]
    Fdag = -F  # <c+_j c+_l> = F[l, j] = -F[j, l] for real antisymmetric F
    return np.block(
        [[2 * C - np.eye(m), 2 * Fdag], [2 * F, np.eye(m) - 2 * C.T]]
    )


def ground_state_correlations(model: LatticeModel, layout: SubsystemLayout) -> NambuCorrelationMatrix:
    """Infinite-chain ground-state correlations on the A u B window.

    The gap between A and B is traced out, which for Gaussian states just
    means its rows and columns are dropped. Only the two preset models
    carry infinite-volume kernels; other couplings go through
    ``finite_chain_correlations``.
    """
    if not model.is_preset:
        raise DomainError(
            "infinite-chain kernels exist only for the tight-binding and "
            "critical Ising presets; use finite_chain_correlations instead"
        )
    sites = np.array(layout.sites_A + layout.sites_B)
    rdiff = sites[None, :] - sites[:, None]
    if model.is_tight_binding:
        C = np.vectorize(tight_binding_c)(rdiff)
        F = np.zeros_like(C)
    else:
        C = np.vectorize(ising_c)(rdiff)
        F = np.vectorize(ising_f)(rdiff)
    return NambuCorrelationMatrix(_gamma_from_cf(C, F))


def finite_chain_correlations(model: LatticeModel, n_sites: int) -> NambuCorrelationMatrix:
    """Ground-state correlations of the open chain from its BdG modes.

    Works for any (kappa, h); the doubled correlation matrix is
    2 P - 1 with P the projector onto negative-energy quasiparticle
    eigenvectors in the (c, c+) basis.
    """
    N = n_sites
    T = np.zeros((N, N))
    D = np.zeros((N, N))
    for j in range(N - 1):
        T[j, j + 1] = T[j + 1, j] = -0.5
        D[j, j + 1] = -0.5 * model.kappa
        D[j + 1, j] = 0.5 * model.kappa
    T -= model.h_field * np.eye(N)
    HB = np.block([[T, D], [-D, -T]])
    w, V = np.linalg.eigh(HB)
    if np.any(np.abs(w) < 1e-12):
        raise SingularMatrixError(
            "zero mode in the single-particle spectrum: ground state degenerate"
        )
    occ = V[:, w < 0]
    P = occ @ occ.T
    return NambuCorrelationMatrix(2 * P - np.eye(2 * N))


def ring_correlations(model: LatticeModel, n_sites: int, rmax: int):
    """(C(r), F(r)) for r = 0..rmax on an antiperiodic ring of n_sites.

    Momentum sums over k = pi (2m + 1) / N converge to the infinite-chain
    kernels like 1/N^2 and serve as the finite-size validation of the
    preset kernels.
    """
    N = n_sites
    ks = np.pi * (2 * np.arange(N) + 1 - N) / N
    eps = -(np.cos(ks) + model.h_field)
    delta = model.kappa * np.sin(ks)  # sign anchored to the open-chain ED
    E = np.hypot(eps, delta)
    nk = 0.5 * (1.0 - eps / E)            # <c+_k c_k>
    fk = -1j * delta / (2.0 * E)          # <c_k c_{-k}>
    rs = np.arange(rmax + 1)
    phase = np.exp(-1j * np.outer(rs, ks))
    C = np.real(phase @ nk) / N
    F = np.real(phase @ fk) / N
    return C, F


# ---------------------------------------------------------------------------
# Gaussian determinant algebra


def gaussian_trace(H: np.ndarray, steps: int = 33, max_refine: int = 6) -> complex:
    """Trace of the Gaussian operator exp((1/2) psi+ H psi).

    Equals sqrt(det(1 + e^H)) with the square-root branch fixed by
    continuity along the homotopy s H, s in [0, 1], starting from the
    value 2^m at H = 0. The grid is refined until consecutive phase
    increments stay below pi/2; failure to settle raises
    ``BranchTrackingError``.
    """
    H = np.asarray(H, dtype=complex)
    m2 = H.shape[0]
    if H.ndim != 2 or H.shape[1] != m2 or m2 % 2:
        raise ValueError(f"need a 2m x 2m matrix, got {H.shape}")
    for _ in range(max_refine):
        ss = np.linspace(0.0, 1.0, steps)
        phases, mods = [], []
        ok = True
        for s in ss:
            mat = np.eye(m2) + expm(s * H)
            sign, logabs = np.linalg.slogdet(mat)
            if sign == 0 or not np.isfinite(logabs):
                ok = False
                break
            phases.append(np.angle(sign))
            mods.append(logabs)
        if ok:
            ph = np.unwrap(phases)
            if np.abs(np.diff(ph)).max() < 0.5 * np.pi:
                return np.exp(0.5 * (mods[-1] + 1j * ph[-1]))
        steps = 2 * steps - 1
    raise BranchTrackingError(
        "determinant phase winds too fast along the homotopy; "
        "the square-root branch could not be resolved"
    )


def _sqrtdet_values(mats):
    """sqrt(det M) along the path by sign continuation of the values.

    The square root of each determinant is fixed against a secant
    prediction of the previous values, which follows the trace smoothly
    through its (simple) zeros, where the sign genuinely flips and any
    phase-unwrapping scheme would have to resolve an arbitrarily narrow
    2 pi winding. The first determinant must be real positive (the
    normalized zero-flux point). Raises when the +- choice is ambiguous,
    so the caller can refine the path.
    """
    sign0, logabs0 = np.linalg.slogdet(mats[0])
    if abs(np.angle(sign0)) > 1e-9 or not np.isfinite(logabs0):
        raise BranchTrackingError("path must start at a positive determinant")
    vals = [complex(np.exp(0.5 * logabs0))]
    for k, M in enumerate(mats[1:], start=1):
        sign, logabs = np.linalg.slogdet(M)
        if sign == 0 or not np.isfinite(logabs):
            # exact zero on a grid point: the value is zero, continuation
            # restarts through the secant of the neighbors
            vals.append(0.0 + 0.0j)
            continue
        cand = np.exp(0.5 * (logabs + 1j * np.angle(sign)))
        pred = vals[-1] if k == 1 else 2.0 * vals[-1] - vals[-2]
        d_plus, d_minus = abs(cand - pred), abs(-cand - pred)
        pick = cand if d_plus <= d_minus else -cand
        local = max(abs(vals[-1]), abs(vals[-2]) if k > 1 else 0.0)
        if abs(cand) > 0.05 * local:
            # the sign matters here: demand a resolved step and a clear
            # margin between the two branches
            if min(d_plus, d_minus) > 0.25 * (abs(cand) + local) or max(
                d_plus, d_minus
            ) < 3.0 * min(d_plus, d_minus):
                raise BranchTrackingError("ambiguous square-root branch; refine the path")
        vals.append(pick)
    return vals


def _logsqrtdet_path(mats) -> complex:
    """log sqrt(det) of the last path entry, sign-continued from the first."""
    v = _sqrtdet_values(mats)[-1]
    if v == 0.0:
        raise BranchTrackingError("determinant vanishes at the path endpoint")
    return complex(np.log(v))


def _logsqrtdet_adaptive(make_mats, steps: int, max_refine: int = 6) -> complex:
    """Sign-continued log sqrt(det) with automatic path refinement."""
    for _ in range(max_refine):
        try:
            return _logsqrtdet_path(make_mats(steps))
        except BranchTrackingError:
            steps = 2 * steps - 1
    return _logsqrtdet_path(make_mats(steps))


class GaussianWindow:
    """Flux-determinant algebra on an A u B window of a Gaussian state.

    Wraps the window correlations as D = Gamma^T and exposes the dressed
    correlation matrices, flux traces and replica products, everything
    phase-tracked along a scaled-flux homotopy.
    """

    def __init__(self, corr: NambuCorrelationMatrix, n_a: int, n_b: int, steps: int = 33):
        if corr.m != n_a + n_b:
            raise ValueError(f"window has {corr.m} sites, layout wants {n_a + n_b}")
        self.corr = corr
        self.n_a = n_a
        self.n_b = n_b
        self.w = corr.m
        self.D = corr.dmatrix()
        self.Ip = np.eye(2 * self.w) + self.D
        self.Im = np.eye(2 * self.w) - self.D
        self.idx_a = np.r_[np.arange(n_a), np.arange(n_a) + self.w]
        self.steps = steps

    def flux_diag(self, gamma: float) -> np.ndarray:
        """Kernel of e^{i gamma (Q_B - ell2/2)} in the doubled basis."""
        d = np.ones(2 * self.w, dtype=complex)
        pos = np.arange(self.n_a, self.w)
        d[pos] = np.exp(1j * gamma)
        d[pos + self.w] = np.exp(-1j * gamma)
        return d

    def log_flux_trace(self, gamma: float) -> complex:
        """log Tr(rho_AB e^{i gamma Q_B}), branch tracked from gamma = 0.

        If the determinant vanishes at an interior point of the straight
        flux path (exact zeros occur, e.g. at gamma = pi for half-filled
        windows with an odd measured interval), the path detours into
        complex flux; the endpoints are untouched, so the value is exact.
        """

        def mats_for(bump):
            def mats(steps):
                ss = np.linspace(0.0, 1.0, steps)
                out = []
                for s in ss:
                    z = gamma * (s - 1j * bump * np.sin(np.pi * s))
                    out.append((self.Im + self.Ip * self.flux_diag(z)[None, :]) / 2.0)
                return out

            return mats

        last_exc = None
        for bump in (0.0, 0.4, 0.8, 0.2):
            try:
                return (
                    1j * gamma * self.n_b / 2.0
                    + _logsqrtdet_adaptive(mats_for(bump), self.steps)
                )
            except BranchTrackingError as exc:
                last_exc = exc
        raise last_exc

    def dressed_d_window(self, gamma: float) -> np.ndarray:
        """D-matrix of the normalized flux-dressed state on the window.

        Mobius form U^{-1} [U(1+D) - (1-D)][U(1+D) + (1-D)]^{-1} U, whose
        denominator stays well conditioned even at exactly pure modes.
        """
        u = self.flux_diag(gamma)
        num = self.Ip * u[:, None] - self.Im
        den = self.Ip * u[:, None] + self.Im
        dd = np.linalg.solve(den.T, num.T).T
        return (dd * u[None, :]) / u[:, None]

    def dressed_d_a(self, gamma: float) -> np.ndarray:
        return self.dressed_d_window(gamma)[np.ix_(self.idx_a, self.idx_a)]

    def log_replica_product(self, gammas) -> complex:
        """log Tr_A prod_j rho_hat_{A, gamma_j} of the normalized dressed states.

        Pairwise composition: each step multiplies the running Gaussian by
        the next one, picking up sqrt(det((1 + D D')/2)) and updating
        D -> 1 - (1 - D')(1 + D D')^{-1}(1 - D). Composition determinants
        are phase-tracked jointly along the scaled-flux path.
        """
        gammas = list(gammas)
        if len(gammas) == 1:
            return 0.0 + 0.0j
        ia = np.eye(2 * self.n_a)

        def comp_mats(steps, bump):
            per_comp = [[] for _ in range(len(gammas) - 1)]
            for s in np.linspace(0.0, 1.0, steps):
                scale = s - 1j * bump * np.sin(np.pi * s)
                dc = self.dressed_d_a(scale * gammas[0])
                for k, g in enumerate(gammas[1:]):
                    dn = self.dressed_d_a(scale * g)
                    mid = (ia + dc @ dn) / 2.0
                    per_comp[k].append(mid)
                    dc = ia - (ia - dn) @ np.linalg.solve(2.0 * mid, ia - dc)
            return per_comp

        last_exc = None
        for bump in (0.0, 0.4, 0.8, 0.2):
            steps = self.steps
            for _ in range(5):
                try:
                    return sum(_logsqrtdet_path(p) for p in comp_mats(steps, bump))
                except (BranchTrackingError, np.linalg.LinAlgError) as exc:
                    steps, last_exc = 2 * steps - 1, exc
        raise BranchTrackingError(f"replica product path could not be resolved: {last_exc}")

    def log_renyi_norm(self, n: int) -> float:
        """log Tr rho_A^n from the undressed mode occupations."""
        da = self.D[np.ix_(self.idx_a, self.idx_a)]
        nu = np.linalg.eigvalsh((da + da.conj().T) / 2.0)
        return 0.5 * float(
            np.sum(np.log(((1 + nu) / 2.0) ** n + ((1 - nu) / 2.0) ** n))
        )

    def pair_overlap(self, d1: np.ndarray, d2: np.ndarray) -> complex:
        """Tr(rho_hat(d1) rho_hat(d2)) = sqrt(det((1 + d1 d2)/2))."""
        mid = (np.eye(2 * self.n_a) + d1 @ d2) / 2.0
        sign, logabs = np.linalg.slogdet(mid)
        return np.exp(0.5 * (logabs + 1j * np.angle(sign)))


def _window_for(model_or_corr, layout: SubsystemLayout, n_sites: int | None = None) -> GaussianWindow:
    if isinstance(model_or_corr, NambuCorrelationMatrix):
        corr = model_or_corr
    elif n_sites is not None:
        full = finite_chain_correlations(model_or_corr, n_sites)
        corr = full.restrict(layout.sites_A + layout.sites_B)
    else:
        corr = ground_state_correlations(model_or_corr, layout)
    return GaussianWindow(corr, layout.ell1, layout.ell2)


def flux_correlation_matrix(corr: NambuCorrelationMatrix, gamma: float, layout: SubsystemLayout):
    """Dressed correlation matrix and the flux partition-function log ratio.

    Returns (Gamma^gamma, log of det(1 + K e^{i gamma n_B}) / det(1 + K))
    where K is the entanglement kernel of rho_AB; in the particle-first
    ordering used here K = (1 + Gamma^T)(1 - Gamma^T)^{-1}, with the
    correlation eigenvalues clipped away from +-1 before any kernel is
    formed. No matrix logarithm is ever taken: the dressed state is
    carried as a ratio matrix throughout. The physical flux trace is
    Tr(rho_AB e^{i gamma Q_B}) = e^{i gamma ell2 / 2 + logratio / 2}.
    """
    win = GaussianWindow(corr, layout.ell1, layout.ell2)
    dd = win.dressed_d_window(gamma)
    log_ratio = 2.0 * (win.log_flux_trace(gamma) - 1j * gamma * win.n_b / 2.0)
    return dd.T, log_ratio


def charged_moments_lattice(model_or_corr, layout: SubsystemLayout, gammas,
                            n_sites: int | None = None) -> complex:
    """Normalized flux-dressed replica trace Z_n(gamma_1..gamma_n) / Z_n.

    Tr_A prod_j Tr_B(rho_AB e^{i gamma_j Q_B}) over Tr rho_A^n. Accepts a
    preset model (infinite-chain kernels), a model plus ``n_sites`` (open
    finite chain), or an explicit window ``NambuCorrelationMatrix``.
    Exactly 1 at zero flux.
    """
    gammas = [float(g) for g in np.atleast_1d(gammas)]
    win = _window_for(model_or_corr, layout, n_sites)
    log_num = sum(win.log_flux_trace(g) for g in gammas)
    log_num += win.log_replica_product(gammas)
    log_den = win.log_renyi_norm(len(gammas))
    return complex(np.exp(log_num - log_den))


def ising_gamma_rescaling(gamma: float, divide_by_pi: bool = False) -> float:
    """Flux rescaling mapping Ising charged moments onto the Gaussian form.

    arctanh(tan(gamma / 2)), approximately gamma / 2 at small flux. The
    ``divide_by_pi`` variant returns arctanh(tan(gamma/2)) / pi, the
    normalization under which the rescaled flux feeds the h_s = 1 flat
    integral directly; lattice fits select this convention.
    """
    t = np.tan(gamma / 2.0)
    if np.abs(t) >= 1.0:
        raise DomainError(f"|tan(gamma/2)| = {abs(t):.3f} >= 1: rescaling undefined")
    u = np.arctanh(t)
    return float(u / np.pi) if divide_by_pi else float(u)


def ising_log_coefficient_prediction(gammas) -> float:
    """Predicted log(ell2) coefficient of the Ising charged moments.

    Plugging the h_s = 1 flat-interval integral (universal part
    -2 log ell2 per replica diagonal) into the Gaussian quadratic form
    with rescaled fluxes gives sum_i (arctanh(tan(gamma_i/2)) / pi)^2.
    """
    return float(sum(ising_gamma_rescaling(g, divide_by_pi=True) ** 2 for g in np.atleast_1d(gammas)))


def charge_sector_table(model_or_corr, layout: SubsystemLayout, n_sites: int | None = None):
    """Outcome probabilities p_q and pairwise overlaps R_{q1 q2}.

    The charge of B takes integer values q = 0..ell2, so the gamma
    integrals collapse to exact discrete Fourier sums over
    gamma_m = 2 pi m / (ell2 + 1). Returns (p, R, raw) with
    raw[q1, q2] = Tr(rho~_{A,q1} rho~_{A,q2}) = p_{q1} p_{q2} R_{q1 q2}.
    """
    win = _window_for(model_or_corr, layout, n_sites)
    nq = layout.ell2 + 1
    # any nq equally spaced fluxes mod 2 pi invert the integer spectrum
    # exactly; the half-spacing offset (odd ell2) keeps gamma = pi, where
    # half-filled windows have an exact zero, off the grid
    offset = 0.5 if layout.ell2 % 2 else 0.0
    gs = 2.0 * np.pi * (np.arange(nq) + offset) / nq
    traces = np.array([np.exp(win.log_flux_trace(g)) for g in gs])
    phases = np.exp(-1j * gs[None, :] * np.arange(nq)[:, None])  # [q, m]
    p = (phases @ traces) / nq
    if np.abs(p.imag).max() > 1e-9:
        raise ValueError(f"charge probabilities not real: {np.abs(p.imag).max():.2e}")
    p = p.real
    # fluxes where the trace vanishes contribute nothing; their normalized
    # dressed state does not exist and is never needed. Pair overlaps are
    # branch-tracked along the joint flux path like any replica product.
    live = np.abs(traces) > 1e-13
    weighted = np.zeros((nq, nq), dtype=complex)
    for i in range(nq):
        if not live[i]:
            continue
        for j in range(i, nq):
            if not live[j]:
                continue
            ov = np.exp(win.log_replica_product([gs[i], gs[j]]))
            weighted[i, j] = weighted[j, i] = ov * traces[i] * traces[j]
    raw = (phases @ weighted @ phases.T) / nq**2
    if np.abs(raw.imag).max() > 1e-9:
        raise ValueError("sector overlaps not real")
    raw = raw.real
    with np.errstate(divide="ignore", invalid="ignore"):
        R = raw / np.outer(p, p)
    return p, R, raw


def post_measurement_overlap(model_or_corr, layout: SubsystemLayout, q1: int, q2: int,
                             n_sites: int | None = None) -> float:
    """Overlap R_{q1 q2} = Tr(rho_{A,q1} rho_{A,q2}) of two outcome states."""
    if not (0 <= q1 <= layout.ell2 and 0 <= q2 <= layout.ell2):
        raise ValueError(f"charges must lie in 0..{layout.ell2}")
    _, R, _ = charge_sector_table(model_or_corr, layout, n_sites)
    return float(R[q1, q2])


# ---------------------------------------------------------------------------
# exact-diagonalization oracle


def fock_operators(n_sites: int):
    """Dense annihilation matrices with Jordan-Wigner signs (small n only)."""
    dim = 1 << n_sites
    if dim > 4096:
        raise ValueError("dense Fock operators limited to 12 sites")
    ops = []
    for j in range(n_sites):
        rows, cols, vals = [], [], []
        for s in range(dim):
            if (s >> j) & 1:
                sgn = (-1) ** bin(s & ((1 << j) - 1)).count("1")
                rows.append(s ^ (1 << j))
                cols.append(s)
                vals.append(float(sgn))
        m = np.zeros((dim, dim))
        m[rows, cols] = vals
        ops.append(m)
    return ops


def quadratic_fock_operator(H: np.ndarray) -> np.ndarray:
    """(1/2) psi+ H psi as a dense Fock-space matrix (for oracle checks)."""
    H = np.asarray(H, dtype=complex)
    m = H.shape[0] // 2
    cs = fock_operators(m)
    ops = cs + [c.conj().T for c in cs]
    dim = 1 << m
    out = np.zeros((dim, dim), dtype=complex)
    for a in range(2 * m):
        for b in range(2 * m):
            if H[a, b] != 0:
                out += 0.5 * H[a, b] * (ops[a].conj().T @ ops[b])
    return out


class EDOracle:
    """Brute-force many-body reference on chains of up to 12 sites.

    Builds the sparse Hamiltonian in the 2^N Fock basis, finds the ground
    state, and evaluates charged moments, outcome probabilities, sector
    overlaps and entropies directly from projectors, with no Gaussian
    machinery anywhere.
    """

    MAX_DIM = 4096

    def __init__(self, model: LatticeModel, n_sites: int):
        if (1 << n_sites) > self.MAX_DIM:
            raise ValueError(f"Fock dimension 2^{n_sites} exceeds {self.MAX_DIM}")
        self.model = model
        self.n = n_sites
        self.psi, self.gap = self._ground_state()

    def _hamiltonian(self) -> sparse.csr_matrix:
        N, kappa, h = self.n, self.model.kappa, self.model.h_field
        dim = 1 << N
        rows, cols, vals = [], [], []
        for s in range(dim):
            diag = 0.0
            for j in range(N):
                if (s >> j) & 1:
                    diag -= h
            if diag:
                rows.append(s); cols.append(s); vals.append(diag)
            for j in range(N - 1):
                b1, b2 = (s >> j) & 1, (s >> (j + 1)) & 1
                if b1 != b2:  # hopping c+_j c_{j+1} + h.c.
                    t = s ^ (1 << j) ^ (1 << (j + 1))
                    rows.append(t); cols.append(s); vals.append(-0.5)
                if kappa and b1 == b2:  # pairing c+_j c+_{j+1} + h.c.
                    # adjacent sites, no string in between: both directions
                    # carry the bare matrix element
                    t = s ^ (1 << j) ^ (1 << (j + 1))
                    rows.append(t); cols.append(s); vals.append(-0.5 * kappa)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(dim, dim))

    def _ground_state(self):
        H = self._hamiltonian()
        if H.shape[0] <= 512:
            w, v = np.linalg.eigh(H.toarray())
            gap = w[1] - w[0]
            psi = v[:, 0]
        else:
            w, v = eigsh(H, k=2, which="SA")
            order = np.argsort(w)
            gap = w[order[1]] - w[order[0]]
            psi = v[:, order[0]]
        if gap < 1e-10:
            raise SingularMatrixError(f"ground state degenerate, gap = {gap:.2e}")
        return psi, float(gap)

    def _reshape(self, a_sites):
        """State as a matrix V[a, rest] with fermionic reorder signs."""
        N = self.n
        a_sites = list(a_sites)
        rest = [j for j in range(N) if j not in a_sites]
        order = {site: k for k, site in enumerate(a_sites + rest)}
        dim = 1 << N
        V = np.zeros((1 << len(a_sites), 1 << len(rest)))
        for s in range(dim):
            if self.psi[s] == 0.0:
                continue
            ai = 0
            for k, j in enumerate(a_sites):
                ai |= ((s >> j) & 1) << k
            ri = 0
            for k, j in enumerate(rest):
                ri |= ((s >> j) & 1) << k
            occ = [order[j] for j in range(N) if (s >> j) & 1]
            sgn, lst = 1, occ[:]
            for i in range(len(lst)):
                for jj in range(len(lst) - 1 - i):
                    if lst[jj] > lst[jj + 1]:
                        lst[jj], lst[jj + 1] = lst[jj + 1], lst[jj]
                        sgn = -sgn
            V[ai, ri] = sgn * self.psi[s]
        return V, rest

    def _q_of_rest(self, rest, b_sites):
        pos = [rest.index(j) for j in b_sites]
        nr = 1 << len(rest)
        q = np.zeros(nr, dtype=int)
        for r in range(nr):
            q[r] = sum((r >> k) & 1 for k in pos)
        return q

    def charged_moment(self, a_sites, b_sites, gammas) -> complex:
        """Tr_A prod_j Tr_rest(rho e^{i gamma_j Q_B}) / Tr rho_A^n."""
        V, rest = self._reshape(a_sites)
        q = self._q_of_rest(rest, b_sites)
        num = np.eye(V.shape[0], dtype=complex)
        for g in np.atleast_1d(gammas):
            num = num @ (V * np.exp(1j * g * q)[None, :]) @ V.conj().T
        rho_a = V @ V.conj().T
        den = np.linalg.matrix_power(rho_a, len(np.atleast_1d(gammas)))
        return complex(np.trace(num) / np.trace(den))

    def charge_probabilities(self, b_sites) -> np.ndarray:
        qfull = np.zeros(1 << self.n, dtype=int)
        for j in b_sites:
            qfull += (np.arange(1 << self.n) >> j) & 1
        p = np.zeros(len(b_sites) + 1)
        np.add.at(p, qfull, np.abs(self.psi) ** 2)
        return p

    def sector_states(self, a_sites, b_sites):
        """Unnormalized post-measurement states rho~_{A,q} = Tr_rest Pi_q rho Pi_q."""
        V, rest = self._reshape(a_sites)
        q = self._q_of_rest(rest, b_sites)
        out = {}
        for qv in range(len(b_sites) + 1):
            mask = (q == qv).astype(float)
            out[qv] = (V * mask[None, :]) @ V.conj().T
        return out

    def sector_overlaps(self, a_sites, b_sites):
        """(p, R, raw) as in the determinant route, from exact projectors."""
        rhos = self.sector_states(a_sites, b_sites)
        nq = len(b_sites) + 1
        p = np.array([np.trace(rhos[q]).real for q in range(nq)])
        raw = np.empty((nq, nq))
        for i in range(nq):
            for j in range(i, nq):
                raw[i, j] = raw[j, i] = np.real(np.trace(rhos[i] @ rhos[j]))
        with np.errstate(divide="ignore", invalid="ignore"):
            R = raw / np.outer(p, p)
        return p, R, raw

    def mie(self, a_sites, b_sites, n: int = 1) -> float:
        """Outcome-probability-weighted Renyi entropy sum_q p_q S_A^(n)(q)."""
        rhos = self.sector_states(a_sites, b_sites)
        total = 0.0
        for q, rho in rhos.items():
            p = np.trace(rho).real
            if p < 1e-14:
                continue
            lam = np.linalg.eigvalsh(rho / p)
            lam = lam[lam > 1e-14]
            if n == 1:
                s = -np.sum(lam * np.log(lam))
            else:
                s = np.log(np.sum(lam**n)) / (1.0 - n)
            total += p * s
        return float(total)

    def renyi_entropy(self, a_sites, n: int = 1) -> float:
        V, _ = self._reshape(a_sites)
        lam = np.linalg.eigvalsh(V @ V.conj().T)
        lam = lam[lam > 1e-14]
        if n == 1:
            return float(-np.sum(lam * np.log(lam)))
        return float(np.log(np.sum(lam**n)) / (1.0 - n))

    def correlation_matrix(self) -> NambuCorrelationMatrix:
        """Doubled two-point matrix measured directly on the ground state."""
        cs = fock_operators(self.n)
        ops = cs + [c.conj().T for c in cs]
        m2 = 2 * self.n
        P = np.zeros((m2, m2), dtype=complex)
        for a in range(m2):
            va = ops[a] @ self.psi
            for b in range(m2):
                P[a, b] = np.vdot(va, ops[b] @ self.psi)
        return NambuCorrelationMatrix(2 * P - np.eye(m2))
