"""The unified skew-normal distribution SUN_{p,s}.

Parametrization (Arellano-Valle & Azzalini 2006): location ``xi`` (p),
scale matrix ``omega`` (p x p, SPD) with correlation split
``omega = d_omega @ omega_bar @ d_omega``, skewness matrix ``delta``
(p x s), latent truncation vector ``gamma`` (s) and latent scale matrix
``big_gamma`` (s x s).  The density is

    p(z) = phi_p(z - xi; omega)
           * Phi_s(gamma + delta' obar^-1 dO^-1 (z - xi);
                   big_gamma - delta' obar^-1 delta)
           / Phi_s(gamma; big_gamma)

and is well defined iff the block matrix
``M = [[big_gamma, delta'], [delta, omega_bar]]`` is positive definite.
Equivalently, with ``(u0, u1) ~ N(0, M)``,

    z = xi + d_omega @ (u1 | u0 + gamma > 0)

which is the representation used for sampling and for deriving the closure
operations.  ``big_gamma`` is not required to have a unit diagonal; the
density above is normalized for any SPD ``big_gamma``.

All Phi_s terms are estimated with the lattice rule of
:mod:`skewgp.orthant` in the log domain, with a shared seed for the
numerator and the normalizing constant so that the ratio is exact whenever
the two arguments coincide (e.g. ``delta = 0``).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .exceptions import ValidationError
from .linalg import chol_logdet, chol_solve, jittered_cholesky, symmetrize
from .orthant import CdfRequest, mvn_cdf
from .truncated import LinearConstraints, sample_truncated

__all__ = [
    "SunParams",
    "SunDiagnostics",
    "validate",
    "log_pdf",
    "marginalize",
    "condition",
    "sample",
]

# latent coordinates with gamma above this are unconstrained in practice
# (P(u > -8) ~ 1 - 6e-16) and are sampled as plain Gaussians
GAMMA_INACTIVE = 8.0


@dataclass(frozen=True)
class SunParams:
    """Parameter set of a SUN_{p,s} distribution (immutable)."""

    xi: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    big_gamma: np.ndarray
    omega_bar: np.ndarray = field(init=False, repr=False)
    d_omega: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        omega = np.asarray(self.omega, dtype=float)
        p = xi.shape[0]
        delta = np.asarray(self.delta, dtype=float).reshape(p, -1)
        s = delta.shape[1]
        gamma = np.asarray(self.gamma, dtype=float).reshape(s)
        big_gamma = np.asarray(self.big_gamma, dtype=float).reshape(s, s)

        if omega.shape != (p, p):
            raise ValidationError(
                f"omega shape {omega.shape} does not match location length {p}"
            )
        for name, arr in [("xi", xi), ("omega", omega), ("delta", delta),
                          ("gamma", gamma), ("big_gamma", big_gamma)]:
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
        diag = np.diag(omega)
        if np.any(diag <= 0.0):
            raise ValidationError("omega diagonal must be strictly positive")

        d = np.sqrt(diag)
        obar = omega / (d[:, None] * d[None, :])
        np.fill_diagonal(obar, 1.0)

        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "omega", symmetrize(omega))
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "big_gamma", symmetrize(big_gamma))
        object.__setattr__(self, "omega_bar", obar)
        object.__setattr__(self, "d_omega", d)

    @property
    def p(self):
        return self.xi.shape[0]

    @property
    def s(self):
        return self.gamma.shape[0]

    def latent_block_matrix(self):
        """The (s+p) x (s+p) matrix M whose positive definiteness defines validity."""
        m = np.empty((self.s + self.p, self.s + self.p))
        m[: self.s, : self.s] = self.big_gamma
        m[: self.s, self.s :] = self.delta.T
        m[self.s :, : self.s] = self.delta
        m[self.s :, self.s :] = self.omega_bar
        return m

    def to_dict(self):
        return {
            "xi": self.xi.tolist(),
            "omega": self.omega.tolist(),
            "delta": self.delta.tolist(),
            "gamma": self.gamma.tolist(),
            "big_gamma": self.big_gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        p = len(d["xi"])
        return cls(
            xi=np.asarray(d["xi"], dtype=float),
            omega=np.asarray(d["omega"], dtype=float),
            delta=np.asarray(d["delta"], dtype=float).reshape(p, -1),
            gamma=np.asarray(d["gamma"], dtype=float),
            big_gamma=np.asarray(d["big_gamma"], dtype=float),
        )


@dataclass(frozen=True)
class SunDiagnostics:
    """Validity report; ``ok`` is False iff any invariant failed."""

    ok: bool
    messages: tuple
    min_eigenvalue: float

    def __bool__(self):
        return self.ok


def validate(params: SunParams, tol=1e-10) -> SunDiagnostics:
    """Check the SUN invariants, reporting diagnostics instead of raising.

    Verifies symmetry of the scale matrices, the unit diagonal of the
    derived correlation matrix, and positive definiteness of the latent
    block matrix M; on failure the smallest eigenvalue of M is reported.
    """
    messages = []
    scale = max(1.0, float(np.max(np.abs(params.omega))) if params.p else 1.0)
    if params.p and np.max(np.abs(params.omega - params.omega.T)) > tol * scale:
        messages.append("omega is not symmetric")
    if params.s:
        gscale = max(1.0, float(np.max(np.abs(params.big_gamma))))
        if np.max(np.abs(params.big_gamma - params.big_gamma.T)) > tol * gscale:
            messages.append("big_gamma is not symmetric")
    if params.p and np.max(np.abs(np.diag(params.omega_bar) - 1.0)) > tol:
        messages.append("omega_bar does not have a unit diagonal")

    m = params.latent_block_matrix()
    if m.shape[0] == 0:
        min_eig = np.inf
    else:
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig <= tol * max(1.0, float(np.max(np.abs(m)))):
            messages.append(
                f"latent block matrix M is not positive definite "
                f"(smallest eigenvalue {min_eig:.3e})"
            )
    return SunDiagnostics(ok=not messages, messages=tuple(messages),
                          min_eigenvalue=min_eig)


def _log_phi_p(params, centered):
    """Log density of N(0, omega) at the rows of ``centered``."""
    chol = jittered_cholesky(params.omega)
    sol = chol_solve(chol, centered.T)  # (p, k)
    quad = np.sum(centered.T * sol, axis=0)
    return -0.5 * (params.p * np.log(2.0 * np.pi) + chol_logdet(chol) + quad)


def log_pdf(params: SunParams, z, seed=0, n_points=5000, n_shifts=12):
    """Log density at ``z`` (a length-p vector or a (k, p) batch).

    The two ``Phi_s`` terms share one seed so their Monte Carlo noise is
    common; when the skewness vanishes they cancel exactly.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = z[None, :] if single else z
    if zz.shape[1] != params.p:
        raise ValidationError(
            f"z has dimension {zz.shape[1]}, expected {params.p}"
        )
    centered = zz - params.xi[None, :]
    out = _log_phi_p(params, centered)

    if params.s > 0:
        obar_chol = jittered_cholesky(params.omega_bar)
        w = chol_solve(obar_chol, params.delta)  # obar^-1 delta, (p, s)
        cond_cov = symmetrize(params.big_gamma - params.delta.T @ w)
        shift = (centered / params.d_omega[None, :]) @ w  # (k, s)
        args = params.gamma[None, :] + shift
        log_den = mvn_cdf(
            CdfRequest(upper=params.gamma, cov=params.big_gamma,
                       n_points=n_points, n_shifts=n_shifts, seed=seed)
        ).log_value
        for i in range(zz.shape[0]):
            log_num = mvn_cdf(
                CdfRequest(upper=args[i], cov=cond_cov,
                           n_points=n_points, n_shifts=n_shifts, seed=seed)
            ).log_value
            out[i] += log_num - log_den
    return float(out[0]) if single else out


def marginalize(params: SunParams, keep) -> SunParams:
    """Marginal over the coordinates in ``keep`` (order preserved).

    The marginal of a SUN is a SUN over the sub-blocks: slice ``xi``,
    ``omega`` and the rows of ``delta``; the latent part is unchanged.
    """
    keep = np.atleast_1d(np.asarray(keep, dtype=int))
    if keep.size == 0:
        raise ValidationError("keep must be a nonempty index set")
    if len(set(keep.tolist())) != keep.size:
        raise ValidationError("keep contains duplicate indices")
    if np.any(keep < 0) or np.any(keep >= params.p):
        raise ValidationError(f"keep indices out of range [0, {params.p})")
    return SunParams(
        xi=params.xi[keep],
        omega=params.omega[np.ix_(keep, keep)],
        delta=params.delta[keep, :],
        gamma=params.gamma,
        big_gamma=params.big_gamma,
    )


def condition(params: SunParams, observed, values) -> SunParams:
    """Distribution of the remaining coordinates given observed ones.

    The conditional of a SUN is again a SUN.  Writing 1 for the observed
    block and 2 for the kept block, with ``d1, d2`` the prior scale
    diagonals:

        xi'    = xi2 + omega21 omega11^-1 (v - xi1)
        omega' = omega22 - omega21 omega11^-1 omega12
        gamma' = gamma + delta1' obar11^-1 d1^-1 (v - xi1)
        Gamma' = big_gamma - delta1' obar11^-1 delta1
        delta' = d'^-1 d2 (delta2 - obar21 obar11^-1 delta1)

    where ``d' = sqrt(diag(omega'))`` rescales the skewness into the
    correlation form of the *conditional* scale matrix, which is what makes
    the factorization identity p(z2 | z1) p(z1) = p(z1, z2) hold exactly.
    A coordinate whose conditional variance collapses to zero (conditioning
    on itself) gets a zero skewness row: the distribution there is a point
    mass at ``xi'``.
    """
    obs = np.atleast_1d(np.asarray(observed, dtype=int))
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if obs.size == 0:
        raise ValidationError("observed must be a nonempty index set")
    if len(set(obs.tolist())) != obs.size:
        raise ValidationError("observed contains duplicate indices")
    if np.any(obs < 0) or np.any(obs >= params.p):
        raise ValidationError(f"observed indices out of range [0, {params.p})")
    if obs.size >= params.p:
        raise ValidationError("observed must be a proper subset of coordinates")
    if values.shape != obs.shape:
        raise ValidationError("values must match observed in length")

    rest = np.setdiff1d(np.arange(params.p), obs)
    o11 = params.omega[np.ix_(obs, obs)]
    o21 = params.omega[np.ix_(rest, obs)]
    o22 = params.omega[np.ix_(rest, rest)]
    ob11 = params.omega_bar[np.ix_(obs, obs)]
    ob21 = params.omega_bar[np.ix_(rest, obs)]
    d1 = params.d_omega[obs]
    d2 = params.d_omega[rest]
    delta1 = params.delta[obs, :]
    delta2 = params.delta[rest, :]
    innovation = values - params.xi[obs]

    chol11 = jittered_cholesky(o11)
    xi_c = params.xi[rest] + o21 @ chol_solve(chol11, innovation)
    omega_c = symmetrize(o22 - o21 @ chol_solve(chol11, o21.T))

    cholb11 = jittered_cholesky(ob11)
    b = chol_solve(cholb11, delta1)  # obar11^-1 delta1, (p1, s)
    gamma_c = params.gamma + b.T @ (innovation / d1)
    big_gamma_c = symmetrize(params.big_gamma - delta1.T @ b)
    delta_raw = delta2 - ob21 @ b

    dc = np.sqrt(np.maximum(np.diag(omega_c), 0.0))
    scale = np.zeros_like(dc)
    alive = dc > 1e-12 * np.maximum(d2, 1.0)
    scale[alive] = d2[alive] / dc[alive]
    delta_c = delta_raw * scale[:, None]
    # keep the conditional scale factorizable even for collapsed coordinates
    omega_c[~alive, :] = 0.0
    omega_c[:, ~alive] = 0.0
    omega_c[~alive, ~alive] = max(1e-12, 1e-12 * float(np.max(np.diag(o22))))

    return SunParams(xi=xi_c, omega=omega_c, delta=delta_c,
                     gamma=gamma_c, big_gamma=big_gamma_c)


def sample(params: SunParams, n, seed=0, thin=1):
    """Draw ``n`` samples via the additive representation.

    ``z = xi + d_omega (u0 + delta big_gamma^-1 u1)`` with
    ``u0 ~ N(0, omega_bar - delta big_gamma^-1 delta')`` and ``u1`` a
    component-wise-truncated Gaussian ``N(0, big_gamma)`` restricted to
    ``u1 > -gamma``, drawn rejection-free with lin-ess.  Latent coordinates
    with ``gamma > 8`` are effectively unconstrained and their constraint is
    dropped.  Deterministic given ``seed``; the ``u1`` draws are Markov-chain
    states (serially correlated).
    """
    if n < 1:
        raise ValidationError("n must be positive")
    ss = np.random.SeedSequence(seed).spawn(2)
    rng0 = np.random.default_rng(ss[0])

    if params.s == 0:
        chol = jittered_cholesky(params.omega)
        normals = rng0.standard_normal((n, params.p))
        return params.xi[None, :] + normals @ chol.T

    gchol = jittered_cholesky(params.big_gamma)
    w = chol_solve(gchol, params.delta.T)  # big_gamma^-1 delta', (s, p)
    resid = symmetrize(params.omega_bar - params.delta @ w)

    active = params.gamma <= GAMMA_INACTIVE
    if np.any(active):
        a = np.eye(params.s)[active, :]
        constraints = LinearConstraints(a=a, b=params.gamma[active])
        x0 = np.where(params.gamma > 1e-6, 0.0, -params.gamma + 1e-6)
        x0[~active] = 0.0
        u1 = sample_truncated(
            params.big_gamma, constraints, x0=x0, n_samples=n,
            seed=int(rng0.integers(2**63)), thin=thin,
        )
    else:
        u1 = np.random.default_rng(ss[1]).standard_normal((n, params.s)) @ gchol.T

    rchol = jittered_cholesky(resid)
    u0 = rng0.standard_normal((n, params.p)) @ rchol.T
    return params.xi[None, :] + (u0 + u1 @ w) * params.d_omega[None, :]
