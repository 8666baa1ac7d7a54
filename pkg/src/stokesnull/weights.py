"""Carleman weight families, stored in log-space.

Two families share the spatial factor e^{lambda eta}:

* alpha, xi built on ell (vanishing at t = 0 and t = T),
* beta, gamma built on ell_tilde (frozen at its maximum on [0, T/2]).

Starred / hatted members are the spatial max / min over the eta samples and
therefore depend on time only.  Every product that appears in an integral
(control weight, Carleman integrands, weighted-norm factors) is assembled
from these time-only members.

Exponents of the form s*alpha are clamped at ``exp_clamp``; any decaying
factor built from a clamped exponent is flushed to an exact zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import EtaField, TimeProfile

log = logging.getLogger(__name__)

ELL_POWER = 8


@dataclass(frozen=True)
class WeightParams:
    s: float
    lam: float = 1.0
    exp_clamp: float = 60.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if not self.lam >= 1:
            raise ValueError(f"lambda must be >= 1, got {self.lam}")
        if not self.exp_clamp > 0:
            raise ValueError(f"exp_clamp must be positive, got {self.exp_clamp}")


def _spatial_factors(eta: EtaField, lam: float):
    """Return (log numerator of alpha, lambda*eta) on the nodes."""
    top = 2.0 * lam * eta.sup_norm
    le = lam * eta.values
    # log(e^{top} - e^{le}) = top + log1p(-e^{le-top})
    log_num = top + np.log1p(-np.exp(le - top))
    return log_num, le


@dataclass(frozen=True)
class WeightSet:
    params: WeightParams
    t: np.ndarray
    # full space-time fields, shape (nt+1, nx+1, ny+1)
    log_alpha: np.ndarray
    log_xi: np.ndarray
    log_beta: np.ndarray
    log_gamma: np.ndarray
    # time-only extrema, shape (nt+1,)
    log_alpha_star: np.ndarray
    log_alpha_hat: np.ndarray
    log_xi_star: np.ndarray
    log_xi_hat: np.ndarray
    log_beta_star: np.ndarray
    log_beta_hat: np.ndarray
    log_gamma_star: np.ndarray
    log_gamma_hat: np.ndarray
    flush_fraction: float
    flush_flag: bool

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def clamp(self) -> float:
        return self.params.exp_clamp

    def exponent(self, name: str) -> np.ndarray:
        """s * weight for ``name`` in {'alpha', 'alpha_star', 'beta_hat', ...},
        clamped at exp_clamp."""
        raw = self.s * np.exp(getattr(self, "log_" + name))
        return np.minimum(raw, self.clamp)

    def clamped(self, name: str) -> np.ndarray:
        return self.s * np.exp(getattr(self, "log_" + name)) >= self.clamp

    def decay(self, terms, log_extra=0.0) -> np.ndarray:
        """exp(-sum c*s*w + log_extra) for terms [(c, name), ...].

        Samples where any s*w hits the clamp are returned as exact zeros.
        """
        expo = np.zeros_like(self.t) + log_extra
        dead = np.zeros(self.t.shape, dtype=bool)
        for c, name in terms:
            expo = expo - c * self.exponent(name)
            dead |= self.clamped(name)
        out = np.exp(expo)
        out[dead] = 0.0
        return out

    # derived weights ------------------------------------------------------
    def log_control_weight(self) -> np.ndarray:
        """log of e^{-2 s beta_hat - 3 s beta*} gamma_hat^7 (clamped exponents)."""
        return (-2.0 * self.exponent("beta_hat") - 3.0 * self.exponent("beta_star")
                + 7.0 * self.log_gamma_hat)

    def control_weight(self) -> np.ndarray:
        """Time profile of the control weight; exact zeros where flushed."""
        logw = self.log_control_weight()
        w = self.decay([(2.0, "beta_hat"), (3.0, "beta_star")], 7.0 * self.log_gamma_hat)
        w[logw < -self.clamp] = 0.0
        return w

    def log_rho_y(self) -> np.ndarray:
        return 1.5 * self.exponent("beta_star")

    def log_rho_f(self) -> np.ndarray:
        return 2.5 * self.exponent("beta_star") - 2.0 * self.log_gamma_star

    def log_rho_h2(self) -> np.ndarray:
        """log of e^{3/2 s beta*} (gamma*)^{-9/8}."""
        return 1.5 * self.exponent("beta_star") - 9.0 / 8.0 * self.log_gamma_star

    def control_norm_factor(self) -> np.ndarray:
        """e^{s beta_hat + 3/2 s beta*} gamma_hat^{-7/2}, i.e. w^{-1/2}; zero
        where the control weight is flushed (the control vanishes there)."""
        w = self.control_weight()
        out = np.exp(-0.5 * self.log_control_weight())
        out[w == 0] = 0.0
        return out

    def sqrt_control_weight(self) -> np.ndarray:
        w = self.control_weight()
        out = np.exp(0.5 * self.log_control_weight())
        out[w == 0] = 0.0
        return out


def eval_weights(eta: EtaField, profile: TimeProfile, params: WeightParams) -> WeightSet:
    """Evaluate every weight family on the nodes x time mesh.

    ell is floored at floor_delta*T so the weights stay finite at t = 0, T.
    """
    if eta.values.ndim != 2:
        raise ValueError("eta must be a 2D nodal field")
    lam = params.lam
    log_num, le = _spatial_factors(eta, lam)
    log_ell = np.log(profile.floored("ell"))
    log_ell_t = np.log(profile.floored("tilde"))

    def fields(log_l):
        lt = -ELL_POWER * log_l[:, None, None]
        return log_num[None] + lt, le[None] + lt

    log_alpha, log_xi = fields(log_ell)
    log_beta, log_gamma = fields(log_ell_t)

    def extrema(log_f):
        flat = log_f.reshape(log_f.shape[0], -1)
        return flat.max(axis=1), flat.min(axis=1)

    a_star, a_hat = extrema(log_alpha)
    xi_hat, xi_star = extrema(log_xi)
    b_star, b_hat = extrema(log_beta)
    g_hat, g_star = extrema(log_gamma)

    s_alpha = params.s * np.exp(log_alpha)
    frac = float(np.mean(s_alpha >= params.exp_clamp))
    flag = frac > 0.5
    if flag:
        log.warning("%.0f%% of e^{-s alpha} samples flush to zero (s=%g)", 100 * frac, params.s)
    return WeightSet(params, profile.t.copy(), log_alpha, log_xi, log_beta, log_gamma,
                     a_star, a_hat, xi_star, xi_hat, b_star, b_hat, g_star, g_hat,
                     frac, flag)


def control_weight_peak_s(eta: EtaField, profile: TimeProfile, lam: float = 1.0) -> float:
    """Smallest s for which the control weight is non-increasing on (T/2, T].

    With K = 2(e^{2 lam |eta|} - e^{lam |eta|}) + 3(e^{2 lam |eta|} - 1) the
    log control weight is -s K / ell^8 + 7 lam |eta| - 56 log ell, maximal
    at ell^8 = s K / 7.  Placing that maximum at ell(T/2) gives
    s = 7 ell(T/2)^8 / K.
    """
    m = lam * eta.sup_norm
    K = 2.0 * (np.exp(2 * m) - np.exp(m)) + 3.0 * (np.exp(2 * m) - 1.0)
    return float(7.0 * profile.ell_max ** ELL_POWER / K)


def auto_s(eta: EtaField, profile: TimeProfile, lam: float = 1.0, target: float | None = None) -> float:
    """Pick s from the mesh.

    ``target=None`` places the peak of the control weight at T/2 (see
    :func:`control_weight_peak_s`).  A numeric ``target`` instead solves
    s * alpha*(T/2) = target.
    """
    if target is None:
        return control_weight_peak_s(eta, profile, lam)
    if not target > 0:
        raise ValueError(f"target exponent must be positive, got {target}")
    alpha_star_mid = (np.exp(2 * lam * eta.sup_norm) - 1.0) / profile.ell_max ** ELL_POWER
    return float(target / alpha_star_mid)
