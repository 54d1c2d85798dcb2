"""Discretized Gaussian-mixture likelihood, rate, and coder CDF tables.

An integer symbol v is modeled by K weighted Gaussians; its probability
is the mixture mass on [v-0.5, v+0.5], with the mass beyond the symbol
alphabet [-127, 127] folded into the edge symbols so the alphabet always
carries total mass 1.

The likelihood/rate functions are polymorphic over ndarrays and autodiff
Vars (see autodiff module); the CDF construction is coder-only and works
in float64 on snapped parameters so tables are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SIGMA_MIN = 0.05
P_FLOOR = 1e-9
V_MIN = -127
V_MAX = 127
ALPHABET = V_MAX - V_MIN + 1
CDF_TOTAL = 1 << 16


@dataclass
class GmmParams:
    """Per-element mixture parameters with a leading component axis.

    pi, mu, sigma: arrays (or autodiff Vars) of shape [K, ...]; the
    trailing axes index latent elements.
    """

    pi: object
    mu: object
    sigma: object

    @property
    def k(self) -> int:
        return ad.value_of(self.pi).shape[0]

    def validate(self):
        pi = ad.value_of(self.pi)
        sigma = ad.value_of(self.sigma)
        if pi.shape != ad.value_of(self.mu).shape or pi.shape != sigma.shape:
            raise ValueError("pi, mu, sigma must share one shape")
        if np.any(pi < 0):
            raise ValueError("mixture weights must be non-negative")
        if np.any(np.abs(pi.sum(axis=0) - 1.0) > 1e-6):
            raise ValueError("mixture weights must sum to 1 within 1e-6")
        if np.any(sigma < SIGMA_MIN - 1e-9):
            raise ValueError(f"sigma below minimum {SIGMA_MIN}")

    def element(self, idx) -> "GmmParams":
        """Single-element view: arrays of shape [K]."""
        sel = (slice(None),) + tuple(idx)
        return GmmParams(self.pi[sel], self.mu[sel], self.sigma[sel])


def mixture_prob(values, params: GmmParams):
    """Mass of [v-0.5, v+0.5] under the mixture, edge bins folded, no floor.

    Plain-array inputs are evaluated in float64 regardless of storage dtype.
    """
    if not any(isinstance(x, ad.Var) for x in (values, params.pi, params.mu, params.sigma)):
        values = np.asarray(values, dtype=np.float64)
        params = GmmParams(np.asarray(params.pi, dtype=np.float64),
                           np.asarray(params.mu, dtype=np.float64),
                           np.asarray(params.sigma, dtype=np.float64))
    vv = ad.value_of(values)
    hi_fold = vv >= V_MAX
    lo_fold = vv <= V_MIN
    k = params.k
    total = None
    for i in range(k):
        mu_i, sg_i, pi_i = params.mu[i], params.sigma[i], params.pi[i]
        upper = ad.blend(hi_fold, 1.0, ad.normal_cdf((values + 0.5 - mu_i) / sg_i))
        lower = ad.blend(lo_fold, 0.0, ad.normal_cdf((values - 0.5 - mu_i) / sg_i))
        term = pi_i * (upper - lower)
        total = term if total is None else total + term
    return total


def discretized_likelihood(values, params: GmmParams):
    """Symbol probability, floored at P_FLOOR so -log2 stays finite."""
    sigma = ad.value_of(params.sigma)
    if np.any(sigma < SIGMA_MIN - 1e-9):
        raise ValueError(f"sigma below minimum {SIGMA_MIN}")
    return ad.maximum(mixture_prob(values, params), P_FLOOR)


def rate_bits(values, params: GmmParams):
    """Total cross-entropy in bits: sum of -log2 likelihood."""
    return ad.sum_all(-ad.log2(discretized_likelihood(values, params)))


@dataclass
class CdfTable:
    """Integer CDF over [-127, 127] totaling 2**16, every width >= 1."""

    cum: np.ndarray  # int64, length ALPHABET+1, cum[0]=0, cum[-1]=CDF_TOTAL

    def width(self, symbol: int) -> int:
        idx = symbol - V_MIN
        return int(self.cum[idx + 1] - self.cum[idx])

    def validate(self):
        if self.cum.shape != (ALPHABET + 1,):
            raise ValueError(f"cum must have {ALPHABET + 1} entries")
        if self.cum[0] != 0 or self.cum[-1] != CDF_TOTAL:
            raise ValueError("cum must run from 0 to 65536")
        if np.any(np.diff(self.cum) < 1):
            raise ValueError("every symbol width must be >= 1")


def apportion(proportions: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` integer counts.

    Ties between equal remainders favor the lower index.
    """
    t = proportions * float(total)
    base = np.floor(t).astype(np.int64)
    rem = t - base
    deficit = int(total - base.sum())
    if deficit > 0:
        order = np.argsort(-rem, kind="stable")
        base[order[:deficit]] += 1
    return base


def snap_params(pi, mu, sigma):
    """Quantize parameters to coarse grids before CDF construction.

    mu to multiples of 1/64, sigma to the geometric grid 2**(n/32), pi to
    multiples of 2**-12 renormalized by largest remainder. Keeps tables
    stable against sub-grid float drift between builds.
    """
    pi = np.asarray(pi, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    mu_s = np.round(mu * 64.0) / 64.0
    sigma_s = np.exp2(np.round(np.log2(sigma) * 32.0) / 32.0)
    pi_s = apportion(pi, 1 << 12).astype(np.float64) / float(1 << 12)
    return pi_s, mu_s, sigma_s


def build_cdf(params: GmmParams) -> CdfTable:
    """Coder table for one latent element (params arrays of shape [K])."""
    pi, mu, sigma = snap_params(ad.value_of(params.pi), ad.value_of(params.mu),
                                ad.value_of(params.sigma))
    v = np.arange(V_MIN, V_MAX + 1, dtype=np.float64)
    p = mixture_prob(v, GmmParams(pi[:, None], mu[:, None], sigma[:, None]))
    q = p / p.sum()
    widths = 1 + apportion(q, CDF_TOTAL - ALPHABET)
    cum = np.zeros(ALPHABET + 1, dtype=np.int64)
    np.cumsum(widths, out=cum[1:])
    return CdfTable(cum)
