"""Alignment transforms: tangent-space mapping at a Fréchet mean, per-domain
recentering, and the SPD / geodesic bias variants used to counter label-shift
driven over-correction. Also the log-domain splitting utilities used only by
the verification suites."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from spdshift import core
from spdshift.exceptions import ConvergenceError
from spdshift.frechet import FrechetConfig, frechet_mean

BIAS_NONE = "none"
BIAS_SPD = "spd"
BIAS_GEODESIC = "geodesic_step"


class LowSampleWarning(UserWarning):
    """A domain mean was estimated from fewer than dim+1 samples."""


@dataclass(frozen=True)
class DomainAlignment:
    mean: np.ndarray
    bias_kind: str = BIAS_NONE
    bias: object = None  # SPD matrix for "spd", float for "geodesic_step"


@dataclass(frozen=True)
class AlignmentParams:
    per_domain: dict[int, DomainAlignment] = field(default_factory=dict)

    def transform(self, covs, domain_id: int) -> np.ndarray:
        """Feature vectors for a stack of covariances under this domain's
        alignment (recentering plus optional bias)."""
        d = self.per_domain[domain_id]
        if d.bias_kind == BIAS_NONE:
            return tsm_batch(covs, d.mean)
        if d.bias_kind == BIAS_SPD:
            return spdim_transform_batch(covs, d.mean, d.bias)
        if d.bias_kind == BIAS_GEODESIC:
            return spdim_geodesic_transform_batch(covs, d.mean, d.bias)
        raise ValueError(f"unknown bias kind {d.bias_kind!r}")

    def to_json(self) -> str:
        out = {}
        for j, d in self.per_domain.items():
            entry = {"mean": core.upper(d.mean).tolist(), "bias_kind": d.bias_kind}
            if d.bias_kind == BIAS_SPD:
                entry["bias"] = core.upper(d.bias).tolist()
            elif d.bias_kind == BIAS_GEODESIC:
                entry["bias"] = float(d.bias)
            out[str(j)] = entry
        return json.dumps(out, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AlignmentParams":
        raw = json.loads(text)
        per_domain = {}
        for j, entry in raw.items():
            kind = entry["bias_kind"]
            bias = None
            if kind == BIAS_SPD:
                bias = core.upper_inv(np.array(entry["bias"]))
            elif kind == BIAS_GEODESIC:
                bias = float(entry["bias"])
            per_domain[int(j)] = DomainAlignment(
                mean=core.upper_inv(np.array(entry["mean"])), bias_kind=kind, bias=bias
            )
        return cls(per_domain=per_domain)


def tsm(c, mean) -> np.ndarray:
    """Tangent-space feature upper(log(mean^-1/2 C mean^-1/2))."""
    w = core.spd_inv_sqrt(mean)
    return core.upper(core.spd_log(w @ np.asarray(c, dtype=np.float64) @ w))


def tsm_batch(cs, mean) -> np.ndarray:
    w = core.spd_inv_sqrt(mean)
    return core.upper_batch(core.spd_log_batch(w @ np.asarray(cs) @ w))


def spdim_transform(c, mean, bias_spd) -> np.ndarray:
    """Recentered feature with an SPD bias:
    upper(log(Phi^1/2 mean^-1/2 C mean^-1/2 Phi^1/2))."""
    w = core.spd_inv_sqrt(mean)
    r = core.spd_sqrt(bias_spd)
    return core.upper(core.spd_log(r @ w @ np.asarray(c, dtype=np.float64) @ w @ r))


def spdim_transform_batch(cs, mean, bias_spd) -> np.ndarray:
    w = core.spd_inv_sqrt(mean)
    r = core.spd_sqrt(bias_spd)
    return core.upper_batch(core.spd_log_batch(r @ w @ np.asarray(cs) @ w @ r))


def spdim_geodesic_transform(c, mean, step: float) -> np.ndarray:
    """Recentered feature with a scalar geodesic step:
    upper(log(mean^(-step/2) C mean^(-step/2)))."""
    w = core.spd_power(mean, -0.5 * step)
    return core.upper(core.spd_log(w @ np.asarray(c, dtype=np.float64) @ w))


def spdim_geodesic_transform_batch(cs, mean, step: float) -> np.ndarray:
    w = core.spd_power(mean, -0.5 * step)
    return core.upper_batch(core.spd_log_batch(w @ np.asarray(cs) @ w))


def fit_rct(datasets, cfg: FrechetConfig = FrechetConfig()) -> AlignmentParams:
    """Per-domain Fréchet means over each dataset's covariances (unsupervised;
    labels are never consulted). Bias is left unset."""
    per_domain = {}
    for ds in datasets:
        dim = ds.covariances.shape[-1]
        if len(ds) < dim + 1:
            warnings.warn(
                f"domain {ds.domain_id}: mean estimated from only {len(ds)} "
                f"samples (dim {dim})",
                LowSampleWarning,
                stacklevel=2,
            )
        try:
            result = frechet_mean(ds.covariances, cfg)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"domain {ds.domain_id}: {err}",
                iterations=err.iterations,
                last_iterate=err.last_iterate,
                grad_norm=err.grad_norm,
            ) from err
        per_domain[ds.domain_id] = DomainAlignment(mean=result.mean)
    return AlignmentParams(per_domain=per_domain)


def label_shift_split(structure, domain_id: int) -> np.ndarray:
    """Label-shift component of the log-domain split: upper_inv(B pi_j).
    Verification-only; the decoding path never sees B or the priors."""
    return core.upper_inv(structure.basis @ structure.priors[domain_id])


def splitting_residual(e, p_bar, q, alpha: float) -> float:
    """Frobenius error of the symmetric exponential splitting at scale alpha:

        exp(Q(a L)Q^T - Q(a P)Q^T)  vs
        Q exp(-a P/2) exp(a L) exp(-a P/2) Q^T

    with L = log(e). The error decays cubically in alpha for non-commuting
    L and P of moderate norm."""
    log_e = core.spd_log(e)
    q = np.asarray(q, dtype=np.float64)
    lhs = core.spd_exp(q @ (alpha * log_e - alpha * p_bar) @ q.T)
    inner = (
        core.spd_exp(-0.5 * alpha * p_bar)
        @ core.spd_exp(alpha * log_e)
        @ core.spd_exp(-0.5 * alpha * p_bar)
    )
    rhs = q @ inner @ q.T
    return float(np.linalg.norm(lhs - rhs))
