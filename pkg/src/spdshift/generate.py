"""Sampler for the latent log-linear generative model.

Per-domain covariance data is produced in three stages: latent log-space
features with class structure, source covariances E_i = exp(upper_inv(s_i)),
and sensor covariances C_i = A_j E_i A_j^T under a per-domain forward model
A_j = Q exp(P_j) (shared rotation, domain-specific SPD scaling).

Randomness comes from the counter-based Philox generator with substreams
keyed by (seed, domain id, purpose), so each domain's data is independent of
generation order and bit-reproducible for a fixed config.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from spdshift import core
from spdshift.exceptions import DegenerateDataError, NumericalError, ShapeError

EXACT_COVARIANCE = "exact_covariance"
SAMPLED_TIMESERIES = "sampled_timeseries"


def substream(seed: int, *key) -> np.random.Generator:
    """Philox generator for a named substream. Key parts may be ints or
    strings; strings are hashed with crc32 for a stable integer key."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for part in key:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        else:
            words.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass(frozen=True)
class GenerativeConfig:
    n_channels: int = 2          # sensor/source dimension P
    n_informative: int = 2       # leading block dimension D carrying label info
    n_classes: int = 2
    n_source_domains: int = 5
    samples_per_domain: int = 500
    class_sep: float = 1.5
    noise_std: float = 1.0
    scaling_strength: float = 1.0
    label_ratio: float = 1.0     # target-domain minority/majority ratio
    seed: int = 0
    mode: str = EXACT_COVARIANCE
    n_times: int | None = None   # epoch length T in sampled_timeseries mode
    diagonal_latents: bool = False

    def __post_init__(self):
        if self.n_informative > self.n_channels:
            raise ValueError("n_informative must not exceed n_channels")
        if not (0 < self.label_ratio <= 1):
            raise ValueError("label_ratio must lie in (0, 1]")
        if self.samples_per_domain < self.n_classes:
            raise ValueError("need at least one sample per class")
        if self.mode not in (EXACT_COVARIANCE, SAMPLED_TIMESERIES):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == SAMPLED_TIMESERIES and self.n_times is None:
            raise ValueError("sampled_timeseries mode requires n_times")
        if self.noise_std < 0 or self.class_sep < 0 or self.scaling_strength < 0:
            raise ValueError("class_sep, noise_std, scaling_strength must be >= 0")

    @property
    def n_feature_coords(self) -> int:
        return core.n_coords(self.n_channels)

    @property
    def target_domain(self) -> int:
        """Domain id of the single target domain (sources are 0..n-1)."""
        return self.n_source_domains


@dataclass(frozen=True)
class ForwardModel:
    """Shared rotation Q plus per-domain symmetric log-scalings."""

    rotation: np.ndarray                   # orthogonal, P x P
    log_scalings: dict[int, np.ndarray]    # domain id -> symmetric P x P

    def mixing(self, domain_id: int) -> np.ndarray:
        """Forward matrix A_j = Q exp(P_j)."""
        return self.rotation @ core.spd_exp(self.log_scalings[domain_id])


@dataclass(frozen=True)
class LabelStructure:
    """Class-mean basis B (coords x classes) and per-domain class priors."""

    basis: np.ndarray
    priors: dict[int, np.ndarray]
    informative_coords: np.ndarray
    noise_coords: np.ndarray


@dataclass(frozen=True)
class DomainDataset:
    domain_id: int
    covariances: np.ndarray              # (n, P, P)
    labels: np.ndarray | None = None     # values in 1..K
    latents: np.ndarray | None = None    # (n, P(P+1)/2), kept for verification

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.covariances):
            raise ShapeError("labels length does not match covariances")

    def __len__(self):
        return len(self.covariances)


def _block_coords(dim: int, block: int, diagonal_only: bool) -> np.ndarray:
    """Upper-ordering coordinate indices touching only the leading block."""
    rows, cols, _ = core._upper_indices(dim)
    if diagonal_only:
        mask = (rows == cols) & (rows < block)
    else:
        mask = (rows < block) & (cols < block)
    return np.nonzero(mask)[0]


def sample_label_structure(cfg: GenerativeConfig, rng=None) -> LabelStructure:
    """Draw the class-mean basis B: standard-normal entries on the coordinates
    of the leading informative block, columns scaled to norm ``class_sep``,
    zero elsewhere. Priors default to uniform for every domain."""
    if rng is None:
        rng = substream(cfg.seed, "structure")
    n = cfg.n_feature_coords
    k = cfg.n_classes
    coords = _block_coords(cfg.n_channels, cfg.n_informative, cfg.diagonal_latents)
    if len(coords) < k:
        raise ValueError(
            f"informative block offers {len(coords)} coordinates, cannot embed "
            f"{k} linearly independent class means"
        )
    basis = np.zeros((n, k))
    if cfg.class_sep > 0:
        block = rng.standard_normal((len(coords), k))
        block *= cfg.class_sep / np.linalg.norm(block, axis=0)
        basis[coords, :] = block
        gram_eigs = core.sym_eig(basis.T @ basis).values
        if gram_eigs[-1] <= 1e-12 * max(1.0, gram_eigs[0]):
            raise NumericalError("drawn class basis is rank deficient")
    if cfg.diagonal_latents:
        noise_coords = _block_coords(cfg.n_channels, cfg.n_channels, True)
    else:
        noise_coords = np.arange(n)
    uniform = np.full(k, 1.0 / k)
    priors = {j: uniform.copy() for j in range(cfg.n_source_domains + 1)}
    return LabelStructure(
        basis=basis,
        priors=priors,
        informative_coords=coords,
        noise_coords=noise_coords,
    )


def sample_forward_models(cfg: GenerativeConfig, rng=None) -> ForwardModel:
    """Draw the shared rotation Q (QR of a Gaussian matrix, diag(R) > 0) and
    per-domain log-scalings P_j with spectral norm ``scaling_strength``."""
    if rng is None:
        rng = substream(cfg.seed, "models")
    p = cfg.n_channels
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    q = q * np.sign(np.diag(r))
    scalings = {}
    for j in range(cfg.n_source_domains + 1):
        if cfg.scaling_strength == 0:
            scalings[j] = np.zeros((p, p))
        else:
            w = rng.standard_normal((p, p))
            w = 0.5 * (w + w.T)
            spectral = np.max(np.abs(core.sym_eig(w).values))
            scalings[j] = cfg.scaling_strength * w / spectral
    return ForwardModel(rotation=q, log_scalings=scalings)


def _draw_latents(cfg, structure, domain_id, rng, n=None):
    """Labels y ~ priors and latents s = B(1_y - pi) + eps."""
    if n is None:
        n = cfg.samples_per_domain
    pi = structure.priors[domain_id]
    k = cfg.n_classes
    labels = rng.choice(np.arange(1, k + 1), size=n, p=pi)
    onehot = np.eye(k)[labels - 1]
    latents = (onehot - pi) @ structure.basis.T
    if cfg.noise_std > 0:
        eps = np.zeros((n, cfg.n_feature_coords))
        eps[:, structure.noise_coords] = cfg.noise_std * rng.standard_normal(
            (n, len(structure.noise_coords))
        )
        latents = latents + eps
    return labels, latents


def _build_covariances(cfg, models, domain_id, latents, rng):
    """Sensor covariances from latents: exact congruence or finite-epoch
    empirical covariance of sampled time series."""
    source_covs = core.spd_exp_batch(core.upper_inv_batch(latents))
    a = models.mixing(domain_id)
    if cfg.mode == EXACT_COVARIANCE:
        return a @ source_covs @ a.T
    t = cfg.n_times
    p = cfg.n_channels
    if t < p:
        raise ShapeError(
            f"n_times={t} < n_channels={p}: empirical covariances are singular"
        )
    covs = np.empty_like(source_covs)
    for i, e in enumerate(source_covs):
        root = core.spd_sqrt(e)
        for _ in range(100):
            x = a @ root @ rng.standard_normal((p, t))
            c = x @ x.T / t
            values, _ = core._kernels.jacobi_eigh(0.5 * (c + c.T))
            if values[-1] > core.EIG_FLOOR:
                covs[i] = 0.5 * (c + c.T)
                break
        else:
            raise NumericalError("could not draw a well-conditioned epoch")
    return covs


def generate_domain(cfg, structure, models, domain_id, rng=None) -> DomainDataset:
    """Generate one labeled domain (no pooled standardization; see
    ``generate_dataset`` for the full protocol)."""
    if rng is None:
        rng = substream(cfg.seed, "domain", domain_id)
    labels, latents = _draw_latents(cfg, structure, domain_id, rng)
    covs = _build_covariances(cfg, models, domain_id, latents, rng)
    return DomainDataset(
        domain_id=domain_id, covariances=covs, labels=labels, latents=latents
    )


def generate_dataset(cfg: GenerativeConfig):
    """Full generation protocol: draw latents for all source domains and the
    target domain, standardize the pooled latent coordinates to zero mean and
    unit variance, then build per-domain covariances.

    Returns (datasets, structure, models) with datasets indexed by domain id;
    the target domain is the last entry and is generated with balanced priors
    (label shift is applied separately, see ``apply_label_shift``).
    """
    structure = sample_label_structure(cfg)
    models = sample_forward_models(cfg)
    domains = list(range(cfg.n_source_domains + 1))
    drawn = {}
    for j in domains:
        rng = substream(cfg.seed, "domain", j)
        drawn[j] = (*_draw_latents(cfg, structure, j, rng), rng)
    pooled = np.concatenate([drawn[j][1] for j in domains], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std < 1e-12] = 1.0
    datasets = []
    for j in domains:
        labels, latents, rng = drawn[j]
        latents = (latents - mean) / std
        covs = _build_covariances(cfg, models, j, latents, rng)
        datasets.append(
            DomainDataset(domain_id=j, covariances=covs, labels=labels, latents=latents)
        )
    return datasets, structure, models


def apply_label_shift(ds: DomainDataset, label_ratio: float, rng) -> DomainDataset:
    """Subsample every class other than class 1 (the designated majority)
    without replacement to ceil(label_ratio * n_majority) examples."""
    if ds.labels is None:
        raise ValueError("label shift requires a labeled dataset")
    if not (0 < label_ratio <= 1):
        raise ValueError("label_ratio must lie in (0, 1]")
    if label_ratio == 1.0:
        return ds
    labels = np.asarray(ds.labels)
    n_majority = int(np.sum(labels == 1))
    keep_minority = int(np.ceil(label_ratio * n_majority))
    keep = []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if cls != 1 and len(idx) > keep_minority:
            idx = np.sort(rng.choice(idx, size=keep_minority, replace=False))
        if len(idx) == 0:
            raise DegenerateDataError(f"class {cls} has no examples after shift")
        keep.append(idx)
    keep = np.sort(np.concatenate(keep))
    if keep_minority == 0:
        raise DegenerateDataError("label_ratio leaves a class empty")
    return DomainDataset(
        domain_id=ds.domain_id,
        covariances=ds.covariances[keep],
        labels=labels[keep],
        latents=None if ds.latents is None else ds.latents[keep],
    )


def make_antisymmetric_domain(cfg, structure, models, domain_id, rng=None) -> DomainDataset:
    """Test fixture: draw half the latents, append their negations so the
    latent sum is exactly zero. With ``diagonal_latents`` the source
    covariances commute and their Fréchet mean is the identity up to solver
    tolerance. Labels of mirrored samples copy their originals."""
    if cfg.samples_per_domain % 2 != 0:
        raise ValueError("antisymmetric construction needs an even sample count")
    if rng is None:
        rng = substream(cfg.seed, "domain", domain_id)
    half = cfg.samples_per_domain // 2
    labels, latents = _draw_latents(cfg, structure, domain_id, rng, n=half)
    labels = np.concatenate([labels, labels])
    latents = np.concatenate([latents, -latents], axis=0)
    covs = _build_covariances(cfg, models, domain_id, latents, rng)
    return DomainDataset(
        domain_id=domain_id, covariances=covs, labels=labels, latents=latents
    )


# ---------------------------------------------------------------------------
# serialization: CSV of upper-coordinates plus a JSON config sidecar

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_datasets(datasets, path, cfg: GenerativeConfig):
    """Write all domains to one CSV (domain_id, label, upper coords of C_i)
    with a ``<path>.json`` config echo. Floats carry 17 significant digits
    and round-trip exactly."""
    n = core.n_coords(int(datasets[0].covariances.shape[-1]))
    header = ["domain_id", "label"] + [f"c{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ds in datasets:
            coords = core.upper_batch(ds.covariances)
            for i in range(len(ds)):
                label = "" if ds.labels is None else str(int(ds.labels[i]))
                writer.writerow(
                    [str(ds.domain_id), label] + [_fmt(x) for x in coords[i]]
                )
    with open(str(path) + ".json", "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2)
        fh.write("\n")


def load_datasets(path):
    """Inverse of ``save_datasets``: returns (datasets, config)."""
    with open(str(path) + ".json") as fh:
        cfg = GenerativeConfig(**json.load(fh))
    rows_by_domain: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows_by_domain.setdefault(int(row[0]), []).append(row)
    datasets = []
    for j in sorted(rows_by_domain):
        rows = rows_by_domain[j]
        coords = np.array([[float(x) for x in r[2:]] for r in rows])
        covs = np.stack([core.upper_inv(v) for v in coords])
        labels = None
        if rows[0][1] != "":
            labels = np.array([int(r[1]) for r in rows])
        datasets.append(DomainDataset(domain_id=j, covariances=covs, labels=labels))
    return datasets, cfg
