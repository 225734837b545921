"""End-to-end simulation harness: generate -> source-train -> align -> adapt
-> score, plus the property and gradient verification suites."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from spdshift import alignment, core, generate, learner
from spdshift.frechet import FrechetConfig, frechet_mean, frechet_variance, karcher_gradient
from spdshift.generate import (
    DomainDataset,
    GenerativeConfig,
    apply_label_shift,
    generate_dataset,
    make_antisymmetric_domain,
    sample_forward_models,
    sample_label_structure,
    substream,
)
from spdshift.learner import IMConfig, TrainConfig, balanced_accuracy

SCHEMA_VERSION = 1
METHODS = ("RCT", "SPDIM_bias", "SPDIM_geodesic", "TSM_global")


@dataclass(frozen=True)
class ExperimentConfig:
    label_ratios: tuple = (1.0, 0.6, 0.33, 0.2)
    class_seps: tuple = (1.5,)
    n_domains: tuple = (5,)
    samples: tuple = (500,)
    dims: tuple = (2,)
    informative_dims: tuple = (2,)
    methods: tuple = ("RCT", "SPDIM_bias", "SPDIM_geodesic")
    n_seeds: int = 20
    noise_std: float = 1.0
    scaling_strength: float = 1.0
    frechet: FrechetConfig = field(default_factory=FrechetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    im_temperature: float | None = None  # None: 2.0 for binary, 0.8 otherwise
    im_epochs: int = 50
    im_learning_rate: float = 1.0
    n_classes: int = 2
    output_path: str | None = None

    def __post_init__(self):
        for name in ("label_ratios", "class_seps", "n_domains", "samples",
                     "dims", "informative_dims", "methods"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be nonempty")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("label_ratios", "class_seps", "n_domains", "samples",
                    "dims", "informative_dims", "methods"):
            if key in raw:
                raw[key] = tuple(raw[key])
        if "frechet" in raw:
            raw["frechet"] = FrechetConfig(**raw["frechet"])
        if "train" in raw:
            raw["train"] = TrainConfig(**raw["train"])
        return cls(**raw)

    def temperature_for(self, n_classes: int) -> float:
        if self.im_temperature is not None:
            return self.im_temperature
        return 2.0 if n_classes == 2 else 0.8


@dataclass(frozen=True)
class ResultRow:
    method: str
    seed: int
    label_ratio: float
    class_sep: float
    n_source_domains: int
    samples_per_domain: int
    dim: int
    informative_dim: int
    balanced_accuracy: float  # NaN on failure
    wall_time_ms: float
    status: str = "ok"


CSV_COLUMNS = (
    "schema_version", "method", "seed", "label_ratio", "class_sep",
    "n_source_domains", "samples_per_domain", "dim", "informative_dim",
    "balanced_accuracy", "wall_time_ms", "status",
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else format(x, ".17g")
    return str(x)


def write_results_csv(rows, path, include_timing: bool = True):
    """Write result rows. With include_timing=False the volatile wall_time_ms
    column is blanked so identical runs produce byte-identical files."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                str(SCHEMA_VERSION), r.method, str(r.seed), _fmt(r.label_ratio),
                _fmt(r.class_sep), str(r.n_source_domains),
                str(r.samples_per_domain), str(r.dim), str(r.informative_dim),
                _fmt(r.balanced_accuracy),
                _fmt(r.wall_time_ms) if include_timing else "",
                r.status,
            ])


def _run_grid_point(args):
    (grid_index, label_ratio, class_sep, n_dom, n_samples, dim, d_inf,
     seed, cfg) = args
    d_inf = min(d_inf, dim)
    gcfg = GenerativeConfig(
        n_channels=dim,
        n_informative=d_inf,
        n_classes=cfg.n_classes,
        n_source_domains=n_dom,
        samples_per_domain=n_samples,
        class_sep=class_sep,
        noise_std=cfg.noise_std,
        scaling_strength=cfg.scaling_strength,
        label_ratio=label_ratio,
        seed=seed,
    )
    temperature = cfg.temperature_for(cfg.n_classes)
    im_cfg = dict(temperature=temperature, epochs=cfg.im_epochs,
                  learning_rate=cfg.im_learning_rate)
    rows = []

    def row(method, ba, t0, status="ok"):
        rows.append(ResultRow(
            method=method, seed=seed, label_ratio=label_ratio,
            class_sep=class_sep, n_source_domains=n_dom,
            samples_per_domain=n_samples, dim=dim, informative_dim=d_inf,
            balanced_accuracy=ba, wall_time_ms=(time.perf_counter() - t0) * 1e3,
            status=status,
        ))

    try:
        datasets, _, _ = generate_dataset(gcfg)
        sources, target = datasets[:-1], datasets[-1]
        target = apply_label_shift(
            target, label_ratio, substream(seed, "label_shift", target.domain_id)
        )
        source_params = alignment.fit_rct(sources, cfg.frechet)
        feats = [source_params.transform(ds.covariances, ds.domain_id)
                 for ds in sources]
        x = np.concatenate(feats, axis=0)
        y = np.concatenate([ds.labels for ds in sources])
        clf = learner.train_softmax(x, y, cfg.train)
        target_mean = frechet_mean(target.covariances, cfg.frechet).mean
    except Exception as err:  # noqa: BLE001 - failure becomes a tagged row
        t0 = time.perf_counter()
        for method in cfg.methods:
            row(method, float("nan"), t0, status=f"error:{type(err).__name__}")
        return grid_index, rows

    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "RCT":
                tf = alignment.tsm_batch(target.covariances, target_mean)
            elif method == "SPDIM_bias":
                phi = learner.fit_spdim_bias(
                    target.covariances, target_mean, clf,
                    IMConfig(mode="spd_bias", **im_cfg),
                )
                tf = alignment.spdim_transform_batch(
                    target.covariances, target_mean, phi
                )
            elif method == "SPDIM_geodesic":
                step = learner.fit_spdim_geodesic(
                    target.covariances, target_mean, clf,
                    IMConfig(mode="geodesic_step", **im_cfg),
                )
                tf = alignment.spdim_geodesic_transform_batch(
                    target.covariances, target_mean, step
                )
            elif method == "TSM_global":
                pooled = np.concatenate(
                    [ds.covariances for ds in sources], axis=0
                )
                global_mean = frechet_mean(pooled, cfg.frechet).mean
                gx = alignment.tsm_batch(pooled, global_mean)
                gclf = learner.train_softmax(gx, y, cfg.train)
                tf = alignment.tsm_batch(target.covariances, global_mean)
                preds = learner.predict(gclf, tf)
                row(method, balanced_accuracy(target.labels, preds), t0)
                continue
            preds = learner.predict(clf, tf)
            row(method, balanced_accuracy(target.labels, preds), t0)
        except Exception as err:  # noqa: BLE001
            row(method, float("nan"), t0, status=f"error:{type(err).__name__}")
    return grid_index, rows


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, progress=None):
    """Run the full sweep grid x seeds; returns rows sorted by
    (grid index, seed, method order). Deterministic for a fixed config."""
    grid = list(itertools.product(
        cfg.label_ratios, cfg.class_seps, cfg.n_domains, cfg.samples,
        cfg.dims, cfg.informative_dims,
    ))
    tasks = [
        (gi, *point, seed, cfg)
        for gi, point in enumerate(grid)
        for seed in range(cfg.n_seeds)
    ]
    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for gi, rows in pool.map(_run_grid_point, tasks, chunksize=1):
                results.extend(rows)
                if progress:
                    progress(rows)
    else:
        for task in tasks:
            _, rows = _run_grid_point(task)
            results.extend(rows)
            if progress:
                progress(rows)
    order = {m: i for i, m in enumerate(cfg.methods)}
    grid_key = {
        (lr, cs, nd, ns, dd, di): gi for gi, (lr, cs, nd, ns, dd, di) in enumerate(grid)
    }
    results.sort(key=lambda r: (
        grid_key[(r.label_ratio, r.class_sep, r.n_source_domains,
                  r.samples_per_domain, r.dim, r.informative_dim)],
        r.seed, order[r.method],
    ))
    return results


# ---------------------------------------------------------------------------
# verification suites

@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    comparison: str  # "<", "<=", ">="
    passed: bool
    detail: str = ""


def _check(name, value, threshold, comparison, detail=""):
    ok = {
        "<": value < threshold,
        "<=": value <= threshold,
        ">=": value >= threshold,
    }[comparison]
    return CheckResult(name=name, value=float(value), threshold=float(threshold),
                       comparison=comparison, passed=bool(ok), detail=detail)


def _source_covs_from_latents(latents):
    return core.spd_exp_batch(core.upper_inv_batch(latents))


def check_properties(seed: int = 0, n_statistical_seeds: int = 20) -> list[CheckResult]:
    """Numerical verification of the mean-convergence and shift-compensation
    claims plus the cubic decay of the exponential splitting error."""
    checks = []

    # exact fixture: antisymmetric diagonal latents -> Fréchet mean of the
    # source covariances is the identity
    fix_cfg = GenerativeConfig(
        n_channels=3, n_informative=3, samples_per_domain=200,
        scaling_strength=0.0, diagonal_latents=True, seed=seed,
    )
    structure = sample_label_structure(fix_cfg)
    models = sample_forward_models(fix_cfg)
    ds = make_antisymmetric_domain(fix_cfg, structure, models, 0)
    es = _source_covs_from_latents(ds.latents)
    mean = frechet_mean(es, FrechetConfig(tol=1e-11)).mean
    checks.append(_check(
        "mean_identity_exact_fixture",
        core.airm_distance(mean, np.eye(3)), 1e-7, "<",
        "distance of the Fréchet mean of antisymmetric diagonal sources to I",
    ))

    # statistical form: distance to the identity shrinks with the sample count
    sizes = (250, 1000, 4000)
    dists = {m: [] for m in sizes}
    for s in range(n_statistical_seeds):
        cfg_s = GenerativeConfig(
            n_channels=4, n_informative=4, samples_per_domain=max(sizes),
            noise_std=1.0, seed=seed + 1000 + s,
        )
        st = sample_label_structure(cfg_s)
        rng = substream(cfg_s.seed, "domain", 0)
        _, latents = generate._draw_latents(cfg_s, st, 0, rng)
        for m in sizes:
            es = _source_covs_from_latents(latents[:m])
            g = frechet_mean(es, FrechetConfig(tol=1e-8)).mean
            dists[m].append(core.airm_distance(g, np.eye(4)))
    avg = {m: float(np.mean(dists[m])) for m in sizes}
    decreasing = avg[250] > avg[1000] > avg[4000]
    checks.append(_check(
        "mean_identity_monotone_in_samples", float(decreasing), 1.0, ">=",
        f"avg distances {avg}",
    ))
    checks.append(_check(
        "mean_identity_distance_at_4000", avg[4000], 0.15, "<",
        "avg over seeds of the distance to I at 4000 samples",
    ))

    # shift-compensation fixture: two domains, shared latents and rotation,
    # distinct scalings -> recentered features match sample-by-sample
    fix2 = GenerativeConfig(
        n_channels=3, n_informative=3, samples_per_domain=200,
        scaling_strength=1.0, diagonal_latents=True, seed=seed + 7,
    )
    st2 = sample_label_structure(fix2)
    md2 = sample_forward_models(fix2)
    rng = substream(fix2.seed, "fixture-latents")
    _, half = generate._draw_latents(fix2, st2, 0, rng, n=100)
    latents = np.concatenate([half, -half], axis=0)
    covs_a = generate._build_covariances(fix2, md2, 0, latents, rng)
    covs_b = generate._build_covariances(fix2, md2, 1, latents, rng)
    params = alignment.fit_rct(
        [DomainDataset(0, covs_a), DomainDataset(1, covs_b)],
        FrechetConfig(tol=1e-11),
    )
    fa = params.transform(covs_a, 0)
    fb = params.transform(covs_b, 1)
    checks.append(_check(
        "recentering_compensates_scalings",
        float(np.max(np.abs(fa - fb))), 1e-6, "<",
        "max feature discrepancy between matched cross-domain samples",
    ))

    # cubic decay of the exponential splitting residual
    alphas = np.array([0.4, 0.2, 0.1, 0.05])
    rng = substream(seed, "cubic")
    good = 0
    n_fix = 50
    for _ in range(n_fix):
        d = 3
        a = rng.standard_normal((d, d))
        log_e = 0.5 * (a + a.T)
        log_e *= 1.0 / np.linalg.norm(log_e)
        b = rng.standard_normal((d, d))
        p_bar = 0.5 * (b + b.T)
        p_bar *= 1.0 / np.linalg.norm(p_bar)
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q = q * np.sign(np.diag(r))
        res = [alignment.splitting_residual(core.spd_exp(log_e), p_bar, q, al)
               for al in alphas]
        slope = np.polyfit(np.log(alphas), np.log(res), 1)[0]
        if 2.7 <= slope <= 3.3:
            good += 1
    checks.append(_check(
        "splitting_residual_cubic_decay", good / n_fix, 0.9, ">=",
        f"fraction of {n_fix} fixtures with log-log slope in [2.7, 3.3]",
    ))
    return checks


def grad_check(seed: int = 0) -> list[CheckResult]:
    """Finite-difference validation of the three analytic gradients."""
    checks = []
    rng = substream(seed, "gradcheck")
    d = 3

    def random_spd(scale=0.6):
        a = rng.standard_normal((d, d))
        return core.spd_exp(scale * 0.5 * (a + a.T))

    # Karcher gradient vs central differences of the Fréchet variance
    cs = np.stack([random_spd() for _ in range(8)])
    g = random_spd(0.3)
    grad = karcher_gradient(g, cs)
    h = 1e-5
    max_rel = 0.0
    for _ in range(5):
        u = rng.standard_normal((d, d))
        u = 0.5 * (u + u.T)
        u /= np.linalg.norm(u)
        fd = (
            frechet_variance(core.exp_map(g, h * u), cs)
            - frechet_variance(core.exp_map(g, -h * u), cs)
        ) / (2 * h)
        # grad_E delta^2(E, C) = -2 Log_E(C); karcher_gradient drops the 2,
        # so the directional derivative of the variance is 2 g_G(grad, U)
        analytic = 2.0 * core.airm_inner(g, grad, u)
        max_rel = max(max_rel, abs(fd - analytic) / max(abs(fd), 1e-12))
    checks.append(_check("karcher_gradient_fd", max_rel, 1e-5, "<"))

    # IM bias gradient at the identity vs finite differences
    covs = np.stack([random_spd() for _ in range(40)])
    mean = frechet_mean(covs).mean
    w = core.spd_inv_sqrt(mean)
    whitened = w @ covs @ w
    feats = core.upper_batch(core.spd_log_batch(whitened))
    labels = np.array([1, 2] * 20)
    clf = learner.train_softmax(feats, labels, TrainConfig(epochs=50))
    phi = np.eye(d)
    _, g_e, _ = learner.im_bias_loss_grad(whitened, phi, clf, 2.0)
    h = 1e-5
    max_rel = 0.0
    for _ in range(5):
        u = rng.standard_normal((d, d))
        u = 0.5 * (u + u.T)
        u /= np.linalg.norm(u)
        lp, _, _ = learner.im_bias_loss_grad(whitened, phi + h * u, clf, 2.0)
        lm, _, _ = learner.im_bias_loss_grad(whitened, phi - h * u, clf, 2.0)
        fd = (lp - lm) / (2 * h)
        analytic = float(np.sum(g_e * u))
        max_rel = max(max_rel, abs(fd - analytic) / max(abs(fd), 1e-12))
    checks.append(_check("im_bias_gradient_fd", max_rel, 1e-4, "<"))

    # softmax training gradient vs finite differences
    x = rng.standard_normal((30, 4))
    y_idx = rng.integers(0, 3, size=30)
    wts = rng.standard_normal((3, 4)) * 0.3
    bias = rng.standard_normal(3) * 0.1
    _, gw, gb = learner.softmax_loss_grad(wts, bias, x, y_idx, 1e-4)
    h = 1e-6
    max_rel = 0.0
    for _ in range(5):
        uw = rng.standard_normal(wts.shape)
        ub = rng.standard_normal(bias.shape)
        nrm = math.sqrt(np.sum(uw**2) + np.sum(ub**2))
        uw /= nrm
        ub /= nrm
        lp, _, _ = learner.softmax_loss_grad(wts + h * uw, bias + h * ub, x, y_idx, 1e-4)
        lm, _, _ = learner.softmax_loss_grad(wts - h * uw, bias - h * ub, x, y_idx, 1e-4)
        fd = (lp - lm) / (2 * h)
        analytic = float(np.sum(gw * uw) + np.sum(gb * ub))
        max_rel = max(max_rel, abs(fd - analytic) / max(abs(fd), 1e-12))
    checks.append(_check("softmax_gradient_fd", max_rel, 1e-6, "<"))
    return checks


def report_text(checks) -> str:
    lines = []
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(
            f"[{status}] {c.name}: value={c.value:.6g} {c.comparison} "
            f"threshold={c.threshold:g}" + (f"  ({c.detail})" if c.detail else "")
        )
    return "\n".join(lines)


def report_json(checks) -> str:
    return json.dumps([dataclasses.asdict(c) for c in checks], indent=2)
