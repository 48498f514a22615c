"""Training loop and the scripted analysis experiments.

One iteration: draw a ray batch, sample depths, encode positions/directions
under the current frequency mask, query the field, composite, build the loss
for the configured mode, backpropagate and take an Adam step.  All randomness
of iteration ``i`` comes from ``default_rng([seed, i])``, so a run resumed from
a checkpoint replays exactly what an uninterrupted run would have done.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig, dump_config
from .encoding import FrequencyMask, mask_at, masked_encode
from .errors import DivergenceError
from .field import RadianceField, load_checkpoint, save_checkpoint
from .losses import (
    alt_emptiness_on_w,
    alt_entropy_loss,
    alt_linear_weight_loss,
    linear_weight,
    loss_o,
    loss_r,
    loss_s,
    loss_u,
    total_loss,
    two_phase_target,
)
from .metrics import EvalReport, evaluate_images
from .rendering import Rays, composite, generate_rays, ray_density, sample_intervals, stratified_sample
from .scenes import floater_mass, scene_from_dict
from .supervision import Dataset, PosedImage, RayBank, sample_ray_batch, write_png

log = logging.getLogger(__name__)


def adaptive_blur_schedule(iter_t: int, sigma_max: float, horizon: int) -> float:
    """Blur sigma decaying linearly from ``sigma_max`` to 0 (identity) at ``horizon``."""
    return sigma_max * max(0.0, 1.0 - iter_t / horizon)


@dataclass
class RunResult:
    config: TrainConfig
    rows: list[dict]
    report: EvalReport | None
    probes: list[dict] = field(default_factory=list)
    floater_mass: float | None = None
    out_dir: Path | None = None
    train_report: EvalReport | None = None

    @property
    def psnr(self) -> float:
        return self.report.psnr

    def csv_text(self) -> str:
        return rows_to_csv(self.rows)


def csv_columns(cfg: TrainConfig) -> list[str]:
    terms = cfg.terms
    cols = ["iter", "l_s"]
    if terms.adaptive:
        cols.append("l_u")
    if terms.regularizer:
        cols.append("l_r")
    cols += ["l_o", "l_total"]
    if terms.adaptive:
        cols.append("mean_beta_bar2")
    cols.append("lr")
    if terms.regularizer:
        cols.append("lambda_r")
    if terms.two_phase:
        cols.append("phase")
    if terms.decaying_blur:
        cols.append("blur_sigma")
    cols.append("mask_frac")
    if terms.adaptive:
        cols += ["weight_low", "weight_high"]
    return cols


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=columns or list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _parse_cell(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


class Trainer:
    def __init__(self, config: TrainConfig, dataset: Dataset, out_dir=None, resume=None):
        self.cfg = config
        self.dataset = dataset
        self.dtype = np.dtype(config.dtype)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            dump_config(config, self.out_dir / "config.yaml")
        self.model = RadianceField(config.architecture, config.encoding, seed=config.seed, dtype=self.dtype)
        blur_kernel = config.blur_kernel_max if config.terms.decaying_blur else config.blur_kernel
        blur_sigma = config.blur_sigma_max if config.terms.decaying_blur else config.blur_sigma
        self.bank = RayBank(dataset.train, dataset.near, dataset.far, blur_kernel, blur_sigma, config.edge_threshold)
        self.lo, self.hi = (np.asarray(b, dtype=np.float64) for b in dataset.bounds)
        self.background = np.asarray(dataset.background, dtype=self.dtype)
        self.opt = ad.Adam(self.model.parameters, self.lr_at)
        self.start_iter = 0
        self.rows: list[dict] = []
        self.probes: list[dict] = []
        if resume is not None:
            ckpt = load_checkpoint(resume)
            self.model.load_arrays(ckpt.model.state_arrays())
            self.opt.load_state_dict(ckpt.arrays)
            self.start_iter = ckpt.iteration
            self.probes = list(ckpt.meta.get("probes", []))
            logged = Path(resume).parent / "losses.csv"
            if logged.exists():
                self.rows = [r for r in read_csv(logged) if r["iter"] < self.start_iter]

    # ------------------------------------------------------------ schedules

    def lr_at(self, it: int) -> float:
        c = self.cfg
        return ad.lr_schedule(it, c.lr, c.lr_final, c.total_iters, round(c.warmup_frac * c.total_iters))

    def masks_at(self, it: int) -> tuple[FrequencyMask, FrequencyMask]:
        c = self.cfg
        t = it if c.frozen_mask_fraction is None else c.frozen_mask_fraction * c.mask_horizon
        return (mask_at(t, c.mask_horizon, c.k_pos, c.mask_schedule),
                mask_at(t, c.mask_horizon, c.k_dir, c.mask_schedule))

    def blur_sigma_at(self, it: int) -> float:
        c = self.cfg
        step = (it // c.blur_refresh) * c.blur_refresh
        return adaptive_blur_schedule(step, c.blur_sigma_max, c.mask_horizon)

    # ------------------------------------------------------------ rendering

    def normalize(self, pts: np.ndarray) -> np.ndarray:
        return 2.0 * (pts - self.lo) / (self.hi - self.lo) - 1.0

    def render(self, rays: Rays, it: int, rng: np.random.Generator | None, n_samples: int | None = None):
        """Differentiable render of a ray batch; returns (pixel, composited colour)."""
        n = n_samples or self.cfg.n_samples
        pos_mask, dir_mask = self.masks_at(it)
        t = stratified_sample(rays.near, rays.far, n, rng)
        deltas = sample_intervals(t, rays.far)
        pts = rays.origins[:, None] + t[..., None] * rays.directions[:, None]
        x_enc = masked_encode(self.normalize(pts).reshape(-1, 3).astype(self.dtype), self.cfg.k_pos, pos_mask)
        d_enc = masked_encode(rays.directions, self.cfg.k_dir, dir_mask)
        d_enc = np.repeat(d_enc, n, axis=0)
        out = self.model.query(x_enc.astype(self.dtype), d_enc.astype(self.dtype))
        r = len(rays)
        px = composite(out.sigma.reshape(r, n), deltas.astype(self.dtype), out.c.reshape(r, n, 3),
                       out.beta2.reshape(r, n))
        color = px.c_bar
        if np.any(self.background):
            color = color + px.residual_transmittance.reshape(r, 1) * ad.const(self.background)
        return px, color

    def render_image(self, view: PosedImage, it: int, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        """Forward-only render of a full view: (image, clamped beta_bar2 map)."""
        return self.render_camera(view.camera, it, chunk, view.view_id)

    def render_camera(self, camera, it: int, chunk: int = 2048, view_id: int = 0):
        rays = generate_rays(camera, view_id=view_id, near=self.dataset.near, far=self.dataset.far)
        colors, beta = [], []
        with ad.no_grad():
            for s in range(0, len(rays), chunk):
                px, color = self.render(rays[s:s + chunk], it, None, self.cfg.eval_samples)
                colors.append(color.data)
                beta.append(np.maximum(px.beta_bar2.data, self.cfg.beta_min))
        img = np.concatenate(colors).reshape(camera.height, camera.width, 3).astype(np.float64)
        return np.clip(img, 0.0, 1.0), np.concatenate(beta).reshape(camera.height, camera.width)

    # ------------------------------------------------------------ one step

    def step(self, it: int) -> dict:
        c, terms = self.cfg, self.cfg.terms
        if terms.decaying_blur:
            sigma = self.blur_sigma_at(it)
            if sigma != self.bank.blur_sigma:
                self.bank.set_blur(sigma)
        rng = np.random.default_rng([c.seed, it])
        batch = sample_ray_batch(self.bank, c.batch_size, rng)
        px, color = self.render(batch.rays, it, rng if c.perturb else None)
        raw = batch.raw.astype(self.dtype)
        blurred = batch.blurred.astype(self.dtype)
        weights = c.loss_weights

        if terms.two_phase:
            target = two_phase_target(it, c.phase_switch, raw, blurred)
        elif terms.decaying_blur:
            target = blurred
        else:
            target = raw
        if terms.linear:
            l_s = alt_linear_weight_loss(color, raw, batch.high_freq, linear_weight(it, c.mask_horizon))
        else:
            l_s = loss_s(color, target)

        l_u = bb = None
        if terms.adaptive:
            bb = ad.clamp_min(px.beta_bar2, c.beta_min)
            l_u = loss_u(color, bb, target if c.adaptive_target == "two-phase" else raw)
        l_r = None
        if terms.regularizer == "ray-density":
            l_r = loss_r(ray_density(px.alphas), c.s)
        elif terms.regularizer == "entropy":
            l_r = alt_entropy_loss(ray_density(px.alphas))
        elif terms.regularizer == "emptiness":
            l_r = alt_emptiness_on_w(px.weights, c.s)
        l_o = loss_o(px.weights, c.near_window)

        br = total_loss(l_s, weights, it, l_u=l_u, l_r=l_r, l_o=l_o, beta_bar2=bb)
        values = br.as_dict()
        if not all(math.isfinite(v) for v in values.values()):
            raise DivergenceError(f"non-finite loss at iteration {it}: {values}", values)
        grads = ad.backward(br.l_total, self.model.parameters)
        try:
            lr = self.opt.step(grads, it)
        except ad.NonFiniteGradientError as exc:
            raise DivergenceError(str(exc), values) from exc

        row = {"iter": it, **values}
        if terms.adaptive:
            row["mean_beta_bar2"] = br.mean_beta_bar2
        row["lr"] = lr
        if terms.regularizer:
            row["lambda_r"] = br.lambda_r
        if terms.two_phase:
            row["phase"] = int(it >= c.phase_switch)
        if terms.decaying_blur:
            row["blur_sigma"] = float(self.bank.blur_sigma)
        row["mask_frac"] = self.masks_at(it)[0].unlocked_fraction
        if terms.adaptive:
            inv = 1.0 / np.asarray(bb.data, dtype=np.float64)
            hf = batch.high_freq
            row["weight_low"] = float(inv[~hf].mean()) if (~hf).any() else math.nan
            row["weight_high"] = float(inv[hf].mean()) if hf.any() else math.nan
        return {k: row[k] for k in csv_columns(c)}

    # ------------------------------------------------------------ probes

    def probe_iters(self) -> list[int]:
        c = self.cfg
        its = {round(f * c.mask_horizon) for f in c.probe_fractions}
        return sorted(i for i in its if 0 < i <= c.total_iters)

    def probe(self, steps_done: int) -> dict:
        """Mean learned weight 1/beta_bar2 over low/high-frequency training pixels."""
        inv = []
        for v in self.dataset.train:
            _, beta = self.render_image(v, steps_done)
            inv.append(1.0 / beta.ravel())
        inv = np.concatenate(inv)
        hf = self.bank.high_freq
        return {"iter": steps_done, "weight_low": float(inv[~hf].mean()), "weight_high": float(inv[hf].mean()),
                "beta_low": float((1 / inv[~hf]).mean()), "beta_high": float((1 / inv[hf]).mean())}

    # ------------------------------------------------------------ run

    def save(self, path, iteration: int) -> Path:
        return save_checkpoint(path, self.model, iteration, {"config": self.cfg.to_dict(), "probes": self.probes},
                               self.opt.state_dict())

    def fit(self, stop_at: int | None = None) -> list[dict]:
        """Run iterations from the current state up to ``stop_at`` (default: all)."""
        c = self.cfg
        end = c.total_iters if stop_at is None else min(stop_at, c.total_iters)
        probe_at = set(self.probe_iters()) if c.terms.adaptive else set()
        for it in range(self.start_iter, end):
            row = self.step(it)
            if it % c.log_every == 0 or it == c.total_iters - 1:
                self.rows.append(row)
            if it + 1 in probe_at:
                self.probes.append(self.probe(it + 1))
            if c.checkpoint_every and (it + 1) % c.checkpoint_every == 0 and self.out_dir is not None:
                self.save(self.out_dir / f"checkpoint_{it + 1:06d}.npz", it + 1)
                (self.out_dir / "losses.csv").write_text(rows_to_csv(self.rows, csv_columns(c)))
            if it % 500 == 0:
                log.info("iter %d %s", it, {k: round(v, 5) for k, v in row.items() if k != "iter"})
        self.start_iter = end
        return self.rows

    def density_fn(self, it: int):
        pos_mask, _ = self.masks_at(it)

        def fn(pts):
            feats = masked_encode(self.normalize(np.asarray(pts)), self.cfg.k_pos, pos_mask)
            return np.concatenate([self.model.density(feats[s:s + 65536]) for s in range(0, len(feats), 65536)])

        return fn

    def evaluate(self, views: list[PosedImage], it: int | None = None) -> tuple[EvalReport, list[np.ndarray]]:
        it = self.cfg.total_iters if it is None else it
        preds = [self.render_image(v, it)[0] for v in views]
        report = evaluate_images(preds, [v.pixels for v in views], [v.view_id for v in views],
                                 self.cfg.edge_threshold)
        return report, preds

    def finish(self) -> RunResult:
        it = self.cfg.total_iters
        report, preds = self.evaluate(self.dataset.test, it) if self.dataset.test else (None, [])
        fm = None
        scene_cfg = self.dataset.meta.get("scene_config")
        if scene_cfg:
            fm = floater_mass(self.density_fn(it), scene_from_dict(scene_cfg))
        result = RunResult(self.cfg, self.rows, report, self.probes, fm, self.out_dir)
        if self.out_dir is not None:
            write_run(self, result, preds)
        return result


def write_run(trainer: Trainer, result: RunResult, preds: list[np.ndarray]) -> None:
    out = trainer.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dump_config(trainer.cfg, out / "config.yaml")
    (out / "losses.csv").write_text(rows_to_csv(result.rows, csv_columns(trainer.cfg)))
    (out / "probes.json").write_text(json.dumps(result.probes, indent=2) + "\n")
    trainer.save(out / "checkpoint.npz", trainer.cfg.total_iters)
    renders = out / "renders"
    renders.mkdir(exist_ok=True)
    for v, img in zip(trainer.dataset.test, preds):
        write_png(renders / f"test_{v.view_id:03d}.png", img, 8)
    if result.report is not None:
        result.report.write(out / "eval.json")
    manifest = {
        "mode": trainer.cfg.mode,
        "iterations": trainer.cfg.total_iters,
        "psnr": None if result.report is None else result.report.psnr,
        "floater_mass": result.floater_mass,
        "files": sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def train(config: TrainConfig, dataset: Dataset, out_dir=None, resume=None) -> RunResult:
    trainer = Trainer(config, dataset, out_dir, resume)
    trainer.fit()
    return trainer.finish()


# ------------------------------------------------------------ experiments


ABLATION_ROWS = (("Baseline", "baseline"), ("Model-A", "model-a"), ("Model-B", "model-b"),
                 ("Model-C", "model-c"), ("AR", "full"))
REGULARIZER_ROWS = (("Model-C", "model-c"), ("Emptiness", "emptiness-on-w"),
                    ("Ray Density Entropy", "entropy"), ("Ray Density Reg.", "full"))
FIG6_ROWS = (("raw", "baseline"), ("blurred", "model-a"), ("adaptive", "model-b"))


def _run_modes(dataset: Dataset, base: TrainConfig, modes, out_dir, runs: dict | None,
               overrides: dict | None = None) -> dict[str, RunResult]:
    runs = {} if runs is None else runs
    for mode in modes:
        if mode in runs:
            continue
        cfg = base.replace(mode=mode, **(overrides or {}).get(mode, {}))
        sub = None if out_dir is None else Path(out_dir) / mode
        log.info("training %s", mode)
        runs[mode] = train(cfg, dataset, sub)
    return runs


def experiment_fig6(dataset: Dataset, base: TrainConfig, out_dir=None, runs: dict | None = None,
                    unlocked: float = 0.1) -> list[dict]:
    """Low-frequency PSNR with the mask pinned at ``unlocked`` under three supervisions:
    raw targets, blurred targets for the whole run, and the adaptive loss."""
    base = base.replace(frozen_mask_fraction=unlocked)
    overrides = {"model-a": {"phase_switch": base.total_iters}}
    runs = _run_modes(dataset, base, [m for _, m in FIG6_ROWS], out_dir, runs, overrides)
    return [{"supervision": name, "mode": mode, "psnr_low": runs[mode].report.psnr_low,
             "psnr_high": runs[mode].report.psnr_high, "psnr": runs[mode].report.psnr}
            for name, mode in FIG6_ROWS]


def experiment_ablation(dataset: Dataset, base: TrainConfig, out_dir=None,
                        runs: dict | None = None) -> list[dict]:
    runs = _run_modes(dataset, base, [m for _, m in ABLATION_ROWS], out_dir, runs)
    return [{"model": name, "mode": mode, "psnr": runs[mode].report.psnr, "ssim": runs[mode].report.ssim,
             "aggregate": runs[mode].report.aggregate} for name, mode in ABLATION_ROWS]


def experiment_compare_reg(dataset: Dataset, base: TrainConfig, out_dir=None,
                           runs: dict | None = None) -> list[dict]:
    runs = _run_modes(dataset, base, [m for _, m in REGULARIZER_ROWS], out_dir, runs)
    return [{"regularizer": name, "mode": mode, "psnr": runs[mode].report.psnr, "ssim": runs[mode].report.ssim,
             "aggregate": runs[mode].report.aggregate, "floater_mass": runs[mode].floater_mass}
            for name, mode in REGULARIZER_ROWS]


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[c] + [(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c])) for r in rows] for c in cols]
    widths = [max(len(x) for x in col) for col in cells]
    lines = []
    for i in range(len(rows) + 1):
        lines.append("  ".join(col[i].rjust(w) for col, w in zip(cells, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
