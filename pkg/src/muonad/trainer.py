"""The composed distillation loop and its gradient check.

Order of operations inside one iteration:

1. read phase, lr and style weight from the curriculum
2. forward with the current layer keep-mask
3. style (distillation) and content gradients
4. conflict surgery, plus magnitude balancing in phase III
5. projection of the summed gradient off the latent direction
6. Muon or AdamW update, then channel mask / frozen entries / quantization
7. importance scores; entropy and channel re-masking every ``remask_every``
8. curriculum step on the validation distance, memory ledger, logging
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import curriculum as cur
from .config import ExperimentConfig
from .io import tensor_to_json
from .metrics import GaussianFit, MemoryLedger, frechet_distance, peak_memory, ssim
from .muon import AdamWState, MuonState, adamw_step, latent_update
from .precision import PrecisionTag, assign_precision, frozen_mask, quantize_tagged
from .pruning import (ImportanceScores, PruneMask, attention_entropy, channel_importance,
                      keep_layers, memory_eff, retention_schedule, select_channels, with_name)
from .surgery import balance_magnitudes, cos_angle, latent_project, project_conflict
from .tensor import RNG_ALGORITHM, draw_normal, make_rng
from .testbed import ToyModel, forward, loss_and_grads, objective

ROW_FIELDS = (
    "iteration", "phase", "L_distill", "L_content", "L_total", "lambda_style", "lr",
    "kept_layer_count", "density", "cos_theta", "projected", "z_dot_g", "val_distance",
    "peak_memory", "wall_time",
)

BYTES = {PrecisionTag.HIGH_RANGE_16: 2, PrecisionTag.HIGH_PREC_16: 2, PrecisionTag.FULL_64: 8}


@dataclass
class Problem:
    """Frozen model plus the targets a run distils towards."""

    model: ToyModel
    z0: np.ndarray
    teacher_latent: np.ndarray
    content_latent: np.ndarray
    teacher: object
    content_target: np.ndarray

    def targets(self, layer_mask=None):
        """Teacher trace and content features through the same (possibly pruned) stack."""
        teacher = forward(self.model, self.teacher_latent, layer_mask)
        return teacher, forward(self.model, self.content_latent, layer_mask).features


def build_problem(config: ExperimentConfig) -> Problem:
    model = ToyModel.from_config(config.toy_model_config())
    # latent draws use a stream distinct from the weight stream
    rng = make_rng((config.seed + 0x9E3779B97F4A7C15) % 2**64)
    shape = model.cfg.latent_shape
    scale = config.model.latent_scale
    z_teacher = draw_normal(rng, shape) * scale
    z_content = z_teacher + config.model.content_shift * scale * draw_normal(rng, shape)
    z0 = z_teacher + config.model.init_shift * scale * draw_normal(rng, shape)
    teacher = forward(model, z_teacher)
    content_target = forward(model, z_content).features
    return Problem(model, z0, z_teacher, z_content, teacher, content_target)


def render(trace) -> np.ndarray:
    """Attention maps tiled into one [0, 1] image (grid of ceil(sqrt(L)) columns)."""
    maps = [m.weights for m in trace.attn_maps]
    n = maps[0].shape[0]
    cols = int(np.ceil(np.sqrt(len(maps))))
    rows = int(np.ceil(len(maps) / cols))
    img = np.zeros((rows * n, cols * n))
    for i, m in enumerate(maps):
        r, c = divmod(i, cols)
        img[r * n:(r + 1) * n, c * n:(c + 1) * n] = m
    return img


def render_ssim(a, b) -> float:
    side = min(a.shape)
    window = min(11, side if side % 2 else side - 1)
    return ssim(a, b, window)


def feature_distance(features_a, features_b) -> float:
    return frechet_distance(GaussianFit.from_samples(features_a), GaussianFit.from_samples(features_b))


@dataclass
class RunRecord:
    config: dict
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    masks: list = field(default_factory=list)
    curriculum: list = field(default_factory=list)
    final_latent: np.ndarray | None = None
    layer_mask: PruneMask | None = None

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "rng_algorithm": RNG_ALGORITHM,
            "rows": self.rows,
            "summary": self.summary,
            "masks": [m.to_json() for m in self.masks],
            "curriculum_snapshots": self.curriculum,
            "final_latent": None if self.final_latent is None else tensor_to_json(self.final_latent),
        }


def _layer_mask(model, z, beta) -> PruneMask:
    trace = forward(model, z)
    return keep_layers([attention_entropy(m.weights) for m in trace.attn_maps], beta)


def run_train(config: ExperimentConfig, *, on_row=None) -> RunRecord:
    """Run one experiment; deterministic in ``config`` apart from ``wall_time``."""
    t_start = time.perf_counter()
    prob = build_problem(config)
    model = prob.model
    z = prob.z0.copy()
    shape = z.shape
    size = z.size
    n = model.cfg.token_count
    L = model.cfg.num_layers

    opt = config.optimizer
    if opt.name == "muon":
        opt_state = MuonState.zeros_like(z, momentum_coeff=opt.momentum, ns_steps=opt.ns_steps)
    else:
        opt_state = AdamWState.zeros_like(z, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps,
                                          weight_decay=opt.weight_decay)

    surgery = config.surgery
    surgery_cfg = config.surgery_config()
    pruning = config.pruning
    prune_cfg = config.prune_config()
    use_layers = pruning.enabled and pruning.layers
    use_channels = pruning.enabled and pruning.channels
    schedule_len = pruning.schedule_iters or config.curriculum.total_iters
    mixed = config.precision == "mixed"

    cstate = cur.initial_state(config.curriculum.total_iters, config.curriculum.eta_lambda)
    layer_mask = None
    channel = np.ones(size)
    scores = ImportanceScores()
    tags = [PrecisionTag.HIGH_RANGE_16 if mixed else PrecisionTag.FULL_64] * size
    tag_bytes = np.array([BYTES[tg] for tg in tags])
    ledger = MemoryLedger()
    teacher, content_target = prob.teacher, prob.content_target
    teacher_features = teacher.features
    param_bytes = sum(a.size for a in (model.wq, model.wk, model.wv)) * 8 // L

    record = RunRecord(config.to_dict())
    hit_at = None
    distill = content = total = 0.0
    t = 0
    for t in range(config.max_iters + 1):
        # (1) schedule
        if config.curriculum.enabled:
            lr, lam_style, mask_k = cstate.lr, cstate.lambda_style, cstate.mask_k
            balancing = cstate.balance_gradients and surgery.balance
            phase = cstate.phase.name
        else:
            lr, lam_style, mask_k = opt.lr, cur.LAMBDA_STYLE_INIT, pruning.k
            balancing = False
            phase = "-"
        lam_content = 1.0 / lam_style

        # (2)+(3) forward and both gradients
        lg = loss_and_grads(model, z, teacher, content_target, layer_mask)
        distill, content = lg.distill, lg.content
        total = distill + lam_content * content
        if hit_at is None and distill <= config.loss_threshold:
            hit_at = t
        val_distance = feature_distance(lg.trace.features, teacher_features)

        g_style = lg.grad_distill
        g_content = lam_content * lg.grad_content
        # (4) surgery
        cos_theta, projected = 0.0, False
        if surgery.enabled and np.any(g_style) and np.any(g_content):
            cos_theta = cos_angle(g_style, g_content)
            g_style, report = project_conflict(g_style, g_content, surgery_cfg)
            projected = report.projected
            if balancing and np.any(g_style):
                g_style = balance_magnitudes(g_style, g_content, surgery_cfg.gamma)
        g = g_style + g_content
        # (5) latent projection
        if surgery.latent_project and np.any(z):
            g = latent_project(z, g)
        gnorm, znorm = np.linalg.norm(g), np.linalg.norm(z)
        z_dot_g = float(abs(np.vdot(z, g)) / (znorm * gnorm)) if gnorm > 0 and znorm > 0 else 0.0

        done = t == config.max_iters or (config.stop_at_threshold and hit_at is not None)
        density = memory_eff([channel], [z])[0]
        kept = L if layer_mask is None else layer_mask.kept
        live = (channel != 0) & (z.ravel() != 0)
        geometry = int(tag_bytes[live].sum())
        ledger.record(geometry + kept * param_bytes, kept * n * n * 8, t)
        if t % config.log_every == 0 or done:
            row = {
                "iteration": t, "phase": phase, "L_distill": distill, "L_content": content,
                "L_total": total, "lambda_style": lam_style, "lr": lr, "kept_layer_count": kept,
                "density": density, "cos_theta": cos_theta, "projected": projected,
                "z_dot_g": z_dot_g, "val_distance": val_distance,
                "peak_memory": float(peak_memory(ledger)),
                "wall_time": time.perf_counter() - t_start,
            }
            record.rows.append(row)
            if on_row is not None:
                on_row(row)
            if config.curriculum.enabled:
                record.curriculum.append(cstate.to_json())
        if done:
            break

        # (6) update
        if opt.name == "muon":
            z_new, opt_state = latent_update(z, g, lr, opt_state)
        else:
            z_new, opt_state = adamw_step(opt_state, z, g, lr)
        # pruned and HP16-tagged entries keep their value
        flow = channel * frozen_mask(tags) if mixed else channel
        z_new = np.where(flow.reshape(shape) > 0, z_new, z)
        if mixed:
            z_new = quantize_tagged(z_new, tags)
        z = z_new

        # (7) scores and masks
        if use_channels or mixed:
            scores = channel_importance(lg.grad_distill + lam_content * lg.grad_content, z,
                                        scores, prune_cfg)
        if (t + 1) % pruning.remask_every == 0:
            if use_layers:
                new_mask = _layer_mask(model, z, prune_cfg.beta)
                if layer_mask is None or new_mask.bits != layer_mask.bits:
                    layer_mask = new_mask
                    teacher, content_target = prob.targets(layer_mask)
                    teacher_features = teacher.features
            if use_channels:
                keep = retention_schedule(t + 1, schedule_len, pruning.start_retention,
                                          pruning.final_retention)
                channel = select_channels(scores.scores, keep, mask_k, prune_cfg.tau_imp).array()
            if mixed:
                tags = assign_precision(scores.normalized(), prune_cfg.tau_imp)
                tag_bytes = np.array([BYTES[tg] for tg in tags])

        # (8) curriculum
        if config.curriculum.enabled:
            cstate = cur.step(cstate, val_distance)

    final_trace = forward(model, z, layer_mask)
    teacher_img = render(teacher)
    record.final_latent = z
    record.layer_mask = layer_mask
    record.masks = [with_name(PruneMask(channel.astype(int)), "latent")]
    if layer_mask is not None:
        record.masks.append(with_name(layer_mask, "layers"))
    record.summary = {
        "label": config.label,
        "iterations_to_threshold": hit_at,
        "iterations_run": t,
        "final_L_distill": distill,
        "final_L_content": content,
        "final_L_total": total,
        "final_density": record.rows[-1]["density"],
        "frechet_distance": feature_distance(final_trace.features, teacher_features),
        "ssim_vs_teacher_render": render_ssim(render(final_trace), teacher_img),
        "peak_memory": float(peak_memory(ledger)),
        "wall_time": time.perf_counter() - t_start,
    }
    return record


def finite_difference_grad(fn, z, step: float = 1e-5) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp = z.copy()
        zm = z.copy()
        zp[idx] += step
        zm[idx] -= step
        out[idx] = (fn(zp) - fn(zm)) / (2 * step)
    return out


def gradcheck(config: ExperimentConfig, perturb: float = 0.0, lambda_content: float = 0.5,
              step: float = 1e-5) -> dict:
    """Max-norm relative error of the analytic latent gradient vs central differences.

    ``perturb`` is a test hook added to every analytic entry.
    """
    prob = build_problem(config)
    model = prob.model
    # evaluate away from the initial draw so no term is trivially zero
    z = prob.z0
    analytic = loss_and_grads(model, z, prob.teacher, prob.content_target)
    g = analytic.grad_distill + lambda_content * analytic.grad_content + perturb
    fd = finite_difference_grad(
        lambda x: objective(model, x, prob.teacher, prob.content_target, lambda_content), z, step)
    scale = float(np.abs(fd).max())
    err = float(np.abs(g - fd).max()) / scale if scale > 0 else float(np.abs(g - fd).max())
    return {
        "seed": config.seed,
        "num_layers": model.cfg.num_layers,
        "token_count": model.cfg.token_count,
        "embed_dim": model.cfg.embed_dim,
        "step": step,
        "max_relative_error": err,
        "passed": err <= 1e-4,
    }
