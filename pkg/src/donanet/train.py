"""SGD training loop, evaluation and the variant ablation harness."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .ctst import stylize_batch
from .data import GenConfig, ImagePairSample, generate_dataset, load_manifest_samples, stack_samples
from .losses import LossConfig, PixelLabels, total_loss
from .metrics import MetricsReport, binarize, confusion, metrics
from .network import NetConfig, SDNetwork, load_checkpoint, save_checkpoint
from .tensor import no_grad

VARIANTS = {
    "base": ("none", False),
    "gln": ("gln", False),
    "glw": ("glw", False),
    "glw+ctst": ("glw", True),
}


class NumericFailure(RuntimeError):
    """Raised when a loss turns non-finite."""


@dataclass
class TrainConfig:
    lr0: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-8
    poly_power: float = 0.9
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    ddr_variant: str = "none"
    lam: int = 6
    lambda_prime: int = 8
    ctst_enabled: bool = False
    ctcr_weight: float = 1.0
    alpha: float = 2.0
    beta: float = 0.002
    lambda_w: float = 1.5
    newton_t: int = 5
    # network size; the defaults are the full encoder
    widths: tuple = (64, 128, 256)
    blocks_per_stage: int = 2
    # data: manifests if given, otherwise synthetic pairs
    train_manifest: str | None = None
    val_manifest: str | None = None
    train_pairs: int = 400
    val_pairs: int = 50
    image_size: int = 64
    style_strength: float = 0.25
    data_seed: int = 1234
    threshold: float = 0.5

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch statistics)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        self.widths = tuple(self.widths)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.beta, self.lambda_w, self.ctcr_weight)

    def net_config(self) -> NetConfig:
        return NetConfig(widths=self.widths, blocks_per_stage=self.blocks_per_stage, variant=self.ddr_variant,
                         lam=self.lam, newton_t=self.newton_t, seed=self.seed)

    def gen_config(self) -> GenConfig:
        return GenConfig(size=self.image_size, style_strength=self.style_strength)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    step: int = 0
    total_steps: int = 1
    velocity: dict = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    best_f1: float = -1.0
    losses: list = field(default_factory=list)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return cfg.lr0
    return cfg.lr0 * (1.0 - step / total_steps) ** cfg.poly_power


def sgd_step(params, grads, state: TrainState, lr: float, cfg: TrainConfig) -> None:
    """Momentum SGD; weight decay touches convolution weights (4-D) only.

    ``grads`` may be None to read each parameter's ``.grad``. Gradients are
    zeroed afterwards.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ValueError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
        v = state.velocity.get(i)
        if v is None:
            v = state.velocity[i] = np.zeros_like(p.data)
        elif v.shape != p.data.shape:
            raise ValueError(f"momentum buffer shape {v.shape} does not match parameter shape {p.data.shape}")
        v *= cfg.momentum
        v += g
        if p.data.ndim == 4 and cfg.weight_decay:
            v += cfg.weight_decay * p.data
        p.data -= (lr * v).astype(p.data.dtype)
        p.grad = None


def train_step(batch, net: SDNetwork, state: TrainState, cfg: TrainConfig) -> float:
    """One original (+ stylized) forward/backward and parameter update."""
    xa, xb, mask = batch
    if xa.shape[0] < 2:
        raise ValueError("a training batch needs at least 2 pairs")
    dtype = np.dtype(net.cfg.dtype)
    xa = np.asarray(xa, dtype=dtype)
    xb = np.asarray(xb, dtype=dtype)
    labels = PixelLabels.from_mask(mask)
    out_ori = net.forward_pair(xa, xb, training=True)
    out_sty = None
    if cfg.ctst_enabled:
        sa, sb, _ = stylize_batch(xa.astype(np.float64), xb.astype(np.float64), state.rng, cfg.lambda_prime)
        out_sty = net.forward_pair(sa.astype(dtype), sb.astype(dtype), training=True)
    for out in (out_ori, out_sty):
        if out is not None and not np.all(np.isfinite(out.p_out.data)):
            raise NumericFailure(f"non-finite prediction at step {state.step}")
    loss, _ = total_loss(out_ori, out_sty, labels, cfg.loss_config())
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericFailure(f"non-finite loss {value} at step {state.step}")
    net.zero_grad()
    loss.backward()
    params = net.parameters()
    sgd_step(params, None, state, lr_at(state.step, state.total_steps, cfg), cfg)
    state.step += 1
    state.losses.append(value)
    return value


def _samples(source) -> list[ImagePairSample]:
    if isinstance(source, (str, os.PathLike)):
        return load_manifest_samples(source)
    return list(source)


def predict_batches(net: SDNetwork, samples, batch_size: int = 8):
    """Eval-mode probability maps ``H x W`` for each sample, in order."""
    dtype = np.dtype(net.cfg.dtype)
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            xa, xb, _ = stack_samples(samples[i:i + batch_size])
            res = net.forward_pair(xa.astype(dtype), xb.astype(dtype), training=False)
            out.extend(res.p_out.data[:, 0])
    return out


def evaluate(net: SDNetwork, manifest, threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    """Micro-averaged metrics over a manifest path or a list of samples."""
    samples = _samples(manifest)
    if not samples:
        raise ValueError("evaluation set is empty")
    counts = np.zeros(4, dtype=np.int64)
    for s, p in zip(samples, predict_batches(net, samples, batch_size)):
        counts += confusion(binarize(p, threshold), s.mask)
    return metrics(counts)


def pseudo_change_fp(net: SDNetwork, samples, threshold: float = 0.5, min_shift: float = 0.02) -> int:
    """False positives on unchanged pixels whose colour the style stage moved."""
    fp = 0
    for s, p in zip(samples, predict_batches(net, samples)):
        if s.style_shift is None:
            raise ValueError("pseudo-change counting needs samples carrying a style-shift map")
        target = (s.mask == 0) & (s.style_shift > min_shift)
        fp += int(np.count_nonzero((binarize(p, threshold) == 1) & target))
    return fp


def load_data(cfg: TrainConfig):
    if cfg.train_manifest:
        train = load_manifest_samples(cfg.train_manifest)
    else:
        train = generate_dataset(cfg.train_pairs, cfg.gen_config(), cfg.data_seed)
    if cfg.val_manifest:
        val = load_manifest_samples(cfg.val_manifest)
    else:
        val = generate_dataset(cfg.val_pairs, cfg.gen_config(), cfg.data_seed + 1)
    return train, val


def fit(cfg: TrainConfig, train, val=None, out_dir=None, log=None):
    """Train from scratch; returns ``(net, state)``.

    With ``out_dir`` the initial weights, the best-validation checkpoint and
    the last good epoch are written there. A non-finite loss raises
    :class:`NumericFailure` without touching the saved checkpoints.
    """
    net = SDNetwork(cfg.net_config())
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = len(train) // cfg.batch_size
    if cfg.epochs and steps_per_epoch == 0:
        raise ValueError(f"need at least batch_size={cfg.batch_size} training pairs")
    state = TrainState(total_steps=steps_per_epoch * cfg.epochs, rng=rng)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(net, os.path.join(out_dir, "init.ckpt"))
        if cfg.epochs == 0:
            save_checkpoint(net, os.path.join(out_dir, "best.ckpt"))
    xa_all, xb_all, mask_all = stack_samples(train) if train else (None, None, None)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        losses = []
        for k in range(steps_per_epoch):
            idx = np.sort(order[k * cfg.batch_size:(k + 1) * cfg.batch_size])
            losses.append(train_step((xa_all[idx], xb_all[idx], mask_all[idx]), net, state, cfg))
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "seconds": time.perf_counter() - t0}
        if val:
            rep = evaluate(net, val, cfg.threshold)
            row["val_f1"] = rep.f1
            if out_dir and rep.f1 > state.best_f1:
                save_checkpoint(net, os.path.join(out_dir, "best.ckpt"))
            state.best_f1 = max(state.best_f1, rep.f1)
        if out_dir:
            save_checkpoint(net, os.path.join(out_dir, "last.ckpt"))
            if not val:
                save_checkpoint(net, os.path.join(out_dir, "best.ckpt"))
        history.append(row)
        if log:
            log(row)
    if out_dir:
        with open(os.path.join(out_dir, "history.json"), "w", encoding="utf-8") as fh:
            json.dump({"config": cfg.to_dict(), "epochs": history, "losses": state.losses}, fh, indent=2)
    return net, state


def train(cfg: TrainConfig, out_dir, log=None):
    tr, val = load_data(cfg)
    return fit(cfg, tr, val, out_dir, log)


# -- ablation ---------------------------------------------------------------

@dataclass
class AblationConfig:
    variants: tuple = ("base", "gln", "glw", "glw+ctst")
    seeds: tuple = (0, 1, 2)
    train_pairs: int = 400
    test_pairs: int = 100
    image_size: int = 64
    style_strength: float = 0.25
    epochs: int = 30
    data_seed: int = 2024
    train: dict = field(default_factory=dict)  # extra TrainConfig overrides


def run_ablation(acfg: AblationConfig, log=None, results_path=None) -> dict:
    """Train every variant for every seed on one shared synthetic split.

    Returns a table of per-run test metrics plus per-variant medians. With
    ``results_path`` the table is rewritten after every finished run so a
    long job can be inspected while it progresses.
    """
    gen = GenConfig(size=acfg.image_size, style_strength=acfg.style_strength)
    train_set = generate_dataset(acfg.train_pairs, gen, acfg.data_seed)
    test_set = generate_dataset(acfg.test_pairs, gen, acfg.data_seed + 1)
    runs = []
    table = {"config": dataclasses.asdict(acfg), "runs": runs, "summary": {}}
    for variant in acfg.variants:
        ddr, ctst = VARIANTS[variant]
        for seed in acfg.seeds:
            cfg = TrainConfig(**{**acfg.train, "epochs": acfg.epochs, "seed": seed, "ddr_variant": ddr,
                                 "ctst_enabled": ctst, "image_size": acfg.image_size,
                                 "style_strength": acfg.style_strength})
            t0 = time.perf_counter()
            net, state = fit(cfg, train_set)
            rep = evaluate(net, test_set, cfg.threshold)
            run = {"variant": variant, "seed": seed, **rep.as_dict(),
                   "pseudo_fp": pseudo_change_fp(net, test_set, cfg.threshold),
                   "final_loss": state.losses[-1] if state.losses else None,
                   "seconds": time.perf_counter() - t0}
            runs.append(run)
            table["summary"] = summarize(runs)
            if log:
                log(run)
            if results_path:
                with open(results_path, "w", encoding="utf-8") as fh:
                    json.dump(table, fh, indent=2)
    return table


def summarize(runs) -> dict:
    out = {}
    for variant in dict.fromkeys(r["variant"] for r in runs):
        rs = [r for r in runs if r["variant"] == variant]
        out[variant] = {
            "median_f1": float(np.median([r["f1"] for r in rs])),
            "median_iou": float(np.median([r["iou"] for r in rs])),
            "median_pseudo_fp": float(np.median([r["pseudo_fp"] for r in rs])),
            "runs": len(rs),
        }
    return out


def ablation_verdict(summary: dict) -> dict:
    """Check the ordering base <= gln <= glw <= glw+ctst and the two margins."""
    f1 = [summary[v]["median_f1"] for v in ("base", "gln", "glw", "glw+ctst")]
    ordered = all(a <= b for a, b in zip(f1, f1[1:]))
    spread = 100.0 * (f1[3] - f1[0])
    fp0 = summary["base"]["median_pseudo_fp"]
    fp3 = summary["glw+ctst"]["median_pseudo_fp"]
    fp_drop = (fp0 - fp3) / fp0 if fp0 > 0 else 0.0
    return {"ordered": ordered, "spread_points": spread, "pseudo_fp_drop": fp_drop,
            "passed": bool(ordered and spread >= 1.0 and fp_drop >= 0.2)}


__all__ = [
    "TrainConfig", "TrainState", "NumericFailure", "lr_at", "sgd_step", "train_step", "evaluate",
    "pseudo_change_fp", "fit", "train", "AblationConfig", "run_ablation", "ablation_verdict", "load_checkpoint",
]
