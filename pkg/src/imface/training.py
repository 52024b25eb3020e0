"""Auto-decoder training and test-time latent fitting.

Training jointly optimizes the network parameters and one expression code
per scan plus one identity code per identity, with Adam on everything.
Embedding rows use sparse Adam semantics: moments and step counts live per
row and advance only when the row receives gradient, so untouched rows stay
bit-identical.  Neutral scans bypass the expression warp, so their rows are
never updated.  Serial execution with a fixed seed is fully deterministic.

Fitting freezes the network and optimizes two fresh zero-initialized codes
against the reconstruction, Eikonal, and prior terms only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from imface import autodiff as ad
from imface import model as M
from imface.checkpoint import save_checkpoint
from imface.losses import LossBreakdown, LossWeights, ScanBatch, total_loss
from imface.preprocess import SampleSet


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite or fitting runs away."""


@dataclass
class TrainConfig:
    epochs: int = 1500
    lr: float = 1e-4
    lr_decay: float = 0.95
    lr_decay_every: int = 10
    lr_decay_start: int = 200
    batch_scans: int = 72
    surface_per_scan: int = 512
    volume_per_scan: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_scans <= 0:
            raise ValueError("epochs and batch_scans must be positive")
        if self.surface_per_scan <= 0 or self.volume_per_scan < 0:
            raise ValueError("per-scan sample counts must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class FitConfig:
    iterations: int = 1000
    lr: float = 1e-3
    surface_per_step: int = 512
    volume_per_step: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    divergence_factor: float = 10.0


@dataclass
class TrainingScan:
    """One preprocessed scan wired up for training."""

    scan_id: str
    identity_id: str
    neutral: bool
    surface: SampleSet
    volume: SampleSet
    landmarks: np.ndarray
    neutral_landmarks: np.ndarray = None
    scan_index: int = -1
    ident_index: int = -1


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if epoch < cfg.lr_decay_start:
        return cfg.lr
    steps = (epoch - cfg.lr_decay_start) // cfg.lr_decay_every
    return cfg.lr * cfg.lr_decay**steps


def prepare_scans(scans: list[TrainingScan]) -> list[TrainingScan]:
    """Assign table rows and neutral landmark labels; validate neutrals exist."""
    identities = sorted({s.identity_id for s in scans})
    ident_index = {iid: i for i, iid in enumerate(identities)}
    neutral_lm = {}
    for s in scans:
        if s.neutral:
            neutral_lm[s.identity_id] = s.landmarks
    missing = [iid for iid in identities if iid not in neutral_lm]
    if missing:
        raise ValueError(f"identities lacking a neutral scan: {missing}")
    for i, s in enumerate(scans):
        s.scan_index = i
        s.ident_index = ident_index[s.identity_id]
        s.neutral_landmarks = neutral_lm[s.identity_id]
    return scans


def compute_template_landmarks(scans: list[TrainingScan]) -> np.ndarray:
    """Mean of the neutral-space landmark labels over all training scans."""
    if not scans:
        raise ValueError("empty dataset")
    return np.mean([s.neutral_landmarks for s in scans], axis=0)


class Adam:
    """Adam with per-parameter state; embedding tables get per-row step counts."""

    def __init__(self, beta1: float, beta2: float, eps: float):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, np.ndarray | int] = {}

    def _ensure(self, name, shape, rows=None):
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
            self.t[name] = np.zeros(shape[0], dtype=np.int64) if rows else 0

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self._ensure(name, param.shape)
        self.t[name] += 1
        t = self.t[name]
        m = self.m[name]
        v = self.v[name]
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        mhat = m / (1 - self.beta1**t)
        vhat = v / (1 - self.beta2**t)
        param -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def step_rows(self, name: str, table: np.ndarray, row: int, grad: np.ndarray, lr: float) -> None:
        self._ensure(name, table.shape, rows=True)
        self.t[name][row] += 1
        t = int(self.t[name][row])
        m = self.m[name][row]
        v = self.v[name][row]
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        mhat = m / (1 - self.beta1**t)
        vhat = v / (1 - self.beta2**t)
        table[row] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def _subsample(scan: TrainingScan, cfg: TrainConfig, rng: np.random.Generator) -> ScanBatch:
    ns = min(cfg.surface_per_scan, len(scan.surface))
    nv = min(cfg.volume_per_scan, len(scan.volume))
    si = rng.choice(len(scan.surface), size=ns, replace=False)
    vi = rng.choice(len(scan.volume), size=nv, replace=False)
    points = np.concatenate([scan.surface.points[si], scan.volume.points[vi]])
    sdf = np.concatenate([scan.surface.sdf[si], scan.volume.sdf[vi]])
    return ScanBatch(
        points=points,
        n_surface=ns,
        normals=scan.surface.gradients[si],
        sdf=sdf,
        neutral=scan.neutral,
        z_expr=None,
        z_ident=None,
        landmarks=scan.landmarks,
        neutral_landmarks=scan.neutral_landmarks,
    )


def _global_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    model_config: M.ModelConfig
    log: list[dict] = field(default_factory=list)
    template_landmarks: np.ndarray = None


def train(scans: list[TrainingScan], model_cfg: M.ModelConfig, train_cfg: TrainConfig,
          weights: LossWeights = LossWeights(), out_dir=None, manifest_digest: str = "",
          step_callback=None) -> TrainResult:
    """Optimize network parameters and embedding tables on a scan collection.

    Writes ``training_log.csv`` and periodic checkpoints when ``out_dir`` is
    given.  ``step_callback(step, breakdown, grads_by_name)`` runs after each
    step when provided (used by the invariant tests).
    """
    scans = prepare_scans(scans)
    n_ids = len({s.identity_id for s in scans})
    template_lm = compute_template_landmarks(scans)
    params = M.init_params(model_cfg, len(scans), n_ids, template_lm, seed=train_cfg.seed)
    dense_names = M.trainable_names(params)

    adam = Adam(train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    rng = np.random.default_rng(train_cfg.seed)
    log: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    step = 0
    for epoch in range(train_cfg.epochs):
        lr = learning_rate(train_cfg, epoch)
        order = rng.permutation(len(scans))
        for start in range(0, len(scans), train_cfg.batch_scans):
            batch_scans = [scans[i] for i in order[start : start + train_cfg.batch_scans]]
            with ad.Tape():
                leaves = {n: ad.leaf(params[n]) for n in dense_names}
                leaves["template.landmarks"] = ad.constant(params["template.landmarks"])
                expr_leaves: dict[int, ad.Node] = {}
                ident_leaves: dict[int, ad.Node] = {}
                batches = []
                for s in batch_scans:
                    if s.scan_index not in expr_leaves:
                        expr_leaves[s.scan_index] = ad.leaf(params["embed.expr"][s.scan_index])
                    if s.ident_index not in ident_leaves:
                        ident_leaves[s.ident_index] = ad.leaf(params["embed.ident"][s.ident_index])
                    b = _subsample(s, train_cfg, rng)
                    b.z_expr = expr_leaves[s.scan_index]
                    b.z_ident = ident_leaves[s.ident_index]
                    batches.append(b)

                total, _, breakdown = total_loss(leaves, model_cfg, batches, weights)
                if not np.isfinite(breakdown.total):
                    _dump_diagnostics(out, step, batches, breakdown)
                    raise TrainingDiverged(
                        f"non-finite loss at step {step}: {breakdown.as_dict()}"
                    )

                # expression rows of neutral scans receive no update by design
                expr_rows = [i for i in expr_leaves if not scans[i].neutral]
                wrt = (
                    [leaves[n] for n in dense_names]
                    + [expr_leaves[i] for i in expr_rows]
                    + [ident_leaves[j] for j in ident_leaves]
                )
                grads = [g.value for g in ad.grad(total, wrt, build_graph=False)]

            gnorm = _global_norm(grads)
            clipped = train_cfg.clip_norm > 0 and gnorm > train_cfg.clip_norm
            if clipped:
                scale = train_cfg.clip_norm / gnorm
                grads = [g * scale for g in grads]

            k = len(dense_names)
            for name, g in zip(dense_names, grads[:k]):
                adam.step(name, params[name], g, lr)
            for row, g in zip(expr_rows, grads[k : k + len(expr_rows)]):
                adam.step_rows("embed.expr", params["embed.expr"], row, g, lr)
            for row, g in zip(ident_leaves, grads[k + len(expr_rows) :]):
                adam.step_rows("embed.ident", params["embed.ident"], row, g, lr)

            entry = {"step": step, "epoch": epoch, "lr": lr, "grad_norm": gnorm,
                     "clipped": int(clipped), **breakdown.as_dict()}
            log.append(entry)
            if step_callback is not None:
                named = dict(zip(dense_names, grads[:k]))
                step_callback(step, breakdown, named)
            step += 1

        if out is not None and train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch + 1:05d}.imfc", params, model_cfg,
                            manifest_digest, {"epoch": epoch + 1, "step": step})

    if out is not None:
        save_checkpoint(out / "checkpoint_final.imfc", params, model_cfg, manifest_digest,
                        {"epoch": train_cfg.epochs, "step": step})
        write_log_csv(out / "training_log.csv", log)
    return TrainResult(params=params, model_config=model_cfg, log=log,
                       template_landmarks=template_lm)


def write_log_csv(path, log: list[dict]) -> None:
    if not log:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(log[0].keys()))
        writer.writeheader()
        writer.writerows(log)


def _dump_diagnostics(out, step, batches, breakdown) -> None:
    if out is None:
        return
    blob = {f"points_{i}": b.points for i, b in enumerate(batches)}
    blob.update({f"sdf_{i}": b.sdf for i, b in enumerate(batches)})
    np.savez(out / f"diagnostic_step{step}.npz", **blob,
             terms=np.array(list(breakdown.as_dict().values())))


@dataclass
class FitResult:
    z_expr: np.ndarray
    z_ident: np.ndarray
    log: list[dict]
    breakdown: LossBreakdown


def fit_latent(surface: SampleSet, volume: SampleSet, params: dict, model_cfg: M.ModelConfig,
               fit_cfg: FitConfig, weights: LossWeights = LossWeights()) -> FitResult:
    """Optimize fresh embedding codes for an unseen scan against a frozen network.

    Only the reconstruction, Eikonal, and prior terms are active.  Aborts
    with TrainingDiverged when the loss exceeds ``divergence_factor`` times
    its initial value.
    """
    rng = np.random.default_rng(fit_cfg.seed)
    z_expr = np.zeros(model_cfg.expr_dim)
    z_ident = np.zeros(model_cfg.ident_dim)
    adam = Adam(fit_cfg.beta1, fit_cfg.beta2, fit_cfg.adam_eps)
    log: list[dict] = []
    initial_total = None
    breakdown = None

    for it in range(fit_cfg.iterations):
        ns = min(fit_cfg.surface_per_step, len(surface))
        nv = min(fit_cfg.volume_per_step, len(volume))
        si = rng.choice(len(surface), size=ns, replace=False)
        vi = rng.choice(len(volume), size=nv, replace=False)
        batch = ScanBatch(
            points=np.concatenate([surface.points[si], volume.points[vi]]),
            n_surface=ns,
            normals=surface.gradients[si],
            sdf=np.concatenate([surface.sdf[si], volume.sdf[vi]]),
            neutral=False,
            z_expr=None,
            z_ident=None,
        )
        with ad.Tape():
            ze = ad.leaf(z_expr)
            zi = ad.leaf(z_ident)
            batch.z_expr, batch.z_ident = ze, zi
            total, _, breakdown = total_loss(params, model_cfg, [batch], weights,
                                             landmark_terms=False)
            if not np.isfinite(breakdown.total):
                raise TrainingDiverged(f"non-finite fitting loss at iteration {it}")
            if initial_total is None:
                initial_total = max(breakdown.total, 1e-12)
            if breakdown.total > fit_cfg.divergence_factor * initial_total:
                raise TrainingDiverged(
                    f"fitting diverged at iteration {it}: {breakdown.total:.3e} vs "
                    f"initial {initial_total:.3e}"
                )
            ge, gi = (g.value for g in ad.grad(total, [ze, zi], build_graph=False))
        adam.step("z_expr", z_expr, ge, fit_cfg.lr)
        adam.step("z_ident", z_ident, gi, fit_cfg.lr)
        log.append({"step": it, **breakdown.as_dict()})
    return FitResult(z_expr=z_expr, z_ident=z_ident, log=log, breakdown=breakdown)
