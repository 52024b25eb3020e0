"""Training objectives.

Point-sum terms are per-point means before weighting, so the weights below
work for any subsample size; landmark terms are plain sums over the five
landmarks.  The normal-alignment term is restricted to surface samples and
uses the normalized field gradient, bounding it in [0, 2]; off-surface
gradient supervision is left entirely to the Eikonal terms.  The second
Eikonal term treats the canonical-space point as a fresh differentiation
point: its value comes from the expression warp but no gradient flows back
through that warp.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from imface import autodiff as ad
from imface import model as M

_NORM_EPS = 1e-24


@dataclass(frozen=True)
class LossWeights:
    sdf_value: float = 3e3
    sdf_normal: float = 1e2
    eikonal: float = 5e1
    embedding: float = 1e6
    landmark_gen: float = 1e2
    landmark_consist: float = 1e2
    residual: float = 1e2

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")


TERM_NAMES = ("sdf", "eikonal", "embedding", "landmark_gen", "landmark_consist", "residual")


@dataclass
class LossBreakdown:
    sdf: float
    eikonal: float
    embedding: float
    landmark_gen: float
    landmark_consist: float
    residual: float

    @property
    def total(self) -> float:
        return sum(getattr(self, n) for n in TERM_NAMES)

    def as_dict(self) -> dict[str, float]:
        d = {n: getattr(self, n) for n in TERM_NAMES}
        d["total"] = self.total
        return d


@dataclass
class ScanBatch:
    """One scan's training points and labels for a step.

    ``points`` holds surface samples first (``n_surface`` of them), then
    volume samples.  ``normals`` covers the surface samples only.
    """

    points: np.ndarray
    n_surface: int
    normals: np.ndarray
    sdf: np.ndarray
    neutral: bool
    z_expr: object  # Node or ndarray
    z_ident: object
    landmarks: np.ndarray | None = None          # observed landmark labels (k, 3)
    neutral_landmarks: np.ndarray | None = None  # same identity's neutral labels (k, 3)


def _safe_norm(x, axis=-1):
    return ad.sqrt(ad.add(ad.sum_(ad.mul(x, x), axis=axis), _NORM_EPS))


def sdf_loss(pred_sdf, target_sdf, grad_points, surface_normals, n_surface: int,
             weights: LossWeights):
    """Value term over all samples plus normal alignment over surface samples."""
    value = ad.mean(ad.absolute(ad.sub(pred_sdf, target_sdf)))
    g_surf = grad_points[0:n_surface]
    g_unit = ad.div(g_surf, ad.reshape(_safe_norm(g_surf), (n_surface, 1)))
    align = ad.mean(ad.sub(1.0, ad.dot(g_unit, surface_normals)))
    return ad.add(ad.mul(weights.sdf_value, value), ad.mul(weights.sdf_normal, align))


def eikonal_loss(grad_full, grad_canonical, weights: LossWeights):
    """Unit-gradient penalty in the observation and canonical spaces."""
    e1 = ad.mean(ad.absolute(ad.sub(_safe_norm(grad_full), 1.0)))
    e2 = ad.mean(ad.absolute(ad.sub(_safe_norm(grad_canonical), 1.0)))
    return ad.mul(weights.eikonal, ad.add(e1, e2))


def embedding_loss(z_expr, z_ident, weights: LossWeights):
    """Zero-mean Gaussian prior on the codes (squared norms)."""
    n = ad.add(ad.sum_(ad.mul(z_expr, z_expr)), ad.sum_(ad.mul(z_ident, z_ident)))
    return ad.mul(weights.embedding, n)


def landmark_generation_loss(lmk_obs, lmk_neutral, label_obs, label_neutral,
                             weights: LossWeights):
    """Elementwise l1 supervision of both landmark nets."""
    t = ad.add(
        ad.sum_(ad.absolute(ad.sub(lmk_obs, label_obs))),
        ad.sum_(ad.absolute(ad.sub(lmk_neutral, label_neutral))),
    )
    return ad.mul(weights.landmark_gen, t)


def landmark_consistency_loss(warped_neutral, warped_template, label_neutral,
                              template_landmarks, weights: LossWeights):
    """l1 pull of deformed landmarks onto the neutral labels and template."""
    t = ad.add(
        ad.sum_(ad.absolute(ad.sub(warped_neutral, label_neutral))),
        ad.sum_(ad.absolute(ad.sub(warped_template, template_landmarks))),
    )
    return ad.mul(weights.landmark_consist, t)


def residual_loss(delta, weights: LossWeights):
    """Mean absolute SDF correction."""
    return ad.mul(weights.residual, ad.mean(ad.absolute(delta)))


def scan_loss(P, cfg: M.ModelConfig, scan: ScanBatch, weights: LossWeights,
              include_embedding: bool = True, landmark_terms: bool = True,
              frozen_canonical=None):
    """All loss terms for one scan; returns dict of term Nodes plus intermediates.

    The point array becomes a graph leaf so spatial gradients exist.  For
    neutral scans the expression warp is bypassed entirely, its hyper nets
    are never evaluated, and the expression code is exempt from the prior.
    With ``landmark_terms`` off (test-time fitting) the landmark labels are
    not consulted and those terms are zero.

    The canonical-space Eikonal term differentiates the template-of-identity
    field at the canonical points as a detached evaluation location; finite-
    difference checks of that term must hold the location fixed, which
    ``frozen_canonical`` allows.
    """
    p = ad.leaf(scan.points)
    n = len(scan.points)

    lmk_code = ad.stop_gradient(scan.z_expr) if scan.neutral else scan.z_expr
    lmk_obs = M.expr_landmarks(P, cfg, lmk_code, scan.z_ident)
    lmk_neutral = M.ident_landmarks(P, cfg, scan.z_ident)

    expr_layers = None if scan.neutral else M.hyper_net_eval(P, "expr", scan.z_expr, cfg, M.EXPR_OUT)
    ident_layers = M.hyper_net_eval(P, "ident", scan.z_ident, cfg, M.IDENT_OUT)

    p_canonical = M.expression_warp(P, cfg, p, scan.z_expr, lmk_obs, scan.neutral, layers=expr_layers)
    p_template, delta = M.identity_warp(P, cfg, p_canonical, scan.z_ident, lmk_neutral, layers=ident_layers)
    s0 = M.template_distance(P, cfg, p_template)
    s = ad.add(s0, delta)

    grad_full = ad.input_gradient(s, p)

    # canonical-space Eikonal: same identity/template nets at a detached point
    if frozen_canonical is None:
        frozen_canonical = ad.value_of(p_canonical)
    p_can_leaf = ad.leaf(frozen_canonical)
    p_tmpl2, _ = M.identity_warp(P, cfg, p_can_leaf, scan.z_ident, lmk_neutral, layers=ident_layers)
    s_can = M.template_distance(P, cfg, p_tmpl2)
    grad_canonical = ad.input_gradient(s_can, p_can_leaf)

    if landmark_terms:
        # deformed-landmark consistency through both warps
        warped_lmk_neutral = M.expression_warp(P, cfg, lmk_obs, scan.z_expr, lmk_obs, scan.neutral,
                                               layers=expr_layers)
        warped_lmk_template, _ = M.identity_warp(P, cfg, warped_lmk_neutral, scan.z_ident, lmk_neutral,
                                                 layers=ident_layers)
        lmk_gen = landmark_generation_loss(lmk_obs, lmk_neutral, scan.landmarks,
                                           scan.neutral_landmarks, weights)
        lmk_consist = landmark_consistency_loss(warped_lmk_neutral, warped_lmk_template,
                                                scan.neutral_landmarks,
                                                P["template.landmarks"], weights)
    else:
        lmk_gen = ad.constant(0.0)
        lmk_consist = ad.constant(0.0)

    if include_embedding:
        if scan.neutral:  # unused expression rows stay unregularized
            z_e = ad.constant(np.zeros_like(ad.value_of(scan.z_expr)))
        else:
            z_e = scan.z_expr
        emb = embedding_loss(z_e, scan.z_ident, weights)
    else:
        emb = ad.constant(0.0)

    terms = {
        "sdf": sdf_loss(s, scan.sdf, grad_full, scan.normals, scan.n_surface, weights),
        "eikonal": eikonal_loss(grad_full, grad_canonical, weights),
        "embedding": emb,
        "landmark_gen": lmk_gen,
        "landmark_consist": lmk_consist,
        "residual": residual_loss(delta, weights),
    }
    intermediates = {
        "sdf_pred": s,
        "delta": delta,
        "p_canonical": p_canonical,
        "grad_full": grad_full,
        "lmk_obs": lmk_obs,
        "lmk_neutral": lmk_neutral,
        "points_leaf": p,
    }
    return terms, intermediates


def total_loss(P, cfg: M.ModelConfig, scans: list[ScanBatch], weights: LossWeights,
               include_embedding: bool = True, landmark_terms: bool = True):
    """Mean of each term over the scans in the batch.

    Returns (total Node, per-term Nodes dict, LossBreakdown of float values).
    """
    if not scans:
        raise ValueError("empty scan batch")
    acc: dict[str, object] = {}
    for scan in scans:
        terms, _ = scan_loss(P, cfg, scan, weights, include_embedding, landmark_terms)
        for name, node in terms.items():
            acc[name] = node if name not in acc else ad.add(acc[name], node)
    n = float(len(scans))
    per_term = {name: ad.div(node, n) for name, node in acc.items()}
    total = None
    for name in TERM_NAMES:
        total = per_term[name] if total is None else ad.add(total, per_term[name])
    breakdown = LossBreakdown(**{name: float(ad.value_of(per_term[name])) for name in TERM_NAMES})
    return total, per_term, breakdown
