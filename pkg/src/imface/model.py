"""The deformation / SDF network stack.

A signed-distance field conditioned on an expression code and an identity
code, factored into three stages: an expression warp taking observed points
to a person-specific neutral pose, an identity warp taking neutral points to
a shared template (plus a scalar SDF correction), and a template SDF.  Each
stage is a blend field: five landmark-anchored sine MLPs whose outputs are
mixed by softmax weights from a small fusion net conditioned on the query
point.  The two warp stages output screw parameters (omega, v) that are
blended first and exponentiated once; their mini-net weights are generated
per code by per-region hyper networks, while the template mini-nets are
learned directly.

Everything below is written against the autodiff op set: pass plain numpy
parameter dicts for cheap evaluation, or Node-valued dicts for training.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from imface import autodiff as ad
from imface.geometry.se3 import se3_apply


@dataclass(frozen=True)
class ModelConfig:
    expr_dim: int = 128
    ident_dim: int = 128
    regions: int = 5          # local blend regions, equals the landmark count
    pe_bands: int = 6         # positional-encoding frequency bands
    mini_hidden: int = 32     # hidden width of each local sine MLP
    mini_hidden_layers: int = 3
    hyper_hidden: int = 64    # hidden width of the weight-generating nets
    landmark_hidden: int = 128
    fusion_hidden: int = 16
    omega0: float = 30.0      # sine frequency multiplier

    def __post_init__(self):
        for name, val in asdict(self).items():
            if val <= 0:
                raise ValueError(f"ModelConfig.{name} must be positive")

    @property
    def pe_dim(self) -> int:
        return 3 * 2 * self.pe_bands

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


EXPR_OUT = 6    # screw parameters (omega, v)
IDENT_OUT = 7   # screw parameters plus the SDF correction
TEMPLATE_OUT = 1


def positional_encode(x, bands: int = 6):
    """Sinusoidal encoding of coordinates: per coordinate, (sin, cos) pairs at
    frequencies 2^j pi for j < bands, coordinates concatenated in order.

    (..., 3) -> (..., 6 * bands).  The raw coordinate is not included.
    """
    freqs = (2.0 ** np.arange(bands)) * np.pi
    shape = tuple(np.shape(ad.value_of(x)))
    t = ad.mul(ad.reshape(x, shape + (1,)), freqs)
    enc = ad.stack([ad.sine(t), ad.cosine(t)], axis=-1)  # (..., 3, bands, 2)
    return ad.reshape(enc, shape[:-1] + (3 * 2 * bands,))


def mini_layer_dims(cfg: ModelConfig, out_dim: int) -> list[tuple[int, int]]:
    dims = [cfg.pe_dim] + [cfg.mini_hidden] * cfg.mini_hidden_layers + [out_dim]
    return list(zip(dims[:-1], dims[1:]))


def mini_param_count(cfg: ModelConfig, out_dim: int) -> int:
    return sum(i * o + o for i, o in mini_layer_dims(cfg, out_dim))


def split_mini_params(theta, cfg: ModelConfig, out_dim: int):
    """Split flat generated parameters (k, total) into per-layer (W, b) stacks."""
    k = np.shape(ad.value_of(theta))[0]
    layers = []
    offset = 0
    for i, o in mini_layer_dims(cfg, out_dim):
        w = ad.reshape(theta[:, offset : offset + i * o], (k, i, o))
        offset += i * o
        b = theta[:, offset : offset + o]
        offset += o
        layers.append((w, b))
    return layers


def siren_mini_init(rng: np.random.Generator, cfg: ModelConfig, out_dim: int,
                    zero_head: bool) -> np.ndarray:
    """Fresh sine-MLP parameters, flattened in layer order.

    First layer uniform in +-1/fan_in, later layers uniform in
    +-sqrt(6/fan_in)/omega0; biases zero.  ``zero_head`` zeroes the output
    layer so the generated field starts at exactly zero (identity warp).
    """
    parts = []
    dims = mini_layer_dims(cfg, out_dim)
    for li, (i, o) in enumerate(dims):
        if li == 0:
            bound = 1.0 / i
        else:
            bound = np.sqrt(6.0 / i) / cfg.omega0
        w = rng.uniform(-bound, bound, size=(i, o))
        if zero_head and li == len(dims) - 1:
            w[:] = 0.0
        parts.append(w.reshape(-1))
        parts.append(np.zeros(o))
    return np.concatenate(parts)


def _relu_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, n_scans: int, n_ids: int,
                template_landmarks: np.ndarray, seed: int = 0) -> dict[str, np.ndarray]:
    """Build the full parameter dictionary.

    Hyper nets start with zero hidden biases, small final weights, and a
    final bias equal to a fresh sine-MLP initialization with a zero output
    head, so at code zero both warps begin as the identity map and the SDF
    correction as zero.  Landmark nets start predicting the template
    landmarks.  Embedding tables are N(0, 1e-2).
    """
    rng = np.random.default_rng(seed)
    k = cfg.regions
    tmpl = np.asarray(template_landmarks, dtype=np.float64).reshape(k, 3)
    params: dict[str, np.ndarray] = {}

    def hyper_block(stage: str, z_dim: int, out_dim: int):
        total = mini_param_count(cfg, out_dim)
        h = cfg.hyper_hidden
        params[f"{stage}.hyper.W0"] = np.stack([_relu_uniform(rng, z_dim, h) for _ in range(k)])
        params[f"{stage}.hyper.b0"] = np.zeros((k, h))
        params[f"{stage}.hyper.W1"] = np.stack([_relu_uniform(rng, h, h) for _ in range(k)])
        params[f"{stage}.hyper.b1"] = np.zeros((k, h))
        params[f"{stage}.hyper.W2"] = rng.uniform(-1e-2, 1e-2, size=(k, h, total))
        params[f"{stage}.hyper.b2"] = np.stack(
            [siren_mini_init(rng, cfg, out_dim, zero_head=True) for _ in range(k)]
        )

    def fusion_block(stage: str):
        h = cfg.fusion_hidden
        params[f"{stage}.fusion.W0"] = _relu_uniform(rng, 3, h)
        params[f"{stage}.fusion.b0"] = np.zeros(h)
        params[f"{stage}.fusion.W1"] = _relu_uniform(rng, h, h)
        params[f"{stage}.fusion.b1"] = np.zeros(h)
        # near-uniform blend at start, small enough to stay symmetric but
        # nonzero so every fusion layer receives gradient from step one
        params[f"{stage}.fusion.W2"] = rng.uniform(-1e-2, 1e-2, size=(h, k))
        params[f"{stage}.fusion.b2"] = np.zeros(k)

    def landmark_block(name: str, z_dim: int):
        h = cfg.landmark_hidden
        params[f"{name}.W0"] = _relu_uniform(rng, z_dim, h)
        params[f"{name}.b0"] = np.zeros(h)
        params[f"{name}.W1"] = _relu_uniform(rng, h, h)
        params[f"{name}.b1"] = np.zeros(h)
        params[f"{name}.W2"] = rng.uniform(-1e-2, 1e-2, size=(h, k * 3))
        params[f"{name}.b2"] = tmpl.reshape(-1).copy()

    hyper_block("expr", cfg.expr_dim, EXPR_OUT)
    hyper_block("ident", cfg.ident_dim, IDENT_OUT)
    fusion_block("expr")
    fusion_block("ident")
    fusion_block("template")
    landmark_block("lmk_expr", cfg.expr_dim + cfg.ident_dim)
    landmark_block("lmk_ident", cfg.ident_dim)

    # template mini-nets are learned directly; the head keeps its sine init
    # so the starting field has usable spatial gradients
    params["template.mini"] = np.stack(
        [siren_mini_init(rng, cfg, TEMPLATE_OUT, zero_head=False) for _ in range(k)]
    )
    params["template.landmarks"] = tmpl.copy()

    params["embed.expr"] = rng.normal(0.0, 1e-2, size=(n_scans, cfg.expr_dim))
    params["embed.ident"] = rng.normal(0.0, 1e-2, size=(n_ids, cfg.ident_dim))
    return params


FROZEN_PARAMS = ("template.landmarks",)
EMBEDDING_PARAMS = ("embed.expr", "embed.ident")


def trainable_names(params) -> list[str]:
    return [n for n in params if n not in FROZEN_PARAMS and n not in EMBEDDING_PARAMS]


# ---------------------------------------------------------------------------
# network pieces


def relu_mlp(P, prefix: str, x, n_layers: int = 3):
    """Feed-forward ReLU net; the final layer is linear."""
    h = x
    for li in range(n_layers):
        h = ad.add(ad.matmul(h, P[f"{prefix}.W{li}"]), P[f"{prefix}.b{li}"])
        if li < n_layers - 1:
            h = ad.relu(h)
    return h


def hyper_net_eval(P, stage: str, z, cfg: ModelConfig, out_dim: int):
    """Generate mini-net parameters for every region from one latent code.

    Returns per-layer (W (k, in, out), b (k, out)) stacks.
    """
    k = cfg.regions
    z_dim = np.shape(ad.value_of(z))[-1]
    zb = ad.broadcast_to(ad.reshape(z, (1, 1, z_dim)), (k, 1, z_dim))
    h = ad.relu(ad.add(ad.matmul(zb, P[f"{stage}.hyper.W0"]), ad.reshape(P[f"{stage}.hyper.b0"], (k, 1, -1))))
    h = ad.relu(ad.add(ad.matmul(h, P[f"{stage}.hyper.W1"]), ad.reshape(P[f"{stage}.hyper.b1"], (k, 1, -1))))
    theta = ad.add(ad.matmul(h, P[f"{stage}.hyper.W2"]), ad.reshape(P[f"{stage}.hyper.b2"], (k, 1, -1)))
    theta = ad.reshape(theta, (k, mini_param_count(cfg, out_dim)))
    return split_mini_params(theta, cfg, out_dim)


def fusion_weights(P, stage: str, x, cfg: ModelConfig):
    """Softmax blend weights (N, k) from the absolute query coordinate."""
    logits = relu_mlp(P, f"{stage}.fusion", x)
    return ad.softmax(logits, axis=-1)


def mini_stack_eval(layers, x_rel, cfg: ModelConfig):
    """Evaluate all k local sine MLPs on their region-relative inputs.

    ``x_rel`` is (k, N, 3); returns (k, N, out).
    """
    h = positional_encode(x_rel, cfg.pe_bands)
    last = len(layers) - 1
    for li, (w, b) in enumerate(layers):
        k, _, o = np.shape(ad.value_of(w))
        h = ad.add(ad.matmul(h, w), ad.reshape(b, (k, 1, o)))
        if li < last:
            h = ad.sine(ad.mul(cfg.omega0, h))
    return h


def blend_field(P, stage: str, x, anchors, layers, cfg: ModelConfig):
    """The blended local field at query points ``x`` (N, 3) -> (N, out).

    Every local net is evaluated at every query on the anchor-relative
    coordinate; the fusion weights mix the k field values per point.
    """
    k = cfg.regions
    n = np.shape(ad.value_of(x))[0]
    rel = ad.sub(ad.reshape(x, (1, n, 3)), ad.reshape(anchors, (k, 1, 3)))
    fields = mini_stack_eval(layers, rel, cfg)          # (k, N, out)
    w = fusion_weights(P, stage, x, cfg)                # (N, k)
    wt = ad.reshape(ad.transpose(w, (1, 0)), (k, n, 1))
    return ad.sum_(ad.mul(fields, wt), axis=0)


# ---------------------------------------------------------------------------
# the three stages


def expr_landmarks(P, cfg: ModelConfig, z_expr, z_ident):
    """Observed-face landmarks from both codes, (k, 3)."""
    z = ad.concat([z_expr, z_ident], axis=0)
    out = relu_mlp(P, "lmk_expr", ad.reshape(z, (1, -1)))
    return ad.reshape(out, (cfg.regions, 3))


def ident_landmarks(P, cfg: ModelConfig, z_ident):
    """Neutral-face landmarks from the identity code alone, (k, 3)."""
    out = relu_mlp(P, "lmk_ident", ad.reshape(z_ident, (1, -1)))
    return ad.reshape(out, (cfg.regions, 3))


def expression_warp(P, cfg: ModelConfig, p, z_expr, landmarks, neutral: bool,
                    layers=None):
    """Observation -> person-neutral warp; the identity map for neutral scans.

    The blended screw parameters are applied as one rigid motion per point.
    """
    if neutral:
        return p
    if layers is None:
        layers = hyper_net_eval(P, "expr", z_expr, cfg, EXPR_OUT)
    field = blend_field(P, "expr", p, landmarks, layers, cfg)
    return se3_apply(field[:, 0:3], field[:, 3:6], p)


def identity_warp(P, cfg: ModelConfig, p, z_ident, landmarks, layers=None):
    """Neutral -> template warp plus the scalar SDF correction.

    Returns (warped points (N, 3), correction (N,)).  The correction shares
    the blend weights of the screw components (one 7-channel field).
    """
    if layers is None:
        layers = hyper_net_eval(P, "ident", z_ident, cfg, IDENT_OUT)
    field = blend_field(P, "ident", p, landmarks, layers, cfg)
    warped = se3_apply(field[:, 0:3], field[:, 3:6], p)
    return warped, field[:, 6]


def template_layers(P, cfg: ModelConfig):
    return split_mini_params(P["template.mini"], cfg, TEMPLATE_OUT)


def template_distance(P, cfg: ModelConfig, p):
    """Template-space SDF (N,), an unconditioned blend field."""
    field = blend_field(P, "template", p, P["template.landmarks"], template_layers(P, cfg), cfg)
    return field[:, 0]


def forward(P, cfg: ModelConfig, p, z_expr, z_ident, neutral: bool):
    """Full signed distance of query points with all intermediates.

    Returns a dict with ``sdf`` (N,) plus the canonical and template-space
    points, the correction, the raw template distance, and both predicted
    landmark sets.
    """
    lmk_obs = expr_landmarks(P, cfg, ad.stop_gradient(z_expr) if neutral else z_expr, z_ident)
    lmk_neutral = ident_landmarks(P, cfg, z_ident)
    p_canonical = expression_warp(P, cfg, p, z_expr, lmk_obs, neutral)
    p_template, delta = identity_warp(P, cfg, p_canonical, z_ident, lmk_neutral)
    s0 = template_distance(P, cfg, p_template)
    return {
        "sdf": ad.add(s0, delta),
        "template_sdf": s0,
        "delta": delta,
        "p_canonical": p_canonical,
        "p_template": p_template,
        "lmk_obs": lmk_obs,
        "lmk_neutral": lmk_neutral,
    }


def evaluate_sdf(P, cfg: ModelConfig, points, z_expr, z_ident, neutral: bool = False,
                 chunk: int = 65536) -> np.ndarray:
    """Plain-array SDF evaluation in chunks (no graph recording)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        sl = slice(start, min(start + chunk, len(points)))
        out[sl] = forward(P, cfg, points[sl], z_expr, z_ident, neutral)["sdf"]
    return out
