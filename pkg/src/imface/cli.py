"""The ``imface`` command line front end.

Subcommands: synth, preprocess, train, fit, reconstruct, eval, correspond,
explore, validate-manifest.  Exit codes: 0 success, 1 usage error, 2 data or
validation error, 3 numerical failure (divergence / NaN abort).  Every
command is deterministic for a fixed --seed in serial mode; commands that
produce artifacts echo their effective configuration into the output
directory and stamp digests where the format allows.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from imface import evaluate as E
from imface import manifest as MF
from imface import model as M
from imface import preprocess as PP
from imface import synth
from imface import training as T
from imface.checkpoint import load_checkpoint, save_checkpoint
from imface.geometry.meshio import read_mesh, write_ply
from imface.losses import LossWeights
from imface.reconstruction import marching_cubes
from imface.training import TrainingDiverged


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--verbose", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="imface", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic face corpus")
    p.add_argument("--ids", type=int, required=True)
    p.add_argument("--exps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-ids", type=int, default=2)
    p.add_argument("--holdout-exps", type=int, default=2)
    _common(p)

    p = subs.add_parser("preprocess", help="mesh-to-SDF sample pipeline")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--units", choices=sorted(PP.UNIT_SCALES), default="cm")
    p.add_argument("--n-surface", type=int, default=250000)
    p.add_argument("--n-volume", type=int, default=15000)
    p.add_argument("--verify-probes", type=int, default=100000)
    _common(p)

    p = subs.add_parser("train", help="auto-decoder training")
    p.add_argument("--data", required=True, help="preprocessed corpus directory")
    p.add_argument("--config", default=None, help="key=value file overriding TrainConfig")
    p.add_argument("--out", required=True)
    _common(p)

    p = subs.add_parser("fit", help="fit latent codes of an unseen scan")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scan", required=True, help=".imfs sample file")
    p.add_argument("--out", required=True, help="output prefix (.json / .ply)")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--res", type=int, default=64)
    _common(p)

    p = subs.add_parser("reconstruct", help="isosurface of a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--zexp", required=True, help="JSON code file (array or fit output)")
    p.add_argument("--zid", required=True)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--out", required=True)
    _common(p)

    p = subs.add_parser("eval", help="Chamfer / F-score between two meshes")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default=None, help="write JSON report here")
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--n", type=int, default=100000)
    _common(p)

    p = subs.add_parser("correspond", help="dense correspondence between two scans")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scanA", required=True)
    p.add_argument("--scanB", required=True)
    p.add_argument("--out", required=True, help="CSV of matched point pairs")
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--res", type=int, default=64)
    _common(p)

    p = subs.add_parser("explore", help="sweep a latent principal component")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--table", choices=["exp", "id"], required=True)
    p.add_argument("--component", type=int, required=True)
    p.add_argument("--sigmas", default="-3,0,3")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--out", required=True)
    _common(p)

    p = subs.add_parser("validate-manifest", help="check manifest invariants")
    p.add_argument("path")
    p.add_argument("--strict", action="store_true")
    _common(p)

    return parser


def _echo_config(out_dir: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    items = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    items.update(extra or {})
    with open(out_dir / "effective_config.txt", "w") as fh:
        fh.write(f"command={args.command}\n")
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def _load_code(path_or_json: str, key: str) -> np.ndarray:
    path = Path(path_or_json)
    data = json.loads(path.read_text()) if path.exists() else json.loads(path_or_json)
    if isinstance(data, dict):
        data = data[key]
    return np.asarray(data, dtype=np.float64)


def _preprocess_one(task):
    row, in_dir, out_dir, units, n_surface, n_volume, seed, verify_probes = task
    mesh = read_mesh(MF.resolve(row["mesh"], in_dir))
    landmarks = MF.read_landmarks(MF.resolve(row["landmarks"], in_dir))
    scan = PP.preprocess_scan(
        mesh, landmarks, PP.UNIT_SCALES[units], synth.canonical_landmark_template(),
        n_surface, n_volume, seed,
        identity_id=row["identity_id"], neutral=row["neutral"], scan_id=row["scan_id"],
        verify_probes=verify_probes,
    )
    sid = row["scan_id"]
    PP.write_samples(out_dir / f"{sid}.imfs", scan)
    write_ply(out_dir / f"{sid}_processed.ply", scan.mesh)
    MF.write_landmarks(out_dir / f"{sid}.landmarks.txt", scan.landmarks)
    uv_name = row.get("uv", "")
    if uv_name:
        (out_dir / Path(uv_name).name).write_bytes(MF.resolve(uv_name, in_dir).read_bytes())
    return {
        "scan_id": sid,
        "identity_id": row["identity_id"],
        "neutral": int(row["neutral"]),
        "split": row.get("split", "train"),
        "mesh": f"{sid}_processed.ply",
        "landmarks": f"{sid}.landmarks.txt",
        "samples": f"{sid}.imfs",
        "uv": Path(uv_name).name if uv_name else "",
        "source_mesh": str(MF.resolve(row["mesh"], in_dir)),
    }


def cmd_preprocess(args) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = MF.read_manifest(in_dir / "manifest.csv")
    tasks = [
        (row, in_dir, out_dir, args.units, args.n_surface, args.n_volume,
         args.seed * 100003 + i, args.verify_probes)
        for i, row in enumerate(rows)
    ]
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            out_rows = list(pool.map(_preprocess_one, tasks))
    else:
        out_rows = [_preprocess_one(t) for t in tasks]
    MF.write_manifest(out_dir / "manifest.csv", out_rows)
    _echo_config(out_dir, args, {"corpus_digest": MF.manifest_digest(out_dir / "manifest.csv")})
    if args.verbose:
        print(f"preprocessed {len(out_rows)} scans -> {out_dir}")
    return 0


def load_training_scans(data_dir, splits=("train",)) -> list[T.TrainingScan]:
    data_dir = Path(data_dir)
    rows = MF.read_manifest(data_dir / "manifest.csv")
    scans = []
    for row in rows:
        if row.get("split", "train") not in splits:
            continue
        surface, volume = PP.read_samples(MF.resolve(row["samples"], data_dir))
        scans.append(
            T.TrainingScan(
                scan_id=row["scan_id"],
                identity_id=row["identity_id"],
                neutral=row["neutral"],
                surface=surface,
                volume=volume,
                landmarks=MF.read_landmarks(MF.resolve(row["landmarks"], data_dir)),
            )
        )
    return scans


def _parse_kv_config(path) -> dict:
    values = {}
    for lineno, raw in enumerate(open(path), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, val = (x.strip() for x in line.split("=", 1))
        values[key] = val
    return values


def _coerce(dataclass_type, overrides: dict, prefix: str = ""):
    kwargs = {}
    for f in fields(dataclass_type):
        key = prefix + f.name
        if key in overrides:
            raw = overrides.pop(key)
            if f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
    return kwargs


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    overrides = _parse_kv_config(args.config) if args.config else {}
    model_kwargs = _coerce(M.ModelConfig, overrides, prefix="model.")
    weight_kwargs = _coerce(LossWeights, overrides, prefix="loss.")
    train_kwargs = _coerce(T.TrainConfig, overrides)
    if overrides:
        raise ValueError(f"unknown config keys: {sorted(overrides)}")
    train_kwargs.setdefault("seed", args.seed)
    train_cfg = T.TrainConfig(**train_kwargs)
    model_cfg = M.ModelConfig(**model_kwargs)
    weights = LossWeights(**weight_kwargs)

    violations = MF.validate_manifest(data_dir / "manifest.csv")
    if violations:
        raise ValueError("manifest validation failed: " + "; ".join(violations[:5]))

    scans = load_training_scans(data_dir)
    digest = MF.manifest_digest(data_dir / "manifest.csv")
    _echo_config(out_dir, args, {
        **{f"train.{k}": v for k, v in asdict(train_cfg).items()},
        **{f"model.{k}": v for k, v in asdict(model_cfg).items()},
        "corpus_digest": digest,
    })
    result = T.train(scans, model_cfg, train_cfg, weights, out_dir=out_dir,
                     manifest_digest=digest)
    if args.verbose:
        print(f"trained {train_cfg.epochs} epochs, {len(result.log)} steps -> {out_dir}")
    return 0


def _reconstruct_mesh(params, cfg, z_expr, z_ident, res):
    def evaluator(pts):
        return M.evaluate_sdf(params, cfg, pts, z_expr, z_ident)

    return marching_cubes(evaluator, resolution=res)


def cmd_fit(args) -> int:
    params, cfg, digest, _ = load_checkpoint(args.ckpt)
    surface, volume = PP.read_samples(args.scan)
    fit_cfg = T.FitConfig(iterations=args.iterations, lr=args.lr, seed=args.seed)
    result = T.fit_latent(surface, volume, params, cfg, fit_cfg)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "z_expr": result.z_expr.tolist(),
        "z_ident": result.z_ident.tolist(),
        "loss": result.breakdown.as_dict(),
        "config_digest": cfg.digest(),
        "manifest_digest": digest,
    }
    Path(str(prefix) + ".json").write_text(json.dumps(payload, indent=2))
    mesh = _reconstruct_mesh(params, cfg, result.z_expr, result.z_ident, args.res)
    write_ply(str(prefix) + ".ply", mesh,
              comments=[f"config_digest={cfg.digest()}", f"manifest_digest={digest}"])
    if args.verbose:
        print(f"fit -> {prefix}.json / {prefix}.ply (final loss {result.breakdown.total:.4f})")
    return 0


def cmd_reconstruct(args) -> int:
    params, cfg, digest, _ = load_checkpoint(args.ckpt)
    z_expr = _load_code(args.zexp, "z_expr")
    z_ident = _load_code(args.zid, "z_ident")
    mesh = _reconstruct_mesh(params, cfg, z_expr, z_ident, args.res)
    write_ply(args.out, mesh,
              comments=[f"config_digest={cfg.digest()}", f"manifest_digest={digest}"])
    if args.verbose:
        print(f"reconstructed {mesh.n_vertices} vertices -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = read_mesh(args.pred)
    gt = read_mesh(args.gt)
    report = E.evaluate_pair(pred, gt, tau=args.tau, n=args.n, seed=args.seed)
    payload = report.as_dict()
    payload["pred"] = str(args.pred)
    payload["gt"] = str(args.gt)
    payload["seed"] = args.seed
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text)
    print(text)
    return 0


def cmd_correspond(args) -> int:
    params, cfg, _, _ = load_checkpoint(args.ckpt)
    fit_cfg = T.FitConfig(iterations=args.iterations, seed=args.seed)
    fits = []
    meshes = []
    for scan_path in (args.scanA, args.scanB):
        surface, volume = PP.read_samples(scan_path)
        result = T.fit_latent(surface, volume, params, cfg, fit_cfg)
        fits.append((result.z_expr, result.z_ident))
        meshes.append(_reconstruct_mesh(params, cfg, result.z_expr, result.z_ident, args.res))
    cmap = E.correspond(params, cfg, fits[0], fits[1], meshes[0], meshes[1],
                        n_points=args.n_points, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("ax,ay,az,bx,by,bz,template_residual\n")
        for a, b, r in zip(cmap.source_points, cmap.matched_points, cmap.template_residual):
            fh.write(f"{a[0]},{a[1]},{a[2]},{b[0]},{b[1]},{b[2]},{r}\n")
    if args.verbose:
        print(f"correspondence ({len(cmap.source_points)} pairs) -> {out}")
    return 0


def cmd_explore(args) -> int:
    params, cfg, _, _ = load_checkpoint(args.ckpt)
    table = {"exp": "expr", "id": "ident"}[args.table]
    sigmas = [float(x) for x in args.sigmas.split(",") if x.strip()]
    meshes = E.latent_pca(params, cfg, table, args.component, sigmas, resolution=args.res)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for m, mesh in zip(sigmas, meshes):
        name = f"{table}_c{args.component}_sigma{m:+.2f}.ply"
        write_ply(out_dir / name, mesh, comments=[f"config_digest={cfg.digest()}"])
    _echo_config(out_dir, args)
    if args.verbose:
        print(f"wrote {len(meshes)} sweep meshes -> {out_dir}")
    return 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    manifest = synth.gen_corpus(args.ids, args.exps, args.seed, out_dir,
                                holdout_ids=args.holdout_ids, holdout_exps=args.holdout_exps)
    _echo_config(out_dir, args, {"corpus_digest": MF.manifest_digest(manifest)})
    if args.verbose:
        print(f"synthesized corpus -> {manifest}")
    return 0


def cmd_validate_manifest(args) -> int:
    violations = MF.validate_manifest(args.path, strict=False)
    for v in violations:
        print(v)
    if violations and args.strict:
        return 2
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "fit": cmd_fit,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "correspond": cmd_correspond,
    "explore": cmd_explore,
    "validate-manifest": cmd_validate_manifest,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except TrainingDiverged as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, OSError, RuntimeError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
