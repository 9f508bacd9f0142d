"""Command-line entry point.

Subcommands cover the whole workflow: ``gen-data`` (synthetic corpus),
``train``, ``neutralize``, ``identify``, ``eval``, plus the self-checks
``gradcheck`` and ``oracle-check``. All outputs are files (OBJ, CSV,
checkpoint); every command is deterministic given its seeds. Exit codes:
0 success, 1 failure (including violated self-check tolerances), 2 usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig, load_config
from .evaluation import (
    EvaluationError,
    evaluate_checkpoint,
    per_vertex_errors,
    rank1_identify,
    write_per_vertex_csv,
    write_report,
)
from .mesh_core import (
    ObjParseError,
    PowerIterationError,
    TopologyError,
    load_obj,
    operator_from_mesh,
    save_obj,
)
from .models import encode, identity_embedding, neutralize, translate
from .synthetic_data import SyntheticSpecError, generate_corpus, load_spec
from .training import TrainingError, train
from .verification import (
    GRAD_TOLERANCE,
    ORACLE_TOLERANCE,
    run_gradient_suite,
    run_oracle_suite,
)

KNOWN_ERRORS = (
    ObjParseError,
    TopologyError,
    PowerIterationError,
    ConfigError,
    CheckpointError,
    TrainingError,
    EvaluationError,
    SyntheticSpecError,
    OSError,
    ValueError,
)


def _cmd_gen_data(args) -> int:
    spec = load_spec(args.spec)
    manifest = generate_corpus(spec, args.out)
    print(f"wrote corpus for {spec.subjects} subjects to {args.out} (manifest: {manifest})")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else TrainConfig()
    ckpt = train(args.data, config, args.out, loss_csv_path=args.losses)
    print(f"trained on {len(ckpt.subjects)} subjects; checkpoint: {args.out}")
    return 0


def _cmd_neutralize(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    mesh = load_obj(args.infile)
    result = neutralize(mesh, ckpt)
    save_obj(result, args.out)
    print(f"neutralized {args.infile} -> {args.out}")
    if args.errors:
        if not args.gt:
            raise EvaluationError("--errors requires --gt (ground-truth neutral mesh)")
        gt = load_obj(args.gt)
        errors = per_vertex_errors(result, gt)
        write_per_vertex_csv(errors, args.errors)
        print(f"mean vertex error: {float(errors.mean()):.4f} mm ({args.errors})")
    return 0


def _gather_embeddings(ckpt, root: Path, neutral_only: bool):
    cfg = ckpt.config
    op = None
    out = []
    for subject_dir in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        for obj_path in sorted(subject_dir.glob("*.obj")):
            is_neutral = obj_path.name == "neutral.obj"
            if neutral_only != is_neutral:
                continue
            mesh = load_obj(obj_path)
            if op is None:
                op = operator_from_mesh(mesh, e_max=ckpt.e_max)
            x = (mesh.vertices - ckpt.centroid) / ckpt.scale
            z = encode(x, op, ckpt.params)
            if not is_neutral:
                z = translate(z, ckpt.params, linear_head=cfg.generator_linear_head)
            emb = identity_embedding(z, ckpt.params)
            out.append((emb, subject_dir.name, obj_path.stem))
    return out


def _cmd_identify(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    gallery = _gather_embeddings(ckpt, args.gallery, neutral_only=True)
    probes = _gather_embeddings(ckpt, args.probe, neutral_only=False)
    if not gallery:
        raise EvaluationError(f"no neutral.obj gallery entries under {args.gallery}")
    accuracy = rank1_identify(
        [(e, s) for e, s, _ in gallery], [(e, s) for e, s, _ in probes]
    )
    g_mat = np.stack([e for e, _, _ in gallery])
    g_unit = g_mat / np.linalg.norm(g_mat, axis=1)[:, None]
    labels = [s for _, s, _ in gallery]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("subject,expression,predicted,correct\n")
        for emb, subject, expression in probes:
            scores = g_unit @ (emb / np.linalg.norm(emb))
            predicted = labels[int(np.argmax(scores))]
            fh.write(f"{subject},{expression},{predicted},{int(predicted == subject)}\n")
    print(f"rank-1 accuracy: {accuracy:.4f} ({len(probes)} probes, {len(gallery)} gallery)")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    report = evaluate_checkpoint(ckpt, args.data, gallery_through_g=args.gallery_through_g)
    write_report(report, args.out)
    print(report.summary())
    print(f"report written to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(points=args.points)
    failed = False
    for result in results:
        status = "ok" if result.ok else "FAIL"
        print(f"{result.name}: max relative error {result.max_error:.3e} [{status}]")
        failed |= not result.ok
    print(f"tolerance: {GRAD_TOLERANCE:.0e}")
    return 1 if failed else 0


def _cmd_oracle_check(args) -> int:
    worst = run_oracle_suite(cases=args.cases)
    ok = worst < ORACLE_TOLERANCE
    print(
        f"chebyshev recursion vs eigenbasis filter: max abs diff {worst:.3e} "
        f"over {args.cases} graphs [{'ok' if ok else 'FAIL'}] (tolerance {ORACLE_TOLERANCE:.0e})"
    )
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faceneutral",
        description="Expression neutralization and identity recognition on registered 3D face meshes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic registered-mesh corpus")
    p.add_argument("--spec", required=True, help="corpus spec file (key = value lines)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--data", required=True, help="corpus root (<subject>/<expression>.obj)")
    p.add_argument("--config", help="training config file; defaults apply if omitted")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--losses", help="loss CSV path (default: <out>.losses.csv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("neutralize", help="neutralize the expression of one mesh")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, help="input OBJ")
    p.add_argument("--out", required=True, help="output OBJ")
    p.add_argument("--errors", help="per-vertex error CSV (needs --gt)")
    p.add_argument("--gt", help="ground-truth neutral OBJ for --errors")
    p.set_defaults(func=_cmd_neutralize)

    p = sub.add_parser("identify", help="rank-1 identification, gallery vs probes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gallery", required=True, help="corpus-layout dir; neutral.obj per subject")
    p.add_argument("--probe", required=True, help="corpus-layout dir; non-neutral meshes probe")
    p.add_argument("--out", required=True, help="per-probe CSV output")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("eval", help="full neutralization + identification report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus containing held-out subjects")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument(
        "--gallery-through-g",
        dest="gallery_through_g",
        action="store_true",
        help="route gallery codes through the translator too",
    )
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer, model, loss")
    p.add_argument("--points", type=int, default=3, help="random evaluation points per check")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="compare fast filtering against the eigenbasis route")
    p.add_argument("--cases", type=int, default=20, help="number of random graphs")
    p.set_defaults(func=_cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KNOWN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
