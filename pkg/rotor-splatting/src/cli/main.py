"""
Command-line entry point: synth, train, render, eval, flow and slice-debug.

Exit codes: 0 on success, 2 for invalid input (bad files, configs or
arguments), 1 for unexpected failures.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from src.adapters.config_file import load_train_config
from src.adapters.images import flow_to_color
from src.adapters.logging import LOG_FORMAT
from src.adapters.metrics import format_eval_table
from src.adapters.synthetic import generate_synthetic
from src.application.container import get_container
from src.cli.schemas import CameraFileSchema, SyntheticSceneSchema
from src.domain.errors import MalformedJsonError, MissingFileError, RotorSplattingError
from src.domain.models import Camera, SplitTag

logger = logging.getLogger(__name__)


def _read_json(path: str, schema):
    if not os.path.exists(path):
        raise MissingFileError(f"file not found: {path}")
    try:
        with open(path, "r") as f:
            return schema.model_validate(json.load(f))
    except json.JSONDecodeError as e:
        raise MalformedJsonError(f"{path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise MalformedJsonError(f"{path} is invalid: {e}") from e


def _read_camera(path: str, time: float):
    schema: CameraFileSchema = _read_json(path, CameraFileSchema)
    fx, fy = schema.focal_lengths()
    camera = Camera.from_opengl_pose(
        np.asarray(schema.camera_to_world, dtype=np.float64),
        width=schema.width,
        height=schema.height,
        fx=fx,
        fy=fy,
        cx=schema.cx,
        cy=schema.cy,
        time=time,
    )
    return camera, np.asarray(schema.background, dtype=np.float64)


def _fmt(value) -> str:
    return f"{float(value):.6g}"


def _fmt_array(values) -> str:
    return np.array2string(np.asarray(values, dtype=np.float64), formatter={"float_kind": lambda v: f"{v:.6g}"})


def cmd_synth(args) -> int:
    container = get_container()
    spec = _read_json(args.spec, SyntheticSceneSchema).to_domain()
    dataset, store = generate_synthetic(spec, num_threads=container.num_threads)
    container.get_dataset_repository().save(dataset, args.out_dir)
    ground_truth = args.gt or os.path.join(args.out_dir, "ground_truth.r4gs")
    container.get_checkpoint_repository().save(store, ground_truth)
    print(f"wrote {len(dataset.frames)} frames and {len(store)} ground-truth Gaussians to {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    container = get_container()
    overrides = {"static_mode": True} if args.static_mode else {}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    config = load_train_config(args.config, **overrides)
    if config.seed is None and container.default_seed is not None:
        config.seed = container.default_seed
    dataset = container.get_dataset_repository().load(args.data_dir)
    service = container.get_training_service(metrics_path=args.out + ".metrics.jsonl")
    result = service.train(dataset, config)
    container.get_checkpoint_repository().save(result.store, args.out)
    print(f"saved {len(result.store)} Gaussians to {args.out}")
    return 0


def cmd_render(args) -> int:
    container = get_container()
    store = container.get_checkpoint_repository().load(args.checkpoint)
    camera, background = _read_camera(args.camera, args.time)
    image = container.get_render_service().render(store, camera, background)
    container.get_image_store().write(args.out, image)
    print(f"wrote {camera.width}x{camera.height} render at t={_fmt(args.time)} to {args.out}")
    return 0


def cmd_eval(args) -> int:
    container = get_container()
    store = container.get_checkpoint_repository().load(args.checkpoint)
    dataset = container.get_dataset_repository().load(args.data_dir)
    metrics = container.get_training_service().evaluate(store, dataset, SplitTag(args.split))
    print(format_eval_table(metrics))
    print(f"mean PSNR {_fmt(np.mean([m.psnr for m in metrics]))}")
    print(f"mean SSIM {_fmt(np.mean([m.ssim for m in metrics]))}")
    return 0


def cmd_flow(args) -> int:
    container = get_container()
    store = container.get_checkpoint_repository().load(args.checkpoint)
    camera, _ = _read_camera(args.camera, args.time)
    flow = container.get_render_service().render_flow(store, camera)
    if args.raw:
        directory = os.path.dirname(args.raw)
        if directory:
            os.makedirs(directory, exist_ok=True)
        np.save(args.raw, flow)
    container.get_image_store().write(args.out, flow_to_color(flow))
    print(f"wrote flow at t={_fmt(args.time)} to {args.out}, max magnitude {_fmt(np.linalg.norm(flow, axis=-1).max())} px")
    return 0


def cmd_slice_debug(args) -> int:
    container = get_container()
    store = container.get_checkpoint_repository().load(args.checkpoint)
    sliced = container.get_render_service().slice_debug(store, args.index, args.time)
    print(f"index  {args.index}")
    print(f"time   {_fmt(args.time)}")
    print(f"lambda {_fmt(sliced.lam)}")
    print(f"mean   {_fmt_array(sliced.mean3)}")
    print(f"cov    {_fmt_array(sliced.cov3)}")
    print(f"speed  {_fmt_array(sliced.speed)}")
    print(f"decay  {_fmt(sliced.decay)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotor-splatting", description="4D rotor Gaussian splatting")
    parser.add_argument("--log-level", default=None, help="Overrides R4GS_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Render a synthetic dynamic scene into a dataset")
    p.add_argument("spec", help="Synthetic scene JSON")
    p.add_argument("out_dir", help="Output dataset directory")
    p.add_argument("--gt", default=None, help="Ground-truth checkpoint path (default <out_dir>/ground_truth.r4gs)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="Optimize a 4D Gaussian scene")
    p.add_argument("data_dir", help="Dataset directory with transforms_{split}.json")
    p.add_argument("--config", default=None, help="Flat key = value config file")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--static-mode", action="store_true", help="Freeze temporal components")
    p.add_argument("--steps", type=int, default=None, help="Overrides total_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="Render one view of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--camera", required=True, help="Camera JSON")
    p.add_argument("--time", type=float, required=True, help="Normalized time in [0, 1]")
    p.add_argument("--out", required=True, help="Output PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR and SSIM of a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    p.add_argument("--split", choices=[tag.value for tag in SplitTag], default=SplitTag.TEST.value)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flow", help="Render screen-space motion as a colour-coded image")
    p.add_argument("checkpoint")
    p.add_argument("--camera", required=True, help="Camera JSON")
    p.add_argument("--time", type=float, required=True, help="Normalized time in [0, 1]")
    p.add_argument("--out", required=True, help="Output PNG")
    p.add_argument("--raw", default=None, help="Also save the float flow field as .npy")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("slice-debug", help="Print the 3D slice of one Gaussian")
    p.add_argument("checkpoint")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--time", type=float, required=True)
    p.set_defaults(func=cmd_slice_debug)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = args.log_level or os.getenv("R4GS_LOG_LEVEL", "INFO")
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
    try:
        return args.func(args)
    except (RotorSplattingError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception:
        logger.exception(f"{args.command} failed")
        return 1


if __name__ == "__main__":
    sys.exit(main())
