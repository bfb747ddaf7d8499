"""Command-line entry points.

Exit codes: 0 success, 2 usage error, 1 runtime error. Reports land as
delimited files (CSV/JSON) with matplotlib figures rendered alongside.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np
import torch

from . import checkpoint as ckpt_mod
from . import reports
from .config import dump_train_config, load_train_config
from .data import (
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .evaluation import (
    RandomConvEmbedder,
    fid_proxy,
    interpolate_latents,
    rotation_sweep,
)
from .geometry import CameraPose, Intrinsics, upright_pose
from .inversion import ViewSet, invert_views, render_view_set, view_synthesis_eval
from .training import init_train_state, prepare_real_batch, train_step


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config file controlling generator/loss/augment fields.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--preset", type=click.Choice(["desk", "paper"]), default=None,
              help="Configuration preset (default desk).")
@click.pass_context
def cli(ctx, config_path, seed, preset):
    """Scene generator with a latent floorplan of local radiance fields."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["seed"] = seed
    ctx.obj["preset"] = preset


def _train_config(ctx):
    return load_train_config(ctx.obj.get("config_path"), preset=ctx.obj.get("preset"),
                             seed=ctx.obj.get("seed"))


def _seed(ctx, default=0) -> int:
    s = ctx.obj.get("seed")
    return default if s is None else s


def _intrinsics_from_meta(bundle_meta: dict, res: int) -> Intrinsics:
    raw = (bundle_meta.get("extra") or {}).get("intrinsics")
    if raw:
        return Intrinsics(**raw).scaled(res, res)
    return Intrinsics.from_fov(53.0, res, res, near=0.1, far=12.0)


@cli.command("dataset-gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--scenes", default=8, show_default=True)
@click.option("--seqs", default=4, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--res", default=32, show_default=True)
@click.option("--cells", default=16, show_default=True)
@click.option("--extent", default=4.0, show_default=True)
@click.option("--height", default=2.5, show_default=True)
@click.option("--fov", default=53.0, show_default=True)
@click.pass_context
def dataset_gen(ctx, out, scenes, seqs, steps, res, cells, extent, height, fov):
    """Generate a toy RGB-D trajectory dataset on disk."""
    seed = _seed(ctx)
    far = math.ceil(math.hypot(2 * extent, 2 * extent) + 1)
    intr = Intrinsics.from_fov(fov, res, res, near=0.1, far=float(far))
    ds = generate_dataset(scenes, seqs, steps, seed, intr, n_cells=cells,
                          extent=extent, ceiling_height=height)
    write_dataset(ds, out)
    n_frames = sum(len(s) for s in ds.sequences)
    click.echo(f"wrote {len(ds.sequences)} sequences / {n_frames} frames to {out}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=1000, show_default=True)
@click.option("--fid-every", default=0, show_default=True,
              help="Compute the FID proxy every N steps (0 = off).")
@click.option("--fid-samples", default=128, show_default=True)
@click.option("--ckpt-every", default=500, show_default=True)
@click.option("--log-every", default=25, show_default=True)
@click.pass_context
def train(ctx, data, out, steps, fid_every, fid_samples, ckpt_every, log_every):
    """Adversarial training on a toy dataset; writes metrics, curves, checkpoints."""
    cfg = _train_config(ctx)
    ds = read_dataset(data)
    if ds.intrinsics.width != cfg.generator.output_res:
        raise click.UsageError(
            f"dataset resolution {ds.intrinsics.width} does not match generator "
            f"output {cfg.generator.output_res}")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(dump_train_config(cfg))
    state = init_train_state(cfg)
    embedder = RandomConvEmbedder() if fid_every else None
    intr_payload = {k: getattr(ds.intrinsics, k)
                    for k in ("fx", "fy", "cx", "cy", "width", "height", "near", "far")}

    def save(tag: str):
        ckpt_mod.save_checkpoint(out_dir / f"ckpt_{tag}.npz", state.generator,
                                 state.ema_generator, state.critic, state.decoder,
                                 step=state.step, extra={"intrinsics": intr_payload})

    extent = ds.meta.get("extent")
    if extent is not None and abs(extent - cfg.generator.extent) > 1e-9:
        raise click.UsageError(f"dataset extent {extent} != generator extent "
                               f"{cfg.generator.extent}")
    for i in range(steps):
        real, cands = prepare_real_batch(ds, cfg, state.rng)
        metrics = train_step(state, real, cands, ds.intrinsics)
        if fid_every and (state.step % fid_every == 0 or i == steps - 1):
            metrics["fid_proxy"] = fid_proxy(state.ema_generator, ds, n=fid_samples,
                                             embedder=embedder, seed=cfg.seed)
        if log_every and state.step % log_every == 0:
            click.echo(f"step {metrics['step']:6d}  d {metrics['d_loss']:.3f}  "
                       f"g {metrics['g_loss']:.3f}  recon {metrics['recon']:.4f}"
                       + (f"  fid {metrics['fid_proxy']:.2f}"
                          if "fid_proxy" in metrics else ""))
        if ckpt_every and state.step % ckpt_every == 0:
            save(f"{state.step:07d}")
    save("final")
    reports.write_csv(out_dir / "metrics.csv", state.history)
    reports.save_loss_curves(state.history, out_dir / "loss_curves.png")
    click.echo(f"finished {state.step} steps; reports in {out_dir}")


def _load_model(ckpt: str):
    bundle = ckpt_mod.load_checkpoint(ckpt)
    model = bundle.ema_generator or bundle.generator
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, bundle.meta


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=8, show_default=True, help="Number of scenes.")
@click.option("--res", default=0, show_default=True, help="0 = model native.")
@click.pass_context
def sample(ctx, ckpt, out, n, res):
    """Render one frame per freshly sampled scene."""
    model, meta = _load_model(ckpt)
    seed = _seed(ctx)
    res = res or model.cfg.output_res
    intr = _intrinsics_from_meta(meta, res)
    gen = torch.Generator().manual_seed(seed)
    out_dir = Path(out)
    frames = []
    with torch.no_grad():
        for i in range(n):
            z = torch.randn(model.cfg.latent_dim, generator=gen)
            rgb, depth, _ = model.generate_frame(z, CameraPose.identity(), intr)
            reports.save_frame(rgb.clamp(0, 1), out_dir / f"sample_{i:03d}.png")
            reports.depth_to_image(depth).save(out_dir / f"sample_{i:03d}_depth.png")
            frames.append(rgb.clamp(0, 1))
    reports.save_frame_strip(frames, out_dir / "samples.png")
    click.echo(f"wrote {n} samples to {out_dir}")


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--frames", default=24, show_default=True)
@click.option("--radius", default=0.8, show_default=True)
@click.pass_context
def flythrough(ctx, ckpt, out, frames, radius):
    """Fly a camera along a circular path through one sampled scene."""
    model, meta = _load_model(ckpt)
    seed = _seed(ctx)
    intr = _intrinsics_from_meta(meta, model.cfg.output_res)
    z = torch.randn(model.cfg.latent_dim,
                    generator=torch.Generator().manual_seed(seed))
    grid = model.latent_grid(z)
    out_dir = Path(out)
    rendered = []
    with torch.no_grad():
        for i in range(frames):
            ang = 2 * math.pi * i / frames
            pos = np.array([radius * math.sin(ang), 0.0, radius * math.cos(ang)])
            pose = upright_pose(pos, ang)
            rgb, _, _ = model.render_scene(grid, pose, intr)
            reports.save_frame(rgb.clamp(0, 1), out_dir / f"fly_{i:04d}.png")
            rendered.append(rgb.clamp(0, 1))
    reports.save_frame_strip(rendered[:: max(1, frames // 8)],
                             out_dir / "flythrough.png")
    click.echo(f"wrote {frames} flythrough frames to {out_dir}")


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Dataset directory in the on-disk trajectory format.")
@click.option("--out", required=True, type=click.Path())
@click.option("--sources", default=5, show_default=True)
@click.option("--targets", default=5, show_default=True)
@click.option("--steps", default=1000, show_default=True)
@click.option("--sequence", default=0, show_default=True)
@click.pass_context
def invert(ctx, ckpt, data, out, sources, targets, steps, sequence):
    """Invert source views and predict targets; writes W, renders, metrics."""
    from .training import normalize_subsequence

    model, meta = _load_model(ckpt)
    ds = read_dataset(data)
    seq = ds.sequences[sequence]
    need = sources + targets
    if len(seq) < need:
        raise click.UsageError(f"sequence {sequence} has {len(seq)} frames, "
                               f"need {need}")
    frames = seq[:need]
    poses = normalize_subsequence([f.pose for f in frames[:sources]])
    # target poses expressed in the same frame as the sources
    mid = frames[:sources][len(poses) // 2].pose.inverse()
    tgt_poses = [mid.compose(f.pose) for f in frames[sources:]]
    def to_tensor(f):
        return torch.from_numpy(f.rgb).float()

    src = ViewSet(images=torch.stack([to_tensor(f) for f in frames[:sources]]),
                  poses=poses)
    tgt = ViewSet(images=torch.stack([to_tensor(f) for f in frames[sources:]]),
                  poses=tgt_poses, role="target")
    metrics = view_synthesis_eval(model, src, tgt, ds.intrinsics, encoder=None,
                                  steps=steps)
    result = metrics.pop("_result")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out_dir / "latent_grid.npz",
                        codes=result.refined_grid.codes.numpy())
    for name, pose_list in (("source", src.poses), ("target", tgt_poses)):
        renders = render_view_set(result.refined_grid, pose_list, model,
                                  ds.intrinsics)
        for i, frame in enumerate(renders):
            reports.save_frame(frame, out_dir / f"{name}_pred_{i:03d}.png")
    reports.write_json(out_dir / "metrics.json", metrics)
    click.echo(f"memorization {metrics['memorization']}  "
               f"hallucination {metrics['hallucination']}")


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--samples", default=500, show_default=True)
@click.pass_context
def eval_cmd(ctx, ckpt, data, out, samples):
    """FID-proxy report between dataset frames and generator samples."""
    model, meta = _load_model(ckpt)
    ds = read_dataset(data)
    seed = _seed(ctx)
    value = fid_proxy(model, ds, n=samples, seed=seed)
    out_dir = Path(out)
    payload = {"fid_proxy": value, "samples": samples, "seed": seed,
               "checkpoint": str(ckpt)}
    reports.write_json(out_dir / "eval.json", payload)
    click.echo(f"fid_proxy {value:.3f} ({samples} samples/side)")


@cli.command("rotation-sweep")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--angles", default="0,90,180,270", show_default=True)
@click.option("--scenes", default=8, show_default=True)
@click.pass_context
def rotation_sweep_cmd(ctx, ckpt, data, out, angles, scenes):
    """Render-quality robustness to rigid rotations of the code grid."""
    model, meta = _load_model(ckpt)
    ds = read_dataset(data)
    angle_list = [float(a) for a in angles.split(",")]
    rows = rotation_sweep(model, ds, angle_list, n_scenes=scenes, seed=_seed(ctx))
    out_dir = Path(out)
    reports.write_csv(out_dir / "rotation_sweep.csv", rows)
    reports.save_rotation_sweep_figure(rows, out_dir / "rotation_sweep.png")
    for row in rows:
        click.echo(f"angle {row['angle']:6.1f}  fid_proxy {row['fid_proxy']:.4f}")


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=7, show_default=True)
@click.option("--seed-a", default=0, show_default=True)
@click.option("--seed-b", default=1, show_default=True)
@click.pass_context
def interpolate(ctx, ckpt, out, steps, seed_a, seed_b):
    """Render a fixed-camera sweep between two scene latents."""
    model, meta = _load_model(ckpt)
    intr = _intrinsics_from_meta(meta, model.cfg.output_res)
    d = model.cfg.latent_dim
    z_a = torch.randn(d, generator=torch.Generator().manual_seed(seed_a))
    z_b = torch.randn(d, generator=torch.Generator().manual_seed(seed_b))
    frames = interpolate_latents(model, z_a, z_b, steps, CameraPose.identity(), intr)
    out_dir = Path(out)
    for i, f in enumerate(frames):
        reports.save_frame(f.clamp(0, 1), out_dir / f"interp_{i:03d}.png")
    reports.save_frame_strip([f.clamp(0, 1) for f in frames],
                             out_dir / "interpolation.png")
    click.echo(f"wrote {len(frames)} interpolation frames to {out_dir}")


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.pass_context
def serve(ctx, ckpt, host, port):
    """Serve rendering/editing/inversion over HTTP."""
    from .service import SceneRegistry
    from .service import serve as run_server

    model, meta = _load_model(ckpt)
    intr = _intrinsics_from_meta(meta, model.cfg.output_res)
    run_server(SceneRegistry(model, intr), host=host, port=port)


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.UsageError as e:
        e.show()
        sys.exit(2)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except Exception as e:  # runtime failures exit 1 with a short message
        print(f"error: {e}", file=sys.stderr)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
