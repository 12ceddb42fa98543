"""Command-line entry point.

Exit codes: 0 success, 1 validation/processing error, 2 partial failure
(auto-rejected samples under --strict), 64 usage errors.  Logs go to
stderr; data goes to files or stdout.
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click

from .config import RunConfig, config_to_dict, load_run_config
from .errors import RiskforgeError
from .metrics import evaluate_pairs, load_predictions
from .pipeline import (
    QC_AUTO_REJECTED,
    build_dataset,
    gold_rows,
    read_manifest,
    split as split_records,
    write_manifest,
)
from .projection import placeholder_frame, project_waypoints, render_bev, render_overlay
from .raster import read_png, write_png
from .rules import label as label_fn
from .scene import Scene, Trajectory, Vec2, load_scene_path
from .synth import ExhaustedAttempts, ScenarioKind, synthesize

log = logging.getLogger("riskforge")

# One flag (or config-file section) per RunConfig field; tests assert this
# stays in sync with the dataclass.
RUN_CONFIG_FLAGS = {
    "scenes_dir": "--scenes",
    "out_dir": "--out",
    "seed": "--seed",
    "mix": "--mix",
    "split_ratio": "--ratio",
    "jobs": "--jobs",
    "visibility_min": "--visibility-min",
    "camera_name": "--camera",
    "review_port": "--port",
    "run_timestamp": "--timestamp",
    "synth": "--config",
    "rules": "--config",
    "overlay": "--config",
    "bev": "--config",
    "llm": "--llm-endpoint",
}


def _load_scenes(scenes_dir: str) -> list[Scene]:
    paths = sorted(
        os.path.join(scenes_dir, name)
        for name in os.listdir(scenes_dir)
        if name.endswith(".json")
    )
    if not paths:
        raise RiskforgeError(f"no .json scene files in {scenes_dir}")
    return [load_scene_path(p) for p in paths]


def _parse_mix(text: str | None) -> dict | None:
    if text is None:
        return None
    mix = {}
    valid = {k.value for k in ScenarioKind}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise click.UsageError(f"--mix entries look like kind=count, got {part!r}")
        kind, _, count = part.partition("=")
        kind = kind.strip()
        if kind not in valid:
            raise click.UsageError(f"--mix: unknown kind {kind!r} (valid: {sorted(valid)})")
        try:
            mix[kind] = int(count)
        except ValueError:
            raise click.UsageError(f"--mix: count for {kind} is not an integer") from None
    return mix


def _config_from(config_path, **overrides) -> RunConfig:
    llm = {}
    for key in ("endpoint", "api_key", "timeout_s"):
        value = overrides.pop(f"llm_{key}", None)
        if value is not None:
            llm[key] = value
    if llm:
        overrides["llm"] = llm
    return load_run_config(config_path, {k: v for k, v in overrides.items() if v is not None})


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="JSON config file (same schema as print-config).")
seed_option = click.option("--seed", type=int, default=None, help="Global RNG seed.")
mix_option = click.option("--mix", default=None,
                          help="Per-scene scenario quotas, e.g. collision=1,hard_braking=2.")


@click.group(name="riskforge")
def cli():
    """Synthesize, label, render, review, and evaluate high-risk motion data."""


@cli.command("print-config")
@config_option
def print_config_cmd(config_path):
    """Print the fully-resolved run configuration as JSON."""
    cfg = _config_from(config_path)
    click.echo(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))


@cli.command("validate-scene")
@click.argument("scene_file", type=click.Path(exists=True))
def validate_scene_cmd(scene_file):
    """Validate a scene document; exits 1 with the violation on failure."""
    scene = load_scene_path(scene_file)
    click.echo(f"ok: scene {scene.id}: {len(scene.agents)} agents, "
               f"{scene.n_steps} future waypoints, {len(scene.cameras)} cameras")


@cli.command("synth")
@config_option
@seed_option
@mix_option
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_file", type=click.Path(), default=None,
              help="Trajectories JSONL output path.")
@click.option("--print-config", "show_config", is_flag=True,
              help="Print the synthesis defaults and exit.")
def synth_cmd(config_path, seed, mix, scenes_dir, out_file, show_config):
    """Generate high-risk candidate trajectories for every scene."""
    cfg = _config_from(config_path, seed=seed, mix=_parse_mix(mix),
                       scenes_dir=scenes_dir)
    if show_config:
        click.echo(json.dumps(config_to_dict(cfg.synth), indent=2, sort_keys=True))
        return
    if scenes_dir is None and not os.path.isdir(cfg.scenes_dir):
        raise click.UsageError("--scenes is required (or set scenes_dir in the config)")
    scenes = _load_scenes(cfg.scenes_dir)
    out_file = out_file or "trajectories.jsonl"
    failures = 0
    with open(out_file, "w", encoding="utf-8") as fh:
        for scene in sorted(scenes, key=lambda s: s.id):
            for kind in ScenarioKind:
                for index in range(cfg.mix.get(kind.value, 0)):
                    try:
                        cand = synthesize(scene, kind, cfg.synth,
                                          lambda t, s: label_fn(t, s, cfg.rules), index=index)
                    except ExhaustedAttempts as exc:
                        log.warning("%s", exc)
                        failures += 1
                        continue
                    fh.write(json.dumps({
                        "sample_id": f"{scene.id}__{kind.value}__{index:03d}",
                        "scene_id": scene.id,
                        "intended_kind": kind.value,
                        "dt_s": cand.trajectory.dt,
                        "waypoints": [[w.x, w.y] for w in cand.trajectory.waypoints],
                        "attempt_count": cand.attempt_count,
                    }, sort_keys=True) + "\n")
    click.echo(f"wrote {out_file} ({failures} failures)", err=True)
    if failures:
        sys.exit(2)


def _read_trajectories(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


@cli.command("label")
@config_option
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True), required=True)
@click.option("--trajectories", "traj_file", type=click.Path(exists=True), required=True)
@click.option("--out", "out_file", type=click.Path(), default="labels.jsonl")
def label_cmd(config_path, scenes_dir, traj_file, out_file):
    """Label trajectories against their scenes; one record per sample."""
    cfg = _config_from(config_path, scenes_dir=scenes_dir)
    scenes = {s.id: s for s in _load_scenes(scenes_dir)}
    with open(out_file, "w", encoding="utf-8") as fh:
        for row in _read_trajectories(traj_file):
            scene = scenes.get(row["scene_id"])
            if scene is None:
                raise RiskforgeError(f"{row['sample_id']}: unknown scene {row['scene_id']}")
            traj = Trajectory(tuple(Vec2(x, y) for x, y in row["waypoints"]), row["dt_s"])
            risk = label_fn(traj, scene, cfg.rules)
            fh.write(json.dumps({
                "sample_id": row["sample_id"],
                "scene_id": row["scene_id"],
                "primary": risk.primary.value if risk.primary else "safe",
                "categories": sorted(k.value for k in risk.categories),
                "events": [
                    {"kind": e.kind.value, "t_index": e.t_index, "evidence": e.evidence}
                    for e in risk.events
                ],
            }, sort_keys=True) + "\n")
    click.echo(f"wrote {out_file}", err=True)


@cli.command("render")
@config_option
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True), required=True)
@click.option("--trajectories", "traj_file", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), default="renders")
@click.option("--camera", "camera_name", default=None, help="Camera name (default: first).")
def render_cmd(config_path, scenes_dir, traj_file, out_dir, camera_name):
    """Render front-view overlay and BEV layout images per sample."""
    cfg = _config_from(config_path, scenes_dir=scenes_dir, camera_name=camera_name)
    scenes = {s.id: s for s in _load_scenes(scenes_dir)}
    os.makedirs(out_dir, exist_ok=True)
    for row in _read_trajectories(traj_file):
        scene = scenes[row["scene_id"]]
        traj = Trajectory(tuple(Vec2(x, y) for x, y in row["waypoints"]), row["dt_s"])
        camera = scene.camera(cfg.camera_name) if cfg.camera_name else scene.cameras[0]
        base = read_png(camera.image_path) if camera.image_path else placeholder_frame(camera)
        front = render_overlay(base, project_waypoints(traj, camera), cfg.overlay, camera)
        bev = render_bev(scene, traj, cfg.bev.extent_m, cfg.bev.px_per_m, cfg.overlay)
        write_png(front, os.path.join(out_dir, f"{row['sample_id']}_front.png"))
        write_png(bev, os.path.join(out_dir, f"{row['sample_id']}_bev.png"))
    click.echo(f"wrote images to {out_dir}", err=True)


@cli.command("build-dataset")
@config_option
@seed_option
@mix_option
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--jobs", type=int, default=None, help="Parallel workers (default 1).")
@click.option("--visibility-min", type=float, default=None,
              help="Auto-reject below this projected-visibility fraction.")
@click.option("--camera", "camera_name", default=None)
@click.option("--timestamp", "run_timestamp", default=None,
              help="Timestamp string embedded in the manifest (never the clock).")
@click.option("--llm-endpoint", default=None, help="Chat-completion endpoint for captions.")
@click.option("--llm-api-key", default=None)
@click.option("--llm-timeout-s", type=float, default=None)
@click.option("--strict", is_flag=True, help="Exit 2 when any sample is auto-rejected.")
def build_dataset_cmd(config_path, seed, mix, scenes_dir, out_dir, jobs, visibility_min,
                      camera_name, run_timestamp, llm_endpoint, llm_api_key,
                      llm_timeout_s, strict):
    """Run the full pipeline: synth, label, render, gate, caption, manifest."""
    cfg = _config_from(
        config_path, seed=seed, mix=_parse_mix(mix), scenes_dir=scenes_dir,
        out_dir=out_dir, jobs=jobs, visibility_min=visibility_min,
        camera_name=camera_name, run_timestamp=run_timestamp,
        llm_endpoint=llm_endpoint, llm_api_key=llm_api_key, llm_timeout_s=llm_timeout_s,
    )
    if not os.path.isdir(cfg.scenes_dir):
        raise click.UsageError("--scenes is required (or set scenes_dir in the config)")
    scenes = _load_scenes(cfg.scenes_dir)
    os.makedirs(cfg.out_dir, exist_ok=True)
    result = build_dataset(scenes, cfg.mix, cfg, out_dir=cfg.out_dir, jobs=cfg.jobs)
    rejected = sum(1 for r in result.records if r.qc_state == QC_AUTO_REJECTED)
    click.echo(f"wrote {result.manifest_path}: {len(result.records)} records, "
               f"{rejected} auto-rejected", err=True)
    if strict and rejected:
        sys.exit(2)


@cli.command("split")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--ratio", type=float, default=None, help="Train fraction (default 0.8).")
@seed_option
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Output manifest (default: rewrite in place).")
def split_cmd(manifest_path, ratio, seed, out_path):
    """Assign approved records to train/test by whole scenes and attach VQA."""
    manifest = read_manifest(manifest_path)
    cfg = manifest.config
    ratio = ratio if ratio is not None else cfg.split_ratio
    seed = seed if seed is not None else cfg.seed
    records = split_records(manifest.records, ratio=ratio, seed=seed)
    out_path = out_path or manifest_path
    write_manifest(out_path, records, cfg)
    n_train = sum(1 for r in records if r.split == "train")
    n_test = sum(1 for r in records if r.split == "test")
    click.echo(f"wrote {out_path}: {n_train} train / {n_test} test", err=True)


@cli.command("eval")
@click.option("--gold", "gold_path", type=click.Path(exists=True), required=True,
              help="Gold manifest (JSONL).")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True,
              help="Predictions JSONL: {sample_id, stage1_text, stage2_text, stage3_text}.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the machine-readable JSON report here.")
def eval_cmd(gold_path, pred_path, out_path):
    """Score a prediction file against a gold manifest."""
    manifest = read_manifest(gold_path)
    report = evaluate_pairs(gold_rows(manifest), load_predictions(pred_path))
    click.echo(report.to_table())
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        click.echo(f"wrote {out_path}", err=True)


@cli.command("review-serve")
@config_option
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--port", type=int, default=None)
@click.option("--host", default="127.0.0.1")
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Static UI assets to serve at / (default: ./frontend/dist if present).")
def review_serve_cmd(config_path, manifest_path, port, host, ui_dir):
    """Serve the review API (and UI when built) over HTTP."""
    from .review import serve

    cfg = _config_from(config_path, review_port=port)
    if ui_dir is None and os.path.isdir(os.path.join("frontend", "dist")):
        ui_dir = os.path.join("frontend", "dist")
    serve(manifest_path, port=cfg.review_port, ui_dir=ui_dir, host=host)


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(64)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except RiskforgeError as exc:
        log.error("%s", exc)
        sys.exit(1)


if __name__ == "__main__":
    main()
