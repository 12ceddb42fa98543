"""End-to-end dataset assembly: synth -> label -> render -> caption -> QC gate.

A build walks scenes in sorted order, synthesizes the requested mix of
scenario kinds per scene, renders the front-view overlay and BEV layout,
auto-rejects samples that fail synthesis or visibility gating, captions the
survivors, and writes a line-delimited JSON manifest whose footer embeds
the full config and seed.  Identical inputs produce byte-identical
manifests and images regardless of worker count.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import llm as llm_client
from .config import LlmConfig, RunConfig, config_to_dict
from .errors import RiskforgeError, ValidationError
from .metrics import CANONICAL_TOKEN, SAFE
from .projection import placeholder_frame, project_waypoints, render_bev, render_overlay, visibility_ratio
from .raster import read_png, to_png_bytes
from .rules import RiskLabel, RiskEvent, kinematic_profile, label as label_fn
from .scene import Scene, Trajectory, Vec2
from .synth import ExhaustedAttempts, ScenarioKind, synthesize

log = logging.getLogger(__name__)

MANIFEST_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"

QC_PENDING = "pending"
QC_AUTO_REJECTED = "auto_rejected"
QC_APPROVED = "approved"
QC_REJECTED = "rejected"

SPLIT_UNASSIGNED = "unassigned"
SPLIT_TRAIN = "train"
SPLIT_TEST = "test"

CAPTION_TEMPLATE = "template"
CAPTION_LLM = "llm"

STAGE_SCENE = "scene_understanding"
STAGE_MOTION = "motion_analysis"
STAGE_RISK = "risk_prediction"

# Fixed VQA prompt strings (documented in the README; tests pin them).
STAGE_PROMPTS = {
    STAGE_SCENE: (
        "You are shown the front camera view with the planned ego motion "
        "overlaid, and a bird's-eye-view layout of the same scene. Describe "
        "the driving scene: road layout, drivable space, and every traffic "
        "participant."
    ),
    STAGE_MOTION: (
        "Analyze the planned motion drawn over the images: how do speed, "
        "acceleration, and curvature evolve, and where does the path lead "
        "relative to other agents and the road edges?"
    ),
    STAGE_RISK: (
        "Conclude: which primary risk category, if any, does the planned "
        "motion create? Answer with one of: collision, hard braking, "
        "abnormal acceleration, lane violation, safe."
    ),
}


class NotApproved(RiskforgeError):
    pass


class NothingApproved(RiskforgeError):
    pass


@dataclass(frozen=True)
class Caption:
    scene_description: str
    motion_analysis: str
    risk_conclusion: str


@dataclass(frozen=True)
class VqaPair:
    stage: str
    prompt: str
    response: str
    image_refs: tuple[str, ...]


@dataclass
class DatasetRecord:
    sample_id: str
    scene_id: str
    intended_kind: str
    trajectory: Trajectory | None
    risk_label: RiskLabel | None
    kinematic_summary: dict
    visibility_ratio: float
    image_paths: dict
    scene_facts: dict
    caption: Caption | None = None
    caption_source: str = ""
    qc_state: str = QC_PENDING
    qc_reason: str | None = None
    split: str = SPLIT_UNASSIGNED
    attempt_count: int = 0
    vqa: tuple[VqaPair, ...] = ()


def sample_id_for(scene_id: str, kind: ScenarioKind, index: int) -> str:
    return f"{scene_id}__{kind.value}__{index:03d}"


def primary_name(label: RiskLabel | None) -> str:
    if label is None or label.primary is None:
        return SAFE
    return label.primary.value


# ----------------------------------------------------------------------------
# Captions


def _agent_phrase(counts: dict) -> str:
    parts = []
    for kind in ("vehicle", "pedestrian", "cyclist", "other"):
        n = counts.get(kind, 0)
        if n:
            noun = kind if n == 1 else (kind + "s")
            parts.append(f"{n} {noun}")
    if not parts:
        return "no other traffic participants"
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def scene_facts_for(scene: Scene) -> dict:
    counts: dict[str, int] = {}
    for agent in scene.agents:
        counts[agent.kind] = counts.get(agent.kind, 0) + 1
    return {
        "agent_counts": counts,
        "drivable_polygons": len(scene.map.drivable_area),
        "boundaries": len(scene.map.boundaries),
        "non_crossable_boundaries": sum(1 for b in scene.map.boundaries if not b.crossable),
        "ego_speed_mps": scene.ego.speed,
        "horizon_s": scene.horizon,
    }


def _event_sentences(record: DatasetRecord) -> list[str]:
    sentences = []
    dt = record.trajectory.dt if record.trajectory else 0.0
    for event in (record.risk_label.events if record.risk_label else ()):
        ev = event.evidence
        t = event.t_index * dt
        if event.kind is ScenarioKind.COLLISION:
            sentences.append(
                f"It closes to {ev['min_distance']:.2f} m of agent {ev['agent_id']} "
                f"around t={t:.1f} s.")
        elif event.kind is ScenarioKind.HARD_BRAKING:
            sentences.append(
                f"It sustains {ev['peak']:.1f} m/s² of deceleration for {ev['duration']:.1f} s.")
        elif event.kind is ScenarioKind.ABNORMAL_ACCELERATION:
            sentences.append(
                f"It sustains {ev['peak']:.1f} m/s² of acceleration for {ev['duration']:.1f} s.")
        else:
            where = ("the drivable area edge" if ev["boundary_id"] == "off_road"
                     else f"boundary {ev['boundary_id']}")
            sentences.append(f"It leaves the road across {where} at t={t:.1f} s.")
    return sentences


def _risk_conclusion(record: DatasetRecord) -> str:
    label = record.risk_label
    if label is None or label.primary is None:
        return ("No high-risk behavior is detected over the planning horizon. "
                "The primary risk category is safe.")
    token = CANONICAL_TOKEN[label.primary]
    event = next((e for e in label.events if e.kind is label.primary), None)
    detail = ""
    if event is not None:
        ev = event.evidence
        if label.primary is ScenarioKind.COLLISION:
            detail = (f"The separation to agent {ev['agent_id']} falls to "
                      f"{ev['min_distance']:.2f} m, inside the safety margin. ")
        elif label.primary in (ScenarioKind.HARD_BRAKING, ScenarioKind.ABNORMAL_ACCELERATION):
            detail = f"The peak magnitude reaches {ev['peak']:.1f} m/s² over {ev['duration']:.1f} s. "
        else:
            dt = record.trajectory.dt if record.trajectory else 0.0
            detail = f"The planned path exits the permitted road space at t={event.t_index * dt:.1f} s. "
    return f"{detail}The primary risk category is {token}."


def caption_template(record: DatasetRecord) -> Caption:
    """Deterministic slot-filled caption triple."""
    facts = record.scene_facts
    ks = record.kinematic_summary
    scene_text = (
        f"The scene covers {facts.get('drivable_polygons', 0)} drivable polygon(s) and "
        f"{facts.get('boundaries', 0)} mapped boundaries, "
        f"{facts.get('non_crossable_boundaries', 0)} of which must not be crossed. "
        f"It contains {_agent_phrase(facts.get('agent_counts', {}))}. "
        f"The ego vehicle starts at {facts.get('ego_speed_mps', 0.0):.1f} m/s."
    )
    motion_parts = [
        f"Over the next {facts.get('horizon_s', 0.0):.1f} s the planned motion reaches "
        f"{ks.get('max_speed', 0.0):.1f} m/s with peak acceleration "
        f"{ks.get('peak_accel', 0.0):.1f} m/s², peak deceleration "
        f"{ks.get('peak_decel', 0.0):.1f} m/s², and maximum curvature "
        f"{ks.get('max_curvature', 0.0):.3f} 1/m."
    ]
    motion_parts.extend(_event_sentences(record))
    return Caption(scene_text, " ".join(motion_parts), _risk_conclusion(record))


def caption_llm(record: DatasetRecord, client_cfg: LlmConfig) -> tuple[Caption, str, str | None]:
    """Caption via the configured chat endpoint, falling back to the template
    on any failure.  Returns (caption, caption_source, warning)."""
    facts = {
        "sample_id": record.sample_id,
        "intended_kind": record.intended_kind,
        "primary_risk": primary_name(record.risk_label),
        "kinematics": record.kinematic_summary,
        "scene_facts": record.scene_facts,
        "events": [
            {"kind": e.kind.value, "t_index": e.t_index, "evidence": e.evidence}
            for e in (record.risk_label.events if record.risk_label else ())
        ],
        "images": record.image_paths,
    }
    try:
        scene_text, motion_text, risk_text = llm_client.request_caption(client_cfg, facts)
        return Caption(scene_text, motion_text, risk_text), CAPTION_LLM, None
    except llm_client.LlmError as exc:
        warning = f"{record.sample_id}: llm caption failed ({type(exc).__name__}: {exc}); using template"
        return caption_template(record), CAPTION_TEMPLATE, warning


def make_vqa(record: DatasetRecord) -> tuple[VqaPair, VqaPair, VqaPair]:
    """Three stage-ordered QA pairs for an approved, captioned record."""
    if record.qc_state != QC_APPROVED:
        raise NotApproved(f"{record.sample_id}: qc_state is {record.qc_state}")
    if record.caption is None:
        raise NotApproved(f"{record.sample_id}: record has no caption")
    refs = (record.image_paths.get("front_overlay", ""), record.image_paths.get("bev", ""))
    return (
        VqaPair(STAGE_SCENE, STAGE_PROMPTS[STAGE_SCENE], record.caption.scene_description, refs),
        VqaPair(STAGE_MOTION, STAGE_PROMPTS[STAGE_MOTION], record.caption.motion_analysis, refs),
        VqaPair(STAGE_RISK, STAGE_PROMPTS[STAGE_RISK], record.caption.risk_conclusion, refs),
    )


# ----------------------------------------------------------------------------
# Kinematic summary


def kinematic_summary(traj: Trajectory) -> dict:
    profile = kinematic_profile(traj)
    return {
        "max_speed": float(np.max(profile.speed)),
        "peak_accel": float(max(np.max(profile.accel), 0.0)),
        "peak_decel": float(max(-np.min(profile.accel), 0.0)),
        "max_curvature": float(np.max(profile.curvature)),
    }


# ----------------------------------------------------------------------------
# Build


@dataclass
class BuildResult:
    records: list[DatasetRecord]
    warnings: list[str]
    manifest_path: str | None = None


def _select_camera(scene: Scene, cfg: RunConfig):
    if not scene.cameras:
        return None
    if cfg.camera_name is None:
        return scene.cameras[0]
    for cam in scene.cameras:
        if cam.name == cfg.camera_name:
            return cam
    return None


@dataclass
class _SampleOut:
    record: DatasetRecord
    front_png: bytes | None
    bev_png: bytes | None
    warning: str | None


def _build_sample(args) -> _SampleOut:
    scene, kind, index, cfg, images_dir = args
    sample_id = sample_id_for(scene.id, kind, index)
    facts = scene_facts_for(scene)
    base_record = DatasetRecord(
        sample_id=sample_id, scene_id=scene.id, intended_kind=kind.value,
        trajectory=None, risk_label=None, kinematic_summary={},
        visibility_ratio=0.0, image_paths={}, scene_facts=facts,
    )

    def labeler(traj, sc):
        return label_fn(traj, sc, cfg.rules)

    try:
        candidate = synthesize(scene, kind, cfg.synth, labeler, index=index)
    except ExhaustedAttempts as exc:
        rec = replace_qc(base_record, QC_AUTO_REJECTED, f"synthesis: {exc.last_failure}")
        return _SampleOut(rec, None, None, f"{sample_id}: {exc}")

    traj = candidate.trajectory
    risk = label_fn(traj, scene, cfg.rules)
    summary = kinematic_summary(traj)

    camera = _select_camera(scene, cfg)
    if camera is None:
        rec = replace_record(base_record, trajectory=traj, risk_label=risk,
                             kinematic_summary=summary,
                             attempt_count=candidate.attempt_count)
        return _SampleOut(replace_qc(rec, QC_AUTO_REJECTED, "no_camera"), None, None,
                          f"{sample_id}: scene has no usable camera")

    projected = project_waypoints(traj, camera)
    vis = visibility_ratio(projected)
    if camera.image_path:
        base = read_png(camera.image_path)
    else:
        base = placeholder_frame(camera)
    front = render_overlay(base, projected, cfg.overlay, camera)
    bev = render_bev(scene, traj, cfg.bev.extent_m, cfg.bev.px_per_m, cfg.overlay)
    image_paths = {
        "front_overlay": os.path.join(images_dir, f"{sample_id}_front.png"),
        "bev": os.path.join(images_dir, f"{sample_id}_bev.png"),
    }
    record = replace_record(
        base_record, trajectory=traj, risk_label=risk, kinematic_summary=summary,
        visibility_ratio=vis, image_paths=image_paths,
        attempt_count=candidate.attempt_count,
    )
    warning = None
    if vis < cfg.visibility_min:
        record = replace_qc(record, QC_AUTO_REJECTED, "visibility")
    else:
        if cfg.llm.endpoint:
            caption, source, warning = caption_llm(record, cfg.llm)
        else:
            caption, source = caption_template(record), CAPTION_TEMPLATE
        record.caption = caption
        record.caption_source = source
    return _SampleOut(record, to_png_bytes(front), to_png_bytes(bev), warning)


def replace_record(record: DatasetRecord, **kwargs) -> DatasetRecord:
    return replace(record, **kwargs)


def replace_qc(record: DatasetRecord, state: str, reason: str | None) -> DatasetRecord:
    return replace(record, qc_state=state, qc_reason=reason)


def build_dataset(scenes: list[Scene], mix: dict[str, int], cfg: RunConfig,
                  out_dir: str | None = None, jobs: int = 1) -> BuildResult:
    """Run the full pipeline over scenes x mix quotas.

    Records come back in (scene_id, kind, index) order; when ``out_dir`` is
    given, images land in ``out_dir/images`` and the manifest in
    ``out_dir/manifest.jsonl``.  Per-sample failures become auto-rejected
    records, never abort the run.
    """
    kinds = [k for k in ScenarioKind if mix.get(k.value, 0) > 0]
    tasks = []
    images_dir = os.path.join(out_dir, "images") if out_dir else ""
    for scene in sorted(scenes, key=lambda s: s.id):
        for kind in kinds:
            for index in range(mix[kind.value]):
                tasks.append((scene, kind, index, cfg, images_dir))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_build_sample, tasks, chunksize=1))
    else:
        outputs = [_build_sample(t) for t in tasks]

    records = []
    warnings = []
    manifest_path = None
    if out_dir:
        os.makedirs(images_dir, exist_ok=True)
    for out in outputs:
        records.append(out.record)
        if out.warning:
            warnings.append(out.warning)
        if out_dir and out.front_png is not None:
            with open(out.record.image_paths["front_overlay"], "wb") as fh:
                fh.write(out.front_png)
            with open(out.record.image_paths["bev"], "wb") as fh:
                fh.write(out.bev_png)
    if out_dir:
        manifest_path = os.path.join(out_dir, MANIFEST_NAME)
        write_manifest(manifest_path, records, cfg)
    for warning in warnings:
        log.warning("%s", warning)
    return BuildResult(records, warnings, manifest_path)


# ----------------------------------------------------------------------------
# Split


def split(records: list[DatasetRecord], ratio: float = 0.8, seed: int = 0) -> list[DatasetRecord]:
    """Assign approved records to train/test by whole scenes.

    Scene groups are shuffled with the seed and fed to train until the train
    record count first reaches ratio x total; no scene straddles the split.
    Returns new records (others keep split=unassigned); approved records
    also get their VQA pairs attached.
    """
    approved = [r for r in records if r.qc_state == QC_APPROVED]
    if not approved:
        raise NothingApproved("no approved records to split")
    if not 0.0 < ratio < 1.0:
        raise ValidationError("split ratio must be in (0, 1)")
    by_scene: dict[str, int] = {}
    for r in approved:
        by_scene[r.scene_id] = by_scene.get(r.scene_id, 0) + 1
    scene_ids = sorted(by_scene)
    import random as _random

    _random.Random(seed).shuffle(scene_ids)
    target = ratio * len(approved)
    train_scenes = set()
    count = 0
    for scene_id in scene_ids:
        if count < target:
            train_scenes.add(scene_id)
            count += by_scene[scene_id]
    out = []
    for r in records:
        if r.qc_state != QC_APPROVED:
            out.append(replace(r, split=SPLIT_UNASSIGNED))
            continue
        assignment = SPLIT_TRAIN if r.scene_id in train_scenes else SPLIT_TEST
        out.append(replace(r, split=assignment, vqa=make_vqa(r)))
    return out


# ----------------------------------------------------------------------------
# Manifest serialization


def record_to_dict(record: DatasetRecord) -> dict:
    traj = record.trajectory
    risk = record.risk_label
    return {
        "sample_id": record.sample_id,
        "scene_id": record.scene_id,
        "intended_kind": record.intended_kind,
        "trajectory": None if traj is None else {
            "dt_s": traj.dt,
            "waypoints": [[w.x, w.y] for w in traj.waypoints],
        },
        "risk_label": None if risk is None else {
            "primary": primary_name(risk),
            "categories": sorted(k.value for k in risk.categories),
            "events": [
                {"kind": e.kind.value, "t_index": e.t_index, "evidence": e.evidence}
                for e in risk.events
            ],
        },
        "kinematic_summary": record.kinematic_summary,
        "visibility_ratio": record.visibility_ratio,
        "image_paths": record.image_paths,
        "scene_facts": record.scene_facts,
        "caption": None if record.caption is None else {
            "scene_description": record.caption.scene_description,
            "motion_analysis": record.caption.motion_analysis,
            "risk_conclusion": record.caption.risk_conclusion,
        },
        "caption_source": record.caption_source,
        "qc_state": record.qc_state,
        "qc_reason": record.qc_reason,
        "split": record.split,
        "attempt_count": record.attempt_count,
        "vqa": [
            {"stage": p.stage, "prompt": p.prompt, "response": p.response,
             "image_refs": list(p.image_refs)}
            for p in record.vqa
        ],
    }


def record_from_dict(doc: dict) -> DatasetRecord:
    traj = None
    if doc.get("trajectory"):
        traj = Trajectory(
            tuple(Vec2(float(x), float(y)) for x, y in doc["trajectory"]["waypoints"]),
            float(doc["trajectory"]["dt_s"]),
        )
    risk = None
    if doc.get("risk_label"):
        raw = doc["risk_label"]
        events = tuple(
            RiskEvent(ScenarioKind(e["kind"]), int(e["t_index"]), dict(e["evidence"]))
            for e in raw.get("events", [])
        )
        primary = None if raw["primary"] == SAFE else ScenarioKind(raw["primary"])
        risk = RiskLabel(frozenset(ScenarioKind(c) for c in raw.get("categories", [])),
                         primary, events)
    caption = None
    if doc.get("caption"):
        caption = Caption(**doc["caption"])
    vqa = tuple(
        VqaPair(p["stage"], p["prompt"], p["response"], tuple(p.get("image_refs", [])))
        for p in doc.get("vqa", [])
    )
    return DatasetRecord(
        sample_id=doc["sample_id"],
        scene_id=doc["scene_id"],
        intended_kind=doc["intended_kind"],
        trajectory=traj,
        risk_label=risk,
        kinematic_summary=dict(doc.get("kinematic_summary", {})),
        visibility_ratio=float(doc.get("visibility_ratio", 0.0)),
        image_paths=dict(doc.get("image_paths", {})),
        scene_facts=dict(doc.get("scene_facts", {})),
        caption=caption,
        caption_source=doc.get("caption_source", ""),
        qc_state=doc.get("qc_state", QC_PENDING),
        qc_reason=doc.get("qc_reason"),
        split=doc.get("split", SPLIT_UNASSIGNED),
        attempt_count=int(doc.get("attempt_count", 0)),
        vqa=vqa,
    )


def _dump_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def write_manifest(path, records: list[DatasetRecord], cfg: RunConfig) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_dump_line(record_to_dict(record)) + "\n")
        footer = {
            "record_count": len(records),
            "config": config_to_dict(cfg),
            "seed": cfg.seed,
            "format_version": MANIFEST_FORMAT_VERSION,
        }
        fh.write(_dump_line(footer) + "\n")
    os.replace(tmp, path)


@dataclass
class Manifest:
    records: list[DatasetRecord]
    footer: dict

    @property
    def config(self) -> RunConfig:
        from .config import run_config_from_dict

        return run_config_from_dict(self.footer.get("config", {}))


def read_manifest(path) -> Manifest:
    records = []
    footer = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if "format_version" in doc:
                footer = doc
            else:
                records.append(record_from_dict(doc))
    if footer is None:
        raise ValidationError(f"manifest {path}: missing footer line")
    if footer.get("record_count") != len(records):
        raise ValidationError(
            f"manifest {path}: footer record_count {footer.get('record_count')} "
            f"!= {len(records)} records")
    return Manifest(records, footer)


def gold_rows(manifest: Manifest):
    """(sample_id, scene text, motion text, primary class) for every captioned,
    non-rejected record; the gold side of evaluation."""
    rows = []
    for r in manifest.records:
        if r.caption is None or r.qc_state in (QC_AUTO_REJECTED, QC_REJECTED):
            continue
        rows.append((r.sample_id, r.caption.scene_description,
                     r.caption.motion_analysis, primary_name(r.risk_label)))
    return rows
