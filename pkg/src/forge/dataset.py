"""Manifest-driven synthesis pipeline and evaluation-manifest loading.

A synthesis manifest is JSON-lines; each line binds a source image, its
mask and a target image to an ordered list of steps::

    {"id": "s1", "source": "s.png", "mask": "k.png", "target": "t.png",
     "steps": ["compose", {"op": "blend", "mode": "variational"},
               {"op": "refine", "boundary": "ground_truth_edge"},
               {"op": "attack", "attack": {"kind": "jpeg", "quality": 70}}],
     "outputs": "out"}
"""
from __future__ import annotations

import hashlib
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .blend import BlendConfig, descend, poisson_blend
from .compositor import AttackSpec, apply_attack, compose, refine, resize_bilinear, resize_nearest
from .image import load_image, load_mask, load_soft_mask, save_image, save_mask
from .morphology import DEFAULT_EDGE_RADIUS, edge_mask

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ComposeStep(_Strict):
    op: Literal["compose"] = "compose"


class BlendStep(_Strict):
    op: Literal["blend"] = "blend"
    mode: Literal["poisson", "variational"] = "variational"
    lambda_grad: float = Field(1.0, ge=0)
    lambda_edge: float = Field(2.0, ge=0)
    solver_tol: float = Field(1e-6, gt=0)
    max_iters: Optional[int] = Field(None, ge=1)
    step_size: float = Field(0.5, gt=0)

    def config(self, edge_radius: int) -> BlendConfig:
        return BlendConfig(lambda_grad=self.lambda_grad, lambda_edge=self.lambda_edge,
                           solver_tol=self.solver_tol, max_iters=self.max_iters,
                           step_size=self.step_size, edge_radius=edge_radius)


class AttackParams(_Strict):
    kind: Literal["jpeg", "scale"]
    quality: Optional[int] = None
    ratio: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        self.spec()
        return self

    def spec(self) -> AttackSpec:
        return AttackSpec(kind=self.kind, quality=self.quality, ratio=self.ratio)


class AttackStep(_Strict):
    op: Literal["attack"] = "attack"
    attack: AttackParams


class RefineStep(_Strict):
    op: Literal["refine"] = "refine"
    # "ground_truth_edge" or a path to an externally predicted boundary mask
    boundary: str = "ground_truth_edge"


Step = Annotated[Union[ComposeStep, BlendStep, RefineStep, AttackStep], Field(discriminator="op")]


class SampleManifestEntry(_Strict):
    id: str = Field(min_length=1)
    source: Path
    mask: Path
    target: Path
    steps: list[Step] = Field(min_length=1)
    outputs: Path = Path("outputs")
    size_policy: Literal["reject", "center_crop"] = "reject"
    edge_radius: int = Field(DEFAULT_EDGE_RADIUS, ge=1)
    mask_threshold: int = Field(128, ge=0, le=255)

    @field_validator("steps", mode="before")
    @classmethod
    def _bare_names(cls, steps):
        if isinstance(steps, list):
            return [{"op": s} if isinstance(s, str) else s for s in steps]
        return steps

    @model_validator(mode="after")
    def _check_order(self):
        if self.steps[0].op != "compose":
            raise ValueError("the first step must be compose")
        scaled = False
        for step in self.steps[1:]:
            if step.op == "compose":
                raise ValueError("compose may only appear as the first step")
            if scaled and step.op != "attack":
                raise ValueError(f"{step.op} cannot follow a scale attack")
            if step.op == "attack" and step.attack.kind == "scale":
                scaled = True
        return self

    def resolved(self, base: Path) -> "SampleManifestEntry":
        fix = lambda p: p if p.is_absolute() else base / p
        steps = [
            s.model_copy(update={"boundary": str(fix(Path(s.boundary)))})
            if s.op == "refine" and s.boundary != "ground_truth_edge" else s
            for s in self.steps
        ]
        return self.model_copy(update={
            "source": fix(self.source), "mask": fix(self.mask), "target": fix(self.target),
            "outputs": fix(self.outputs), "steps": steps,
        })


def _read_jsonl(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc


def _validate_lines(path, model):
    path = Path(path)
    base = path.resolve().parent
    entries, seen = [], {}
    for lineno, raw in _read_jsonl(path):
        try:
            entry = model.model_validate(raw)
        except ValidationError as exc:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or '<entry>'}: {err['msg']}"
                for err in exc.errors()
            )
            raise ManifestError(f"{path}:{lineno}: {problems}") from None
        if entry.id in seen:
            raise ManifestError(
                f"{path}: duplicate id {entry.id!r} on lines {seen[entry.id]} and {lineno}"
            )
        seen[entry.id] = lineno
        entries.append(entry.resolved(base))
    return entries


def parse_manifest(path) -> list[SampleManifestEntry]:
    """Load a synthesis manifest; relative paths resolve against its directory."""
    return _validate_lines(path, SampleManifestEntry)


# -- pipeline ------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _center_crop(arr, h, w):
    top = (arr.shape[0] - h) // 2
    left = (arr.shape[1] - w) // 2
    return arr[top:top + h, left:left + w]


def _load_inputs(entry: SampleManifestEntry):
    source = load_image(entry.source)
    mask = load_mask(entry.mask, entry.mask_threshold)
    target = load_image(entry.target)
    sizes = {source.shape[:2], mask.shape, target.shape[:2]}
    if len(sizes) > 1:
        if entry.size_policy == "reject":
            raise ValueError(f"input sizes differ: {sorted(sizes)}")
        h = min(s[0] for s in sizes)
        w = min(s[1] for s in sizes)
        source, mask, target = (_center_crop(a, h, w) for a in (source, mask, target))
    if source.shape[2] != target.shape[2]:
        raise ValueError("source and target channel counts differ")
    return source, mask, target


def _step_params(step) -> dict:
    return step.model_dump(exclude={"op"}, exclude_none=True, mode="json")


def process_entry(entry: SampleManifestEntry) -> dict:
    """Run one entry's steps in order and write its outputs and provenance."""
    out_dir = Path(entry.outputs) / entry.id
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "id": entry.id,
        "tool_version": __version__,
        "status": "ok",
        "error": None,
        "inputs": {},
        "steps": [],
    }
    try:
        for name in ("source", "mask", "target"):
            path = Path(getattr(entry, name))
            record["inputs"][name] = {"file": path.name, "sha256": sha256_file(path)}
        source, mask, target = _load_inputs(entry)
        image = None
        for index, step in enumerate(entry.steps):
            info = {"index": index, "name": step.op, "params": _step_params(step),
                    "outputs": {}, "losses": None}
            write_mask = False
            if step.op == "compose":
                sample = compose(source, mask, target, entry.edge_radius)
                image, mask = sample.image, sample.mask
                write_mask = True
            elif step.op == "blend":
                cfg = step.config(entry.edge_radius)
                if step.mode == "poisson":
                    image = poisson_blend(source, mask, target, cfg)
                else:
                    result = descend(source, mask, target, cfg)
                    image = result.image
                    info["losses"] = result.losses.to_dict()
                    info["initial_losses"] = result.initial_losses.to_dict()
                    info["iterations"] = result.iterations
            elif step.op == "refine":
                if step.boundary == "ground_truth_edge":
                    boundary = edge_mask(mask, entry.edge_radius)
                else:
                    boundary = load_mask(step.boundary, entry.mask_threshold)
                    info["params"]["boundary_sha256"] = sha256_file(step.boundary)
                    info["params"]["boundary"] = Path(step.boundary).name
                sample = refine(image, mask, target, boundary, entry.edge_radius)
                image, mask = sample.image, sample.mask
                write_mask = True
            elif step.op == "attack":
                spec = step.attack.spec()
                image, mask = apply_attack(image, mask, spec)
                write_mask = spec.kind == "scale"
            stem = f"{index}_{step.op}"
            save_image(image, out_dir / f"{stem}.png")
            info["outputs"][f"{stem}.png"] = sha256_file(out_dir / f"{stem}.png")
            if write_mask:
                save_mask(mask, out_dir / f"{stem}_mask.png")
                info["outputs"][f"{stem}_mask.png"] = sha256_file(out_dir / f"{stem}_mask.png")
            record["steps"].append(info)
    except Exception as exc:  # recorded per entry; other entries continue
        log.error("entry %s failed: %s", entry.id, exc)
        log.debug("%s", traceback.format_exc())
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
    with open(out_dir / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def run_pipeline(entries, jobs: int = 1) -> list[dict]:
    """Process every entry, optionally across ``jobs`` worker processes.

    Records come back in manifest order regardless of scheduling.
    """
    entries = list(entries)
    if jobs <= 1 or len(entries) <= 1:
        return [process_entry(e) for e in entries]
    with ProcessPoolExecutor(max_workers=min(jobs, len(entries))) as pool:
        return list(pool.map(process_entry, entries))


def verify_provenance(entry_dir) -> bool:
    """Check every hash in ``provenance.json`` against the files beside it."""
    entry_dir = Path(entry_dir)
    record = json.loads((entry_dir / "provenance.json").read_text(encoding="utf-8"))
    for step in record["steps"]:
        for name, digest in step["outputs"].items():
            if sha256_file(entry_dir / name) != digest:
                return False
    return True


# -- evaluation manifests --------------------------------------------------------

class EvalPair(_Strict):
    id: str = Field(min_length=1)
    prediction: Path
    ground_truth: Path
    # how to reconcile a size mismatch (e.g. after a scale attack)
    align: Literal["none", "rescale_gt", "upsample_pred"] = "none"

    def resolved(self, base: Path) -> "EvalPair":
        fix = lambda p: p if p.is_absolute() else base / p
        return self.model_copy(update={"prediction": fix(self.prediction),
                                       "ground_truth": fix(self.ground_truth)})


def parse_eval_manifest(path) -> list[EvalPair]:
    return _validate_lines(path, EvalPair)


def load_eval_pair(pair: EvalPair, mask_threshold: int = 128):
    """Return ``(soft prediction, binary ground truth)`` at a common size."""
    pred = load_soft_mask(pair.prediction)
    gt = load_mask(pair.ground_truth, mask_threshold)
    if pred.shape != gt.shape:
        if pair.align == "rescale_gt":
            gt = resize_nearest(gt, *pred.shape)
        elif pair.align == "upsample_pred":
            pred = np.clip(resize_bilinear(pred, *gt.shape)[:, :, 0], 0.0, 1.0)
        else:
            raise ValueError(f"{pair.id}: prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt
