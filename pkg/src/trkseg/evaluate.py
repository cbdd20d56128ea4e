"""Benchmark evaluation, report generation, and the ablation runner.

Predictions live under `<pred_dir>/<video_id>/{t:05d}.png` (the layout the
`infer` command writes). Missing or corrupt predictions score 0 and flag the
report rather than being skipped, so a partial run can never inflate the
benchmark. Benchmark-level J and F average per-video values; gIoU/cIoU pool
all frames as independent image pairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .datakit import DatasetManifest, expression_family, load_sample
from .errors import DataError, NumericAbort
from .inferpost import post_optimize, save_predictions, segment_video
from .metrics import contour_accuracy_F, giou_ciou, region_similarity_J
from .model import load_checkpoint
from .sampler import token_budget
from .trainer import TrainConfig, train

AXES = ("objective", "strategy", "post_opt")
AXIS_VALUES = {
    "objective": ("seg_all", "seg_one"),
    "strategy": ("sparse_dense", "n_frame", "st_pool", "slow_fast"),
    "post_opt": (False, True),
}


@dataclass
class SampleScore:
    video_id: str
    J: float
    F: float
    query_type: str
    family: str
    error: str | None = None

    @property
    def JandF(self) -> float:
        return (self.J + self.F) / 2


@dataclass
class EvalReport:
    per_sample: list[SampleScore]
    aggregates: dict[str, float]
    by_query_type: dict[str, dict[str, float]]
    by_family: dict[str, dict[str, float]]
    config_digest: str

    @property
    def has_errors(self) -> bool:
        return any(s.error for s in self.per_sample)

    def to_json_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "by_query_type": self.by_query_type,
            "by_family": self.by_family,
            "per_sample": [
                {**asdict(s), "JandF": s.JandF} for s in self.per_sample
            ],
            "config_digest": self.config_digest,
        }

    def save(self, out_dir: Path | str) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "report.json"
        json_path.write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")
        txt_path = out_dir / "report.txt"
        txt_path.write_text(self.format_table())
        return json_path, txt_path

    def format_table(self) -> str:
        rows = [("video_id", "type", "family", "J", "F", "J&F", "note")]
        for s in self.per_sample:
            rows.append(
                (s.video_id, s.query_type, s.family, f"{s.J:.4f}", f"{s.F:.4f}",
                 f"{s.JandF:.4f}", s.error or "")
            )
        agg = self.aggregates
        rows.append(("(all)", "", "", f"{agg['J']:.4f}", f"{agg['F']:.4f}",
                     f"{agg['JandF']:.4f}",
                     f"gIoU={agg['gIoU']:.4f} cIoU={agg['cIoU']:.4f}"))
        for name, values in sorted(self.by_query_type.items()):
            rows.append((f"({name})", "", "", f"{values['J']:.4f}",
                         f"{values['F']:.4f}", f"{values['JandF']:.4f}", ""))
        for name, values in sorted(self.by_family.items()):
            rows.append((f"({name})", "", "", f"{values['J']:.4f}",
                         f"{values['F']:.4f}", f"{values['JandF']:.4f}", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                 for r in rows]
        return "\n".join(lines) + "\n"


def config_digest(payload: dict | str) -> str:
    if isinstance(payload, dict):
        payload = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _aggregate(scores: list[SampleScore]) -> dict[str, float]:
    if not scores:
        return {"J": 0.0, "F": 0.0, "JandF": 0.0}
    j = float(np.mean([s.J for s in scores]))
    f = float(np.mean([s.F for s in scores]))
    return {"J": j, "F": f, "JandF": (j + f) / 2}


def load_prediction_masks(pred_dir: Path, num_frames: int) -> np.ndarray:
    files = sorted(Path(pred_dir).glob("*.png"))
    if len(files) != num_frames:
        raise DataError(
            f"{pred_dir}: expected {num_frames} mask files, found {len(files)}"
        )
    masks = []
    for p in files:
        arr = np.asarray(Image.open(p).convert("L"))
        masks.append((arr > 127).astype(np.uint8))
    return np.stack(masks)


def evaluate_benchmark(
    manifest: DatasetManifest,
    predictions_dir: Path | str,
    digest: str = "",
) -> EvalReport:
    """Score every manifest entry against its prediction directory."""
    predictions_dir = Path(predictions_dir)
    scores: list[SampleScore] = []
    frame_pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for entry in manifest.entries:
        sample = load_sample(manifest, entry.video_id)
        family = expression_family(entry.expression)
        pred_dir = predictions_dir / entry.video_id
        try:
            pred = load_prediction_masks(pred_dir, sample.num_frames)
        except DataError as exc:
            scores.append(
                SampleScore(entry.video_id, 0.0, 0.0, entry.query_type, family,
                            error=str(exc))
            )
            continue
        j = region_similarity_J(pred, sample.gt_masks)
        f = contour_accuracy_F(pred, sample.gt_masks)
        scores.append(SampleScore(entry.video_id, j, f, entry.query_type, family))
        frame_pairs.extend(zip(pred, sample.gt_masks))

    aggregates = _aggregate(scores)
    if frame_pairs:
        g, c = giou_ciou(frame_pairs)
    else:
        g, c = 0.0, 0.0
    aggregates.update({"gIoU": g, "cIoU": c})
    by_type = {
        qt: _aggregate([s for s in scores if s.query_type == qt])
        for qt in sorted({s.query_type for s in scores})
    }
    by_family = {
        fam: _aggregate([s for s in scores if s.family == fam])
        for fam in sorted({s.family for s in scores})
    }
    return EvalReport(
        per_sample=scores,
        aggregates=aggregates,
        by_query_type=by_type,
        by_family=by_family,
        config_digest=digest,
    )


# ---------------------------------------------------------------------------
# inference over a whole manifest
# ---------------------------------------------------------------------------


def predict_manifest(
    checkpoint: Path | str,
    manifest: DatasetManifest,
    out_dir: Path | str,
    post_opt: bool = False,
) -> Path:
    """Run segment_video on every entry and write prediction directories."""
    model, _ = load_checkpoint(checkpoint)
    out_dir = Path(out_dir)
    for entry in manifest.entries:
        sample = load_sample(manifest, entry.video_id)
        result = segment_video(model, sample, entry.expression)
        maskset = result.maskset
        if post_opt:
            maskset = post_optimize(sample, maskset, result.selection, model)
        save_predictions(sample, result, maskset, out_dir, entry.expression)
    return out_dir


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------


@dataclass
class AblationCell:
    objective: str
    strategy: str
    post_opt: bool
    seed: int

    def label(self) -> str:
        tag = "+post" if self.post_opt else ""
        return f"{self.objective}/{self.strategy}{tag}/seed{self.seed}"

    def train_key(self) -> tuple:
        return (self.objective, self.strategy, self.seed)


@dataclass
class AblationRow:
    cell: AblationCell
    J: float = 0.0
    F: float = 0.0
    JandF: float = 0.0
    motion_JandF: float = 0.0
    token_budget: int = 0
    status: str = "ok"
    digest: str = ""


@dataclass
class AblationResult:
    rows: list[AblationRow]
    axes: tuple[str, ...]

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.rows)

    def to_json_dict(self) -> dict:
        return {
            "axes": list(self.axes),
            "rows": [
                {**asdict(r.cell), **{k: getattr(r, k) for k in
                 ("J", "F", "JandF", "motion_JandF", "token_budget", "status",
                  "digest")}}
                for r in self.rows
            ],
            "deltas": self.deltas(),
        }

    def deltas(self) -> list[dict]:
        """Pairwise J&F differences against the first row of each seed."""
        out = []
        by_seed: dict[int, AblationRow] = {}
        for row in self.rows:
            base = by_seed.setdefault(row.cell.seed, row)
            if row is base:
                continue
            out.append(
                {
                    "seed": row.cell.seed,
                    "base": base.cell.label(),
                    "other": row.cell.label(),
                    "delta_JandF": row.JandF - base.JandF,
                    "delta_motion_JandF": row.motion_JandF - base.motion_JandF,
                }
            )
        return out

    def format_table(self) -> str:
        rows = [("cell", "J", "F", "J&F", "motion J&F", "tokens", "status")]
        for r in self.rows:
            rows.append(
                (r.cell.label(), f"{r.J:.4f}", f"{r.F:.4f}", f"{r.JandF:.4f}",
                 f"{r.motion_JandF:.4f}", str(r.token_budget), r.status)
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
                 for row in rows]
        for d in self.deltas():
            lines.append(
                f"delta[{d['other']} - {d['base']}]: "
                f"J&F {d['delta_JandF']:+.4f}  motion J&F {d['delta_motion_JandF']:+.4f}"
            )
        return "\n".join(lines) + "\n"

    def save(self, out_dir: Path | str) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "ablation.json"
        json_path.write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")
        txt_path = out_dir / "ablation.txt"
        txt_path.write_text(self.format_table())
        return json_path, txt_path


def ablation_cells(
    base: TrainConfig, axes: list[str], seeds: list[int]
) -> list[AblationCell]:
    for axis in axes:
        if axis not in AXES:
            raise ValueError(f"unknown axis {axis!r}; valid: {AXES}")
    objectives = AXIS_VALUES["objective"] if "objective" in axes else (base.objective,)
    strategies = AXIS_VALUES["strategy"] if "strategy" in axes else (base.model.strategy,)
    post_opts = AXIS_VALUES["post_opt"] if "post_opt" in axes else (False,)
    return [
        AblationCell(objective=o, strategy=s, post_opt=p, seed=seed)
        for seed in seeds
        for o in objectives
        for s in strategies
        for p in post_opts
    ]


def run_ablation(
    base: TrainConfig,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    axes: list[str],
    seeds: list[int],
    workdir: Path | str,
) -> AblationResult:
    """Train one model per (objective, strategy, seed) cell with identical
    budgets, evaluate each on the val split, and tabulate J/F/J&F."""
    workdir = Path(workdir)
    cells = ablation_cells(base, axes, seeds)
    trained: dict[tuple, Path | None] = {}
    rows: list[AblationRow] = []
    L = (base.model.frame_h // base.model.patch_size) * (
        base.model.frame_w // base.model.patch_size
    )
    for cell in cells:
        cfg = replace(
            base,
            objective=cell.objective,
            seed=cell.seed,
            model=replace(base.model, strategy=cell.strategy),
        )
        digest = config_digest(
            {"objective": cell.objective, "strategy": cell.strategy,
             "post_opt": cell.post_opt, "seed": cell.seed}
        )
        budget = token_budget(
            cell.strategy, cfg.model.T_sparse, cfg.model.T_dense, L,
            cfg.model.strategy_params,
        )
        row = AblationRow(cell=cell, token_budget=budget, digest=digest)
        key = cell.train_key()
        cell_dir = workdir / cell.label().replace("/", "_")
        if key not in trained:
            try:
                result = train(cfg, train_manifest, cell_dir)
                trained[key] = result.checkpoint_path
            except NumericAbort as exc:
                trained[key] = None
                row.status = f"failed: {exc}"
        elif trained[key] is None:
            row.status = "failed: training aborted"
        if trained[key] is not None:
            pred_dir = cell_dir / ("pred_post" if cell.post_opt else "pred")
            predict_manifest(trained[key], val_manifest, pred_dir,
                             post_opt=cell.post_opt)
            report = evaluate_benchmark(val_manifest, pred_dir, digest)
            row.J = report.aggregates["J"]
            row.F = report.aggregates["F"]
            row.JandF = report.aggregates["JandF"]
            row.motion_JandF = report.by_family.get("motion", {}).get("JandF", 0.0)
        rows.append(row)
    return AblationResult(rows=rows, axes=tuple(axes))
