"""Angle-aware evaluation of rotated box detections.

A detection is a true positive when it overlaps an unclaimed ground-truth
box of the same image and category with IoU strictly above ``t_iou`` *and*
its A->B direction differs from the ground truth's by strictly less than
``t_theta`` degrees. Each ground truth can be claimed once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .annot import Detection, Instance
from .geometry import GeometryError, Quad, angle_diff, quad_angle, rotated_iou_diag


@dataclass(frozen=True)
class EvalConfig:
    t_iou: float = 0.5
    t_theta: float = 90.0

    def __post_init__(self):
        if not 0.0 < self.t_iou < 1.0:
            raise ValueError(f"t_iou must be in (0, 1), got {self.t_iou!r}")
        if not 0.0 < self.t_theta <= 180.0:
            raise ValueError(f"t_theta must be in (0, 180], got {self.t_theta!r}")


AP50_T90 = EvalConfig(0.5, 90.0)
AP75_T40 = EvalConfig(0.75, 40.0)


@dataclass(frozen=True)
class Verdict:
    image_id: str
    index: int  # position of the detection in its image's list
    score: float
    tp: bool
    gt_index: Optional[int] = None
    iou: float = 0.0


@dataclass
class MatchResult:
    verdicts: list[Verdict]  # in processing order (score descending)
    gt_matched: dict[str, list[bool]]
    n_gt: int

    @property
    def tp(self) -> int:
        return sum(v.tp for v in self.verdicts)

    @property
    def fp(self) -> int:
        return len(self.verdicts) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def _safe_angle(q: Quad) -> Optional[float]:
    try:
        return quad_angle(q) if q.is_finite() else None
    except GeometryError:
        return None


def match_detections(
    dets: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[Instance]],
    cfg: EvalConfig = AP50_T90,
) -> MatchResult:
    """Greedy matching in descending score order.

    Ties are broken by image id, then by position in the input. A detection
    takes the qualifying unclaimed ground truth with the highest IoU. A
    detection that fails the angle gate leaves the ground truth unclaimed.
    """
    order = sorted(
        ((d.score, image_id, i) for image_id, ds in dets.items() for i, d in enumerate(ds)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    gt_matched = {image_id: [False] * len(g) for image_id, g in gts.items()}
    gt_angles = {image_id: [_safe_angle(inst.quad) for inst in g] for image_id, g in gts.items()}

    verdicts = []
    for score, image_id, i in order:
        det = dets[image_id][i]
        best_j, best_iou = None, -1.0
        det_angle = _safe_angle(det.quad)
        if det_angle is not None:
            for j, gt in enumerate(gts.get(image_id, ())):
                if gt_matched[image_id][j] or gt.category != det.category:
                    continue
                iou, _ = rotated_iou_diag(det.quad, gt.quad)
                if iou <= cfg.t_iou:
                    continue
                g_angle = gt_angles[image_id][j]
                if g_angle is None or angle_diff(det_angle, g_angle) >= cfg.t_theta:
                    continue
                if iou > best_iou:
                    best_j, best_iou = j, iou
        if best_j is None:
            verdicts.append(Verdict(image_id, i, score, False))
        else:
            gt_matched[image_id][best_j] = True
            verdicts.append(Verdict(image_id, i, score, True, best_j, best_iou))

    n_gt = sum(len(g) for g in gts.values())
    return MatchResult(verdicts, gt_matched, n_gt)


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int


@dataclass
class PRCurve:
    points: list[PRPoint] = field(default_factory=list)
    n_gt: int = 0


def curve_from_matches(result: MatchResult) -> PRCurve:
    """One point per distinct score, read off the cumulative match prefix."""
    points = []
    tp = fp = 0
    verdicts = result.verdicts
    for k, v in enumerate(verdicts):
        if v.tp:
            tp += 1
        else:
            fp += 1
        last_of_score = k + 1 == len(verdicts) or verdicts[k + 1].score != v.score
        if last_of_score:
            precision, recall = precision_recall(tp, fp, result.n_gt - tp)
            points.append(PRPoint(v.score, precision, recall, tp, fp))
    return PRCurve(points, result.n_gt)


def pr_curve(dets, gts, cfg: EvalConfig = AP50_T90) -> PRCurve:
    return curve_from_matches(match_detections(dets, gts, cfg))


def ap_11point(curve: PRCurve) -> float:
    """Mean over recall levels 0, 0.1, ..., 1 of the best precision at or beyond that recall."""
    total = 0.0
    for i in range(11):
        r = i / 10
        total += max((p.precision for p in curve.points if p.recall >= r), default=0.0)
    return total / 11


def ap_all_points(curve: PRCurve) -> float:
    """Area under the precision envelope, summed at every recall step."""
    if not curve.points:
        return 0.0
    recalls = [0.0] + [p.recall for p in curve.points] + [1.0]
    precisions = [0.0] + [p.precision for p in curve.points] + [0.0]
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    return sum(
        (recalls[k] - recalls[k - 1]) * precisions[k]
        for k in range(1, len(recalls))
        if recalls[k] != recalls[k - 1]
    )


@dataclass(frozen=True)
class ConfigResult:
    config: EvalConfig
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    ap: float
    curve: PRCurve = field(repr=False, compare=False, default_factory=PRCurve)


@dataclass
class EvalReport:
    results: dict[str, ConfigResult]
    method: str = "11point"

    @property
    def ap50_t90(self) -> float:
        return self.results["ap50_t90"].ap

    @property
    def ap75_t40(self) -> float:
        return self.results["ap75_t40"].ap

    def to_keyvalue(self) -> str:
        lines = [f"method={self.method}"]
        for name, r in self.results.items():
            lines.append(f"{name}={r.ap:.4f}")
            lines.append(f"{name}.t_iou={r.config.t_iou:g}")
            lines.append(f"{name}.t_theta={r.config.t_theta:g}")
            for key in ("tp", "fp", "fn"):
                lines.append(f"{name}.{key}={getattr(r, key)}")
            lines.append(f"{name}.precision={r.precision:.4f}")
            lines.append(f"{name}.recall={r.recall:.4f}")
        return "\n".join(lines) + "\n"


def evaluate_config(dets, gts, cfg: EvalConfig, method: str = "11point") -> ConfigResult:
    result = match_detections(dets, gts, cfg)
    curve = curve_from_matches(result)
    ap_fn = {"11point": ap_11point, "allpoints": ap_all_points}[method]
    precision, recall = precision_recall(result.tp, result.fp, result.fn)
    return ConfigResult(cfg, result.tp, result.fp, result.fn, precision, recall, ap_fn(curve), curve)


def evaluate(dets, gts, extra: Optional[Mapping[str, EvalConfig]] = None,
             method: str = "11point") -> EvalReport:
    """AP50(T<90) and AP75(T<40), plus any extra named configurations."""
    configs = {"ap50_t90": AP50_T90, "ap75_t40": AP75_T40}
    configs.update(extra or {})
    return EvalReport({name: evaluate_config(dets, gts, cfg, method) for name, cfg in configs.items()}, method)
