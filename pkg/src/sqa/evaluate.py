"""Correlation statistics and the per-clip / per-model evaluation
methodology: PCC, tie-aware SRCC, condition-level aggregation, the linear
OVRL-from-SIG/BAK fit, and the simulated-rater reproducibility study."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import Manifest, simulate_ratings
from .errors import DegenerateInput, RankDeficient, TooFewGroups

HEADS = ("sig", "bak", "ovrl")
LEVELS = ("model", "clip")


@dataclass(frozen=True)
class ScorePair:
    clip_id: str
    model_id: str
    human: tuple    # (sig, bak, ovrl)
    predicted: tuple


def pcc(x, y) -> float:
    """Sample Pearson correlation, float64 accumulation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput(f"pcc needs equal-length vectors, got {x.shape}, {y.shape}")
    if len(x) < 2:
        raise DegenerateInput("pcc needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInput("pcc undefined for zero-variance input")
    return float(np.sum(dx * dy) / (sx * sy))


def average_ranks(x) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean of their rank positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation: PCC of mean-tied ranks (robust to ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput(f"srcc needs equal-length vectors, got {x.shape}, {y.shape}")
    return pcc(average_ranks(x), average_ranks(y))


def aggregate_by_model(pairs) -> dict:
    """Unweighted per-model_id means of human and predicted scores.

    Returns {model_id: (human_mean_triple, predicted_mean_triple)}.
    """
    groups: dict[str, list] = {}
    for p in pairs:
        groups.setdefault(p.model_id, []).append(p)
    if len(groups) < 2:
        raise TooFewGroups(f"need >= 2 model groups, got {len(groups)}")
    out = {}
    for model_id, members in groups.items():
        human = tuple(np.mean([m.human[i] for m in members]) for i in range(3))
        pred = tuple(np.mean([m.predicted[i] for m in members]) for i in range(3))
        out[model_id] = (human, pred)
    return out


@dataclass(frozen=True)
class CorrelationReport:
    """3 heads x 2 levels x 2 statistics; undefined cells carry an error
    string instead of a number."""

    cells: dict          # (level, stat, head) -> float | None
    notes: dict          # (level, stat, head) -> str, for undefined cells
    n_clips: int
    n_models: int

    def get(self, level: str, stat: str, head: str):
        return self.cells[(level, stat, head)]

    def to_dict(self) -> dict:
        rows = {}
        for level in LEVELS:
            for stat in ("pcc", "srcc"):
                rows[f"{level}_{stat}"] = {
                    head: self.cells[(level, stat, head)] for head in HEADS
                }
        return {"n_clips": self.n_clips, "n_models": self.n_models,
                "coefficients": rows,
                "undefined": {f"{k[0]}_{k[1]}_{k[2]}": v for k, v in self.notes.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        lines = ["level,stat,sig,bak,ovrl"]
        for level in LEVELS:
            for stat in ("pcc", "srcc"):
                vals = [self.cells[(level, stat, head)] for head in HEADS]
                rendered = ",".join("" if v is None else f"{v:.6f}" for v in vals)
                lines.append(f"{level},{stat},{rendered}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = [
            f"Correlation report  ({self.n_clips} clips, {self.n_models} models)",
            f"{'Type':<12}{'SIG':>8}{'BAK':>8}{'OVRL':>8}",
        ]
        labels = {("model", "pcc"): "Model PCC", ("model", "srcc"): "Model SRCC",
                  ("clip", "pcc"): "Clip PCC", ("clip", "srcc"): "Clip SRCC"}
        for level in LEVELS:
            for stat in ("pcc", "srcc"):
                cells = []
                for head in HEADS:
                    v = self.cells[(level, stat, head)]
                    cells.append("   n/a" if v is None else f"{v:6.3f}")
                lines.append(f"{labels[(level, stat)]:<12}" + "  ".join(cells))
        return "\n".join(lines) + "\n"


def correlation_report(pairs) -> CorrelationReport:
    """All 12 coefficients; degenerate cells are flagged, not NaN."""
    pairs = list(pairs)
    cells = {}
    notes = {}

    def fill(level, xs, ys):
        for stat, fn in (("pcc", pcc), ("srcc", srcc)):
            for i, head in enumerate(HEADS):
                try:
                    cells[(level, stat, head)] = fn(xs[:, i], ys[:, i])
                except (DegenerateInput, TooFewGroups) as e:
                    cells[(level, stat, head)] = None
                    notes[(level, stat, head)] = str(e)

    human = np.array([p.human for p in pairs], dtype=np.float64).reshape(-1, 3)
    pred = np.array([p.predicted for p in pairs], dtype=np.float64).reshape(-1, 3)
    fill("clip", human, pred)

    try:
        groups = aggregate_by_model(pairs)
        gh = np.array([v[0] for v in groups.values()])
        gp = np.array([v[1] for v in groups.values()])
        fill("model", gh, gp)
        n_models = len(groups)
    except TooFewGroups as e:
        n_models = len({p.model_id for p in pairs})
        for stat in ("pcc", "srcc"):
            for head in HEADS:
                cells[("model", stat, head)] = None
                notes[("model", stat, head)] = str(e)

    return CorrelationReport(cells=cells, notes=notes,
                             n_clips=len(pairs), n_models=n_models)


def fit_ovrl_linear(sig, bak, ovrl) -> tuple[tuple[float, float, float], float]:
    """Least-squares ovrl ~ a*sig + b*bak + c. Returns ((a, b, c), r_squared)."""
    sig = np.asarray(sig, dtype=np.float64)
    bak = np.asarray(bak, dtype=np.float64)
    ovrl = np.asarray(ovrl, dtype=np.float64)
    if len(sig) < 3:
        raise RankDeficient("need at least 3 points to fit 3 coefficients")
    design = np.column_stack([sig, bak, np.ones_like(sig)])
    if np.linalg.matrix_rank(design) < 3:
        raise RankDeficient("design matrix is rank deficient")
    coeffs, _, _, _ = np.linalg.lstsq(design, ovrl, rcond=None)
    residuals = ovrl - design @ coeffs
    ss_res = float(np.sum(residuals ** 2))
    ss_tot = float(np.sum((ovrl - ovrl.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return (float(coeffs[0]), float(coeffs[1]), float(coeffs[2])), r_squared


@dataclass(frozen=True)
class RatingsStudyResult:
    """Per rating-count N: clip-level PCC of mean simulated ratings against
    the true MOS, and run-to-run PCC between two independent simulated
    rating runs. Means and SDs over Monte-Carlo trials, per head."""

    per_n: dict  # n -> {"pcc_vs_truth": {head: (mean, sd)},
    #                     "run_to_run_pcc": {head: (mean, sd)}}
    noise_sd: float
    trials: int


def _mean_ratings(true_values: np.ndarray, n: int, noise_sd: float,
                  seed_tuple) -> np.ndarray:
    return np.array([
        simulate_ratings(t, n, noise_sd, (*seed_tuple, i)).mean()
        for i, t in enumerate(true_values)
    ])


def ratings_study(manifest: Manifest, n_list, noise_sd: float = 1.0,
                  trials: int = 20, seed: int = 0) -> RatingsStudyResult:
    """Simulate N ballots per clip, average, and correlate against the oracle
    MOS; also correlate two independent simulated runs against each other
    (run-to-run repeatability at a given N)."""
    if not n_list:
        raise ValueError("n_list must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    truth = {
        "sig": np.array([c.mos_sig for c in manifest.clips]),
        "bak": np.array([c.mos_bak for c in manifest.clips]),
        "ovrl": np.array([c.mos_ovrl for c in manifest.clips]),
    }
    per_n = {}
    for n in n_list:
        vs_truth = {head: [] for head in HEADS}
        run_to_run = {head: [] for head in HEADS}
        for trial in range(trials):
            for hi, head in enumerate(HEADS):
                run_a = _mean_ratings(truth[head], n, noise_sd,
                                      (seed, n, trial, hi, 0))
                run_b = _mean_ratings(truth[head], n, noise_sd,
                                      (seed, n, trial, hi, 1))
                vs_truth[head].append(pcc(run_a, truth[head]))
                run_to_run[head].append(pcc(run_a, run_b))
        per_n[n] = {
            "pcc_vs_truth": {
                head: (float(np.mean(v)), float(np.std(v)))
                for head, v in vs_truth.items()
            },
            "run_to_run_pcc": {
                head: (float(np.mean(v)), float(np.std(v)))
                for head, v in run_to_run.items()
            },
        }
    return RatingsStudyResult(per_n=per_n, noise_sd=noise_sd, trials=trials)
