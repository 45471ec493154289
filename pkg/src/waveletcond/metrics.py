"""Video and motion evaluation metrics computable without pretrained networks.

PSNR and windowed SSIM for frame quality, mouth-region landmark distance
for lip sync, landmark dispersion for motion richness, and a beat-alignment
score coupling audio beats to motion beats.  Metrics needing pretrained
scorers (CPBD, FVD, LSE-C/LSE-D) are rendered "n/a" in reports to keep the
standard column layout.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_INFINITE = math.inf


# -- frame quality -------------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical inputs give the infinite sentinel."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INFINITE
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over all valid window positions of two 2-D images.

    Gaussian-weighted window statistics, the standard stabilizing constants
    C1 = (k1 peak)^2 and C2 = (k2 peak)^2.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"ssim: expected 2-D images, got shape {a.shape}")
    if min(a.shape) < window_size:
        raise ValueError(f"ssim: image {a.shape} smaller than window {window_size}")
    w = gaussian_window(window_size, sigma)
    wa = np.lib.stride_tricks.sliding_window_view(a, (window_size, window_size))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window_size, window_size))
    mu_a = np.einsum("ijuv,uv->ij", wa, w)
    mu_b = np.einsum("ijuv,uv->ij", wb, w)
    e_aa = np.einsum("ijuv,uv->ij", wa * wa, w)
    e_bb = np.einsum("ijuv,uv->ij", wb * wb, w)
    e_ab = np.einsum("ijuv,uv->ij", wa * wb, w)
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# -- landmark sequences -------------------------------------------------------------


@dataclass
class LandmarkSequence:
    """Per-frame 2-D landmark coordinates in pixels, with the mouth subset marked."""

    frames: np.ndarray          # (n_frames, k_points, 2)
    fps: float = 25.0
    mouth_indices: np.ndarray | None = None  # default: every point

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 2:
            raise ValueError(f"LandmarkSequence: expected (n, k, 2), got {self.frames.shape}")
        if self.fps <= 0:
            raise ValueError(f"LandmarkSequence: fps must be positive, got {self.fps}")
        k = self.frames.shape[1]
        if self.mouth_indices is None:
            self.mouth_indices = np.arange(k)
        else:
            self.mouth_indices = np.asarray(self.mouth_indices, dtype=int)
            if self.mouth_indices.size and (
                    self.mouth_indices.min() < 0 or self.mouth_indices.max() >= k):
                raise ValueError(
                    f"LandmarkSequence: mouth indices outside [0, {k}): {self.mouth_indices}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_points(self) -> int:
        return self.frames.shape[1]


@dataclass
class BeatTrack:
    """Strictly increasing, non-negative beat timestamps in seconds."""

    timestamps: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.timestamps.ndim != 1:
            raise ValueError(f"BeatTrack: expected 1-D timestamps, got {self.timestamps.shape}")
        if self.timestamps.size and self.timestamps[0] < 0:
            raise ValueError("BeatTrack: timestamps must be non-negative")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("BeatTrack: timestamps must be strictly increasing")


def lmd(a: LandmarkSequence, b: LandmarkSequence) -> float:
    """Mean Euclidean distance between corresponding mouth points, in pixels."""
    if a.n_frames != b.n_frames:
        raise ValueError(f"lmd: frame counts differ: {a.n_frames} vs {b.n_frames}")
    if a.n_points != b.n_points:
        raise ValueError(f"lmd: point counts differ: {a.n_points} vs {b.n_points}")
    if not np.array_equal(a.mouth_indices, b.mouth_indices):
        raise ValueError("lmd: mouth index sets differ")
    pa = a.frames[:, a.mouth_indices, :]
    pb = b.frames[:, b.mouth_indices, :]
    return float(np.mean(np.sqrt(np.sum((pa - pb) ** 2, axis=2))))


def diversity(a: LandmarkSequence) -> float:
    """Per-coordinate population standard deviation across frames, averaged.

    Dispersion of each landmark coordinate over time (divide-by-N
    convention), then the mean over all points and both coordinates.
    """
    if a.n_frames < 2:
        raise ValueError(f"diversity: need at least 2 frames, got {a.n_frames}")
    return float(np.mean(np.std(a.frames, axis=0)))


# -- beat alignment ------------------------------------------------------------------


def displacement_magnitudes(motion: LandmarkSequence) -> np.ndarray:
    """Mean landmark displacement between consecutive frames; entry j is frame j+1."""
    deltas = np.diff(motion.frames, axis=0)
    return np.mean(np.sqrt(np.sum(deltas ** 2, axis=2)), axis=1)


def motion_beat_frames(motion: LandmarkSequence) -> list[int]:
    """Frames at strict local minima of displacement magnitude.

    A plateau bounded by strictly larger values on both sides counts once,
    at its earliest frame; array endpoints never qualify.
    """
    disp = displacement_magnitudes(motion)
    beats: list[int] = []
    i = 0
    n = disp.size
    while i < n:
        j = i
        while j + 1 < n and disp[j + 1] == disp[i]:
            j += 1
        if i > 0 and j < n - 1 and disp[i - 1] > disp[i] and disp[j + 1] > disp[i]:
            beats.append(i + 1)  # disp index i is the step arriving at frame i+1
        i = j + 1
    return beats


def motion_beat_times(motion: LandmarkSequence) -> np.ndarray:
    return np.asarray([f / motion.fps for f in motion_beat_frames(motion)])


def bas_from_beats(audio_times: np.ndarray, motion_times: np.ndarray,
                   sigma: float) -> float:
    """Mean Gaussian proximity of each audio beat to its nearest motion beat."""
    audio_times = np.asarray(audio_times, dtype=np.float64)
    motion_times = np.asarray(motion_times, dtype=np.float64)
    if audio_times.size == 0:
        raise ValueError("bas: need at least one audio beat")
    if sigma <= 0:
        raise ValueError(f"bas: sigma must be positive, got {sigma}")
    if motion_times.size == 0:
        return 0.0
    offsets = np.min(np.abs(audio_times[:, None] - motion_times[None, :]), axis=1)
    return float(np.mean(np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))))


def bas(audio_beats: BeatTrack, motion: LandmarkSequence, sigma: float | None = None) -> float:
    """Beat alignment score in (0, 1]; motion beats come from displacement minima.

    sigma defaults to 3 frames converted to seconds by the sequence fps.
    When no motion beat is extractable the score is 0.0 by definition and a
    RuntimeWarning flags it.
    """
    if sigma is None:
        sigma = 3.0 / motion.fps
    times = motion_beat_times(motion)
    if times.size == 0:
        warnings.warn("bas: no extractable motion beat; score defined as 0.0", RuntimeWarning)
        return 0.0
    return bas_from_beats(audio_beats.timestamps, times, sigma)


# -- file formats ---------------------------------------------------------------------


def save_landmarks_csv(path, frames: np.ndarray) -> None:
    """Header `frame,x0,y0,...,x{k-1},y{k-1}`, one row per frame."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[2] != 2:
        raise ValueError(f"save_landmarks_csv: expected (n, k, 2), got {frames.shape}")
    k = frames.shape[1]
    header = ["frame"] + [f"{axis}{i}" for i in range(k) for axis in ("x", "y")]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx, frame in enumerate(frames):
            writer.writerow([idx] + [repr(float(v)) for v in frame.reshape(-1)])


def load_landmarks_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty landmark file") from None
        if not header or header[0] != "frame" or (len(header) - 1) % 2:
            raise ValueError(f"{path}: malformed landmark header {header!r}")
        k = (len(header) - 1) // 2
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 1 + 2 * k:
                raise ValueError(f"{path}:{lineno}: expected {1 + 2 * k} columns, got {len(row)}")
            rows.append([float(v) for v in row[1:]])
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), k, 2)


def save_beats(path, timestamps) -> None:
    """One beat timestamp (float seconds) per line."""
    Path(path).write_text("".join(f"{repr(float(t))}\n" for t in np.asarray(timestamps)))


def load_beats(path) -> BeatTrack:
    times = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            times.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a float: {line!r}") from None
    return BeatTrack(np.asarray(times))


# -- clip evaluation -----------------------------------------------------------------


TABLE1_COLUMNS = ("SSIM", "PSNR", "CPBD", "FVD", "LMD", "LSE-D", "LSE-C", "Diversity", "BAS")
UNSUPPORTED_COLUMNS = ("CPBD", "FVD", "LSE-D", "LSE-C")  # need pretrained scorers


@dataclass
class ClipAssets:
    """Resolved inputs for scoring one clip."""

    clip_id: str
    pred_frames: np.ndarray           # (f, c, h, w) or (f, h, w)
    gt_frames: np.ndarray
    pred_landmarks: np.ndarray        # (n, k, 2)
    gt_landmarks: np.ndarray
    beats: BeatTrack
    fps: float = 25.0
    mouth_indices: np.ndarray | None = None


def _frame_pairs(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape:
        raise ValueError(f"clip shapes differ: {pred.shape} vs {gt.shape}")
    flat_p = pred.reshape(-1, pred.shape[-2], pred.shape[-1])
    flat_g = gt.reshape(-1, gt.shape[-2], gt.shape[-1])
    return zip(flat_p, flat_g)


def evaluate_clip(assets: ClipAssets, peak: float = 1.0) -> dict:
    """Per-clip metric row with the standard column names; "n/a" where unsupported."""
    psnr_vals = [psnr(p, g, peak=peak) for p, g in _frame_pairs(assets.pred_frames,
                                                                assets.gt_frames)]
    ssim_vals = [ssim(p, g, peak=peak) for p, g in _frame_pairs(assets.pred_frames,
                                                                assets.gt_frames)]
    pred_seq = LandmarkSequence(assets.pred_landmarks, fps=assets.fps,
                                mouth_indices=assets.mouth_indices)
    gt_seq = LandmarkSequence(assets.gt_landmarks, fps=assets.fps,
                              mouth_indices=assets.mouth_indices)
    row = {"clip_id": assets.clip_id}
    row["SSIM"] = float(np.mean(ssim_vals))
    row["PSNR"] = float(np.mean(psnr_vals))
    for col in UNSUPPORTED_COLUMNS:
        row[col] = "n/a"
    row["LMD"] = lmd(pred_seq, gt_seq)
    row["Diversity"] = diversity(pred_seq)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        row["BAS"] = bas(assets.beats, pred_seq)
    return row


def aggregate_rows(rows: list[dict]) -> dict:
    """Mean over clips for numeric columns, preserving the n/a placeholders."""
    agg: dict = {"clips": len(rows)}
    for col in TABLE1_COLUMNS:
        if col in UNSUPPORTED_COLUMNS:
            agg[col] = "n/a"
        else:
            agg[col] = float(np.mean([row[col] for row in rows]))
    return agg


def json_safe(value):
    """Map non-finite floats to strings so reports stay strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value
