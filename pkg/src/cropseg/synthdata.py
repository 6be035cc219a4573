"""Synthetic scan generator, patient-level splitting, and band cropping.

Each sample is a grayscale scan with one bright-or-dark elliptical disc whose
vertical position is confined to a configurable band, plus confounds that may
appear anywhere: smooth intensity clouds, dark vessel-like curves, and pixel
noise. Left/right laterality mirrors the columns while the band constrains the
rows, so cropping and mirroring commute.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import read_pgm, write_pgm

_CLOUD_AMP = 0.09
_VESSEL_DEPTH = (0.10, 0.30)
_VESSEL_RADIUS = (0.6, 1.2)
_ECCENTRICITY = (0.85, 1.15)


@dataclass(frozen=True)
class GenParams:
    rows: int = 64
    cols: int = 64
    radius_range: tuple[float, float] = (3.5, 6.5)
    contrast_range: tuple[float, float] = (-0.5, 0.5)
    min_contrast: float = 0.16
    band: tuple[float, float] = (0.35, 0.65)
    vessel_count: tuple[int, int] = (2, 5)
    noise_std: float = 0.05
    flip_probability: float = 0.5

    def __post_init__(self):
        if self.rows < 8 or self.cols < 8:
            raise ValueError(f"image extents must be >= 8, got {self.rows}x{self.cols}")
        rmin, rmax = self.radius_range
        if not 0.0 < rmin <= rmax:
            raise ValueError(f"bad radius range {self.radius_range}")
        lo, hi = self.band
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"band fractions must satisfy 0 <= lo < hi <= 1, got {self.band}")
        if 2.0 * rmax >= (hi - lo) * self.rows:
            raise ValueError(
                f"radius range {self.radius_range} does not fit inside the band "
                f"({(hi - lo) * self.rows:.1f} rows)"
            )
        clo, chi = self.contrast_range
        if not clo < chi:
            raise ValueError(f"bad contrast range {self.contrast_range}")
        if self.min_contrast < 0.0:
            raise ValueError("min_contrast must be non-negative")
        if max(abs(clo), abs(chi)) <= self.min_contrast:
            raise ValueError("contrast range admits no magnitude >= min_contrast")
        vmin, vmax = self.vessel_count
        if not 0 <= vmin <= vmax:
            raise ValueError(f"bad vessel count range {self.vessel_count}")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")


@dataclass(frozen=True)
class CropSpec:
    """Keep `kept` rows starting at `offset`; columns are untouched."""

    kept: int
    offset: int = 0

    def __post_init__(self):
        if self.kept < 1:
            raise ValueError(f"kept rows must be >= 1, got {self.kept}")
        if self.offset < 0:
            raise ValueError(f"offset must be >= 0, got {self.offset}")


@dataclass
class SegSample:
    image: np.ndarray  # float64 [H,W] in [0,1]
    mask: np.ndarray   # uint8 [H,W] in {0,1}
    patient_id: str
    eye_id: str
    laterality: str    # "L" or "R"
    sample_id: str
    truncated: bool = False


def _draw_contrast(params: GenParams, rng: np.random.Generator) -> float:
    clo, chi = params.contrast_range
    for _ in range(1000):
        c = rng.uniform(clo, chi)
        if abs(c) >= params.min_contrast:
            return c
    # Degenerate ranges where rejection stalls: snap to the nearer admissible sign.
    return params.min_contrast if chi >= params.min_contrast else -params.min_contrast


def _paint_vessels(img: np.ndarray, params: GenParams, rng: np.random.Generator):
    h, w = img.shape
    count = int(rng.integers(params.vessel_count[0], params.vessel_count[1] + 1))
    offsets = np.stack(np.meshgrid(np.arange(-2, 3), np.arange(-2, 3), indexing="ij"),
                       axis=-1).reshape(-1, 2)
    for _ in range(count):
        depth = rng.uniform(*_VESSEL_DEPTH)
        radius = rng.uniform(*_VESSEL_RADIUS)
        side = int(rng.integers(4))
        if side == 0:
            pos = np.array([0.0, rng.uniform(0, w - 1)])
            heading = np.pi / 2
        elif side == 1:
            pos = np.array([h - 1.0, rng.uniform(0, w - 1)])
            heading = -np.pi / 2
        elif side == 2:
            pos = np.array([rng.uniform(0, h - 1), 0.0])
            heading = 0.0
        else:
            pos = np.array([rng.uniform(0, h - 1), w - 1.0])
            heading = np.pi
        heading += rng.uniform(-0.5, 0.5)
        pts = []
        for _ in range(4 * max(h, w)):
            pts.append(pos.copy())
            heading += rng.normal(0.0, 0.15)
            pos = pos + np.array([np.sin(heading), np.cos(heading)])
            if not (0 <= pos[0] < h and 0 <= pos[1] < w):
                break
        pts = np.asarray(pts)
        centers = np.rint(pts).astype(int)
        cand = centers[:, None, :] + offsets[None, :, :]          # [N,25,2]
        dist = np.linalg.norm(cand - pts[:, None, :], axis=-1)
        keep = dist <= radius
        rr = np.clip(cand[..., 0][keep], 0, h - 1)
        cc = np.clip(cand[..., 1][keep], 0, w - 1)
        canvas = np.zeros((h, w), dtype=bool)
        canvas[rr, cc] = True
        img[canvas] -= depth


def generate_sample(params: GenParams, rng: np.random.Generator,
                    patient_id: str = "p000", eye_id: str | None = None,
                    laterality: str | None = None,
                    sample_id: str | None = None) -> SegSample:
    """One scan with its binary disc mask; deterministic for a given rng state."""
    h, w = params.rows, params.cols
    if laterality is None:
        laterality = "R" if rng.random() < params.flip_probability else "L"
    if laterality not in ("L", "R"):
        raise ValueError(f"laterality must be 'L' or 'R', got {laterality!r}")
    if eye_id is None:
        eye_id = f"{patient_id}{laterality}"
    if sample_id is None:
        sample_id = f"{eye_id}-s00"

    cloud = gaussian_filter(rng.standard_normal((h, w)), sigma=h / 8.0)
    cloud = (cloud - cloud.mean()) / max(cloud.std(), 1e-12)
    img = 0.5 + _CLOUD_AMP * cloud

    r = rng.uniform(*params.radius_range)
    ry = r
    rx = r * rng.uniform(*_ECCENTRICITY)
    contrast = _draw_contrast(params, rng)
    lo, hi = params.band
    cy = rng.uniform(lo * h + ry, hi * h - ry)
    cx = rng.uniform(rx + 1.0, w - rx - 1.0)
    yy, xx = np.mgrid[0:h, 0:w]
    field = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    mask = field <= 1.0
    # Soft one-pixel rim on the image; the mask stays hard.
    coverage = np.clip((1.0 - np.sqrt(field)) * r + 0.5, 0.0, 1.0)
    img += contrast * coverage

    _paint_vessels(img, params, rng)
    if params.noise_std > 0.0:
        img += rng.normal(0.0, params.noise_std, (h, w))
    np.clip(img, 0.0, 1.0, out=img)

    if laterality == "R":
        img = img[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    return SegSample(image=img, mask=mask.astype(np.uint8), patient_id=patient_id,
                     eye_id=eye_id, laterality=laterality, sample_id=sample_id)


def generate_corpus(params: GenParams, patients: int, scans: int,
                    rng: np.random.Generator) -> list[SegSample]:
    """A corpus where some patients contribute both eyes or repeat scans.

    Laterality is drawn once per eye and shared by all of that eye's scans.
    """
    if patients < 1:
        raise ValueError("need at least one patient")
    if scans < patients:
        raise ValueError(f"need at least one scan per patient ({patients}), got {scans}")
    eyes: dict[str, list[str]] = {}      # patient -> lateralities
    scan_counts: dict[tuple[str, str], int] = {}
    pids = [f"p{i:03d}" for i in range(patients)]
    for pid in pids:
        lat = "R" if rng.random() < params.flip_probability else "L"
        eyes[pid] = [lat]
        scan_counts[(pid, lat)] = 1
    for _ in range(scans - patients):
        pid = pids[int(rng.integers(patients))]
        if len(eyes[pid]) == 1 and rng.random() < 0.5:
            other = "L" if eyes[pid][0] == "R" else "R"
            eyes[pid].append(other)
            scan_counts[(pid, other)] = 1
        else:
            lat = eyes[pid][int(rng.integers(len(eyes[pid])))]
            scan_counts[(pid, lat)] += 1
    samples: list[SegSample] = []
    for pid in pids:
        for lat in eyes[pid]:
            eye_id = f"{pid}{lat}"
            for s in range(scan_counts[(pid, lat)]):
                samples.append(generate_sample(
                    params, rng, patient_id=pid, eye_id=eye_id, laterality=lat,
                    sample_id=f"{eye_id}-s{s:02d}"))
    return samples


def split_by_patient(samples: list[SegSample], fractions: tuple[float, float, float],
                     rng: np.random.Generator) -> tuple[list[SegSample], list[SegSample], list[SegSample]]:
    """Patient-grouped train/val/test split; no patient straddles two splits."""
    if not samples:
        raise ValueError("cannot split an empty corpus")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    by_patient: dict[str, list[SegSample]] = {}
    for s in samples:
        by_patient.setdefault(s.patient_id, []).append(s)
    pids = list(by_patient)
    if len(pids) < 3:
        raise ValueError(f"need at least 3 patients to split, got {len(pids)}")
    order = [pids[i] for i in rng.permutation(len(pids))]
    total = len(samples)
    boundaries = (fractions[0] * total, (fractions[0] + fractions[1]) * total)
    groups: list[list[str]] = [[], [], []]
    split, cum = 0, 0
    for pid in order:
        groups[split].append(pid)
        cum += len(by_patient[pid])
        while split < 2 and cum >= boundaries[split]:
            split += 1
    # Small corpora can starve a split; donate from the most-populated one.
    for _ in range(3):
        empties = [i for i, g in enumerate(groups) if not g]
        if not empties:
            break
        donor = max(range(3), key=lambda i: (len(groups[i]), -i))
        if len(groups[donor]) <= 1:
            raise ValueError("not enough patients to fill all three splits")
        groups[empties[0]].append(groups[donor].pop())
    return tuple([s for pid in g for s in by_patient[pid]] for g in groups)


def crop_band(sample: SegSample, spec: CropSpec) -> SegSample:
    """Row crop shared by image and mask; flags masks truncated by the cut."""
    rows = sample.image.shape[0]
    if spec.offset + spec.kept > rows:
        raise ValueError(
            f"crop rows [{spec.offset}, {spec.offset + spec.kept}) exceed image rows {rows}"
        )
    sl = slice(spec.offset, spec.offset + spec.kept)
    image = sample.image[sl].copy()
    mask = sample.mask[sl].copy()
    lost = int(sample.mask.sum()) - int(mask.sum())
    return replace(sample, image=image, mask=mask,
                   truncated=bool(sample.truncated or lost > 0))


def preprocess(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling by `factor`, then min-max normalization to [0, 1].

    A constant image maps to all zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = image.shape
    if h % factor or w % factor:
        raise ValueError(f"extents {h}x{w} are not divisible by factor {factor}")
    out = image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    span = out.max() - out.min()
    if span == 0.0:
        return np.zeros_like(out)
    return (out - out.min()) / span


_MANIFEST_COLUMNS = ("sample_id", "patient_id", "eye_id", "laterality", "image", "mask")


def save_dataset(samples: list[SegSample], out_dir) -> Path:
    """PGM images + masks with a tab-separated manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(_MANIFEST_COLUMNS)]
    for s in samples:
        img_rel = f"images/{s.sample_id}.pgm"
        mask_rel = f"masks/{s.sample_id}.pgm"
        write_pgm(out / img_rel, np.rint(s.image * 255.0).astype(np.uint8))
        write_pgm(out / mask_rel, s.mask * np.uint8(255))
        lines.append("\t".join((s.sample_id, s.patient_id, s.eye_id, s.laterality,
                                img_rel, mask_rel)))
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(in_dir) -> list[SegSample]:
    root = Path(in_dir)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest.tsv under {root}")
    lines = manifest.read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != _MANIFEST_COLUMNS:
        raise ValueError(f"manifest header must be {' '.join(_MANIFEST_COLUMNS)}")
    samples = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        sid, pid, eye, lat, img_rel, mask_rel = ln.split("\t")
        image = read_pgm(root / img_rel).astype(np.float64) / 255.0
        mask_raw = read_pgm(root / mask_rel)
        bad = set(np.unique(mask_raw)) - {0, 255}
        if bad:
            raise ValueError(f"mask {mask_rel} has values outside {{0,255}}: {sorted(bad)}")
        samples.append(SegSample(image=image, mask=(mask_raw > 0).astype(np.uint8),
                                 patient_id=pid, eye_id=eye, laterality=lat,
                                 sample_id=sid))
    return samples
