"""Vital-sign ingestion, preprocessing, windowing, splits and synthetic data.

The chain mirrors the clinical preprocessing this toolkit targets: derive
mean blood pressure from systolic/diastolic, forward-fill short gaps on the
5-minute grid, drop groups with long gaps, smooth with a short moving
average, min-max scale against fixed clinical ranges, drop near-constant
groups, then cut each 9-hour group into one 72-step input / 36-step target
window.  Every dropped group carries a machine-readable reason code.

CSV stands in for the source database tables: a vitals file
(``patient_id,offset_min,hr,sbp,dbp,rr``) plus a diagnosis file
(``patient_id,group_id,diagnosis_offset_min,label``).  Empty cells mean
missing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

CHANNELS = ("hr", "mbp", "rr")
STEP_MINUTES = 5
GROUP_STEPS = 108          # 9 hours
INPUT_STEPS = 72           # 6 hours
HORIZON_STEPS = 36         # 3 hours
DIAGNOSIS_LABELS = ("sepsis", "septic_shock")

REASON_GAP = "gap-too-long"
REASON_LEADING = "leading-missing"
REASON_LOW_VARIANCE = "low-variance"
REASON_PULSE_PRESSURE = "sbp<dbp"


class SchemaError(ValueError):
    """CSV header does not match the documented schema."""


class RowError(ValueError):
    """A row failed to parse; carries the 1-based file line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PulsePressureError(ValueError):
    """Systolic below diastolic: physically impossible, record is flagged."""


class GroupExcluded(Exception):
    """A group fell out of the pipeline; `reason` is a machine-readable code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}{': ' + detail if detail else ''}")
        self.reason = reason


@dataclass
class RawVitalRecord:
    patient_id: str
    offset_min: int
    hr: float | None
    sbp: float | None
    dbp: float | None
    rr: float | None


@dataclass
class DiagnosisRecord:
    patient_id: str
    group_id: str
    diagnosis_offset_min: int
    label: str


@dataclass(frozen=True)
class ScalingSpec:
    """Fixed clinical scaling ranges per channel, in physical units."""

    ranges: dict = field(default_factory=lambda: {
        "hr": (0.0, 300.0),    # bpm
        "mbp": (0.0, 190.0),   # mmHg
        "rr": (0.0, 100.0),    # breaths/min
    })

    def __post_init__(self):
        for channel, (lo, hi) in self.ranges.items():
            if hi <= lo:
                raise ValueError(f"channel {channel}: max {hi} must exceed min {lo}")


@dataclass
class PatientGroup:
    """One 9-hour multichannel segment ending at the diagnosis offset.

    `channels` is [3, 108] ordered (hr, mbp, rr); no missing values remain
    once a group exists.
    """

    patient_id: str
    group_id: str
    channels: np.ndarray
    diagnosis_offset_min: int


@dataclass
class WindowSample:
    """One training pair: scaled [C, 72] input and the target channel's
    36-step continuation.  Row 0 of the input is always the target channel."""

    input: np.ndarray
    target: np.ndarray
    target_channel: str
    covariate_channels: tuple
    group_id: str


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list


# -- ingestion --------------------------------------------------------------------

VITALS_HEADER = ["patient_id", "offset_min", "hr", "sbp", "dbp", "rr"]
DIAGNOSIS_HEADER = ["patient_id", "group_id", "diagnosis_offset_min", "label"]


def _parse_optional_float(cell: str, line: int, column: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        return float(cell)
    except ValueError:
        raise RowError(line, f"non-numeric value {cell!r} in column {column}") from None


def ingest_csv(path) -> list[RawVitalRecord]:
    """Parse a vitals CSV, sorted by (patient_id, offset_min)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != VITALS_HEADER:
            raise SchemaError(
                f"bad vitals header {header}; expected columns {VITALS_HEADER}")
        records = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(VITALS_HEADER):
                raise RowError(line, f"expected {len(VITALS_HEADER)} fields, got {len(row)}")
            try:
                offset = int(row[1])
            except ValueError:
                raise RowError(line, f"non-integer offset_min {row[1]!r}") from None
            records.append(RawVitalRecord(
                patient_id=row[0],
                offset_min=offset,
                hr=_parse_optional_float(row[2], line, "hr"),
                sbp=_parse_optional_float(row[3], line, "sbp"),
                dbp=_parse_optional_float(row[4], line, "dbp"),
                rr=_parse_optional_float(row[5], line, "rr"),
            ))
    records.sort(key=lambda r: (r.patient_id, r.offset_min))
    for prev, cur in zip(records, records[1:]):
        if prev.patient_id == cur.patient_id and prev.offset_min == cur.offset_min:
            raise ValueError(
                f"duplicate offset {cur.offset_min} for patient {cur.patient_id}")
    return records


def read_diagnosis_csv(path) -> list[DiagnosisRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DIAGNOSIS_HEADER:
            raise SchemaError(
                f"bad diagnosis header {header}; expected columns {DIAGNOSIS_HEADER}")
        records = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DIAGNOSIS_HEADER):
                raise RowError(line, f"expected {len(DIAGNOSIS_HEADER)} fields, got {len(row)}")
            try:
                offset = int(row[2])
            except ValueError:
                raise RowError(line, f"non-integer diagnosis_offset_min {row[2]!r}") from None
            if row[3] not in DIAGNOSIS_LABELS:
                raise RowError(line, f"label {row[3]!r} not one of {DIAGNOSIS_LABELS}")
            records.append(DiagnosisRecord(row[0], row[1], offset, row[3]))
    return records


# -- preprocessing operations -------------------------------------------------------


def derive_mbp(sbp: float, dbp: float) -> float:
    """Mean blood pressure from systolic/diastolic: dbp + (sbp - dbp) / 3."""
    if sbp < dbp:
        raise PulsePressureError(f"sbp {sbp} below dbp {dbp}")
    return dbp + (sbp - dbp) / 3.0


def impute_forward_fill(values, max_gap_min: int = 25) -> np.ndarray:
    """Fill missing runs (NaN) with the last observed value.

    A run strictly longer than `max_gap_min` minutes on the 5-minute grid, or
    missing values with nothing before them to fill from, excludes the group.
    """
    v = np.array(values, dtype=np.float64)
    missing = np.isnan(v)
    if not missing.any():
        return v
    if missing[0]:
        raise GroupExcluded(REASON_LEADING, "no observed value to fill from")
    max_steps = max_gap_min // STEP_MINUTES
    run = 0
    for is_missing in missing:
        run = run + 1 if is_missing else 0
        if run > max_steps:
            raise GroupExcluded(
                REASON_GAP, f"missing run exceeds {max_gap_min} minutes")
    last_seen = np.maximum.accumulate(np.where(missing, -1, np.arange(v.size)))
    return v[last_seen]


def low_pass_filter(series) -> np.ndarray:
    """Centered 5-sample (25-minute) moving average; edges use the samples
    actually available, so length and constant series are preserved."""
    s = np.asarray(series, dtype=np.float64)
    kernel = np.ones(5)
    sums = np.convolve(s, kernel, mode="same")
    counts = np.convolve(np.ones_like(s), kernel, mode="same")
    return sums / counts


def exclude_low_variance(groups, threshold: float = 0.0025):
    """Drop scaled groups where any channel's sample std falls below the
    threshold; returns (kept, exclusion log)."""
    kept, excluded = [], []
    for group in groups:
        stds = group.channels.std(axis=1, ddof=1)
        if (stds < threshold).any():
            excluded.append((group.group_id, REASON_LOW_VARIANCE))
        else:
            kept.append(group)
    return kept, excluded


def scale(value: float, channel: str, spec: ScalingSpec | None = None) -> float:
    """Map a physical value into [0, 1] against the channel's fixed range;
    out-of-range values are clamped with a logged warning."""
    spec = spec or ScalingSpec()
    lo, hi = spec.ranges[channel]
    if value < lo or value > hi:
        logger.warning("clamping %s value %s outside [%s, %s]", channel, value, lo, hi)
        value = min(max(value, lo), hi)
    return (value - lo) / (hi - lo)


def unscale(value: float, channel: str, spec: ScalingSpec | None = None) -> float:
    spec = spec or ScalingSpec()
    lo, hi = spec.ranges[channel]
    return value * (hi - lo) + lo


def scale_array(values, channel: str, spec: ScalingSpec | None = None) -> np.ndarray:
    spec = spec or ScalingSpec()
    lo, hi = spec.ranges[channel]
    v = np.asarray(values, dtype=np.float64)
    outside = int(((v < lo) | (v > hi)).sum())
    if outside:
        logger.warning("clamping %d %s value(s) outside [%s, %s]",
                       outside, channel, lo, hi)
        v = np.clip(v, lo, hi)
    return (v - lo) / (hi - lo)


def unscale_array(values, channel: str, spec: ScalingSpec | None = None) -> np.ndarray:
    spec = spec or ScalingSpec()
    lo, hi = spec.ranges[channel]
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


def scale_group(group: PatientGroup, spec: ScalingSpec | None = None) -> PatientGroup:
    channels = np.stack([
        scale_array(group.channels[i], name, spec)
        for i, name in enumerate(CHANNELS)
    ])
    return PatientGroup(group.patient_id, group.group_id, channels,
                        group.diagnosis_offset_min)


def make_window(group: PatientGroup, target_channel: str,
                with_covariates: bool) -> WindowSample:
    """Cut a scaled 108-step group into its single input/target pair."""
    if group.channels.shape != (len(CHANNELS), GROUP_STEPS):
        raise ValueError(
            f"group {group.group_id}: expected channels "
            f"{(len(CHANNELS), GROUP_STEPS)}, got {group.channels.shape}")
    if target_channel not in CHANNELS:
        raise ValueError(f"unknown target channel {target_channel!r}")
    target_idx = CHANNELS.index(target_channel)
    if with_covariates:
        rows = [target_idx] + [i for i in range(len(CHANNELS)) if i != target_idx]
        covariates = tuple(CHANNELS[i] for i in rows[1:])
    else:
        rows = [target_idx]
        covariates = ()
    return WindowSample(
        input=group.channels[rows, :INPUT_STEPS].copy(),
        target=group.channels[target_idx, INPUT_STEPS:].copy(),
        target_channel=target_channel,
        covariate_channels=covariates,
        group_id=group.group_id,
    )


def split_groups(groups, seed: int, ratios=(0.8, 0.1, 0.1)):
    """Partition groups patient-wise into train/validation/test so group
    counts approximate the requested ratios; deterministic per seed."""
    patients = sorted({g.patient_id for g in groups})
    if len(patients) < 3:
        raise ValueError(
            f"need at least 3 patients to split, got {len(patients)}")
    rng = np.random.default_rng(seed)
    shuffled = [patients[i] for i in rng.permutation(len(patients))]
    by_patient = {p: [] for p in patients}
    for g in groups:
        by_patient[g.patient_id].append(g)
    counts = np.array([len(by_patient[p]) for p in shuffled])
    csum = np.cumsum(counts)
    total = csum[-1]
    cut1 = int(np.searchsorted(csum, ratios[0] * total))
    cut1 = min(cut1, len(shuffled) - 3)
    cut2 = int(np.searchsorted(csum, (ratios[0] + ratios[1]) * total))
    cut2 = min(max(cut2, cut1 + 1), len(shuffled) - 2)
    parts = (shuffled[:cut1 + 1], shuffled[cut1 + 1:cut2 + 1], shuffled[cut2 + 1:])
    return tuple([g for p in part for g in by_patient[p]] for part in parts)


def split_dataset(groups, seed: int, target_channel: str,
                  with_covariates: bool) -> DatasetSplit:
    """Patient-wise split of scaled groups, windowed per partition."""
    train_g, val_g, test_g = split_groups(groups, seed)
    window = lambda gs: [make_window(g, target_channel, with_covariates) for g in gs]
    return DatasetSplit(train=window(train_g), validation=window(val_g),
                        test=window(test_g))


# -- group assembly from raw records -------------------------------------------------


def grid_channel_value(record: RawVitalRecord | None, channel: str) -> float:
    if record is None:
        return np.nan
    if channel == "hr":
        return np.nan if record.hr is None else record.hr
    if channel == "rr":
        return np.nan if record.rr is None else record.rr
    if record.sbp is None or record.dbp is None:
        return np.nan
    return derive_mbp(record.sbp, record.dbp)


def assemble_groups(vitals, diagnoses, max_gap_min: int = 25):
    """Align raw records to each group's 9-hour grid, derive MBP, impute and
    smooth.  Returns physical-unit groups plus the exclusion log."""
    by_patient: dict[str, dict[int, RawVitalRecord]] = {}
    for rec in vitals:
        by_patient.setdefault(rec.patient_id, {})[rec.offset_min] = rec
    groups, exclusions = [], []
    for diag in diagnoses:
        offsets = range(
            diag.diagnosis_offset_min - (GROUP_STEPS - 1) * STEP_MINUTES,
            diag.diagnosis_offset_min + 1, STEP_MINUTES)
        patient_records = by_patient.get(diag.patient_id, {})
        try:
            channels = []
            for channel in CHANNELS:
                raw = np.array([grid_channel_value(patient_records.get(o), channel)
                                for o in offsets])
                filled = impute_forward_fill(raw, max_gap_min)
                channels.append(low_pass_filter(filled))
            groups.append(PatientGroup(diag.patient_id, diag.group_id,
                                       np.stack(channels),
                                       diag.diagnosis_offset_min))
        except PulsePressureError:
            exclusions.append((diag.group_id, REASON_PULSE_PRESSURE))
        except GroupExcluded as exc:
            exclusions.append((diag.group_id, exc.reason))
    return groups, exclusions


def load_dataset(vitals_path, diagnosis_path, spec: ScalingSpec | None = None,
                 variance_threshold: float = 0.0025):
    """Full chain from CSVs to scaled, screened groups and the exclusion log."""
    spec = spec or ScalingSpec()
    vitals = ingest_csv(vitals_path)
    diagnoses = read_diagnosis_csv(diagnosis_path)
    groups, exclusions = assemble_groups(vitals, diagnoses)
    scaled = [scale_group(g, spec) for g in groups]
    kept, low_var = exclude_low_variance(scaled, variance_threshold)
    return kept, exclusions + low_var


def write_exclusion_log(path, exclusions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group_id,reason_code\n")
        for group_id, reason in exclusions:
            fh.write(f"{group_id},{reason}\n")


# -- synthetic generator ---------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape of generated trajectories: baseline + linear trend + sinusoid +
    seeded noise, with an optional late deterioration ramp (declining MBP,
    rising HR) over the final three hours."""

    noise_std: float = 1.5
    deterioration: bool = True
    deterioration_onset_step: int = INPUT_STEPS
    groups_per_patient: int = 1


def generate_synthetic(n_patients: int, seed: int,
                       config: SyntheticConfig | None = None) -> list[PatientGroup]:
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    t = np.arange(GROUP_STEPS, dtype=np.float64)
    onset = cfg.deterioration_onset_step
    ramp = np.clip((t - onset) / (GROUP_STEPS - 1 - onset), 0.0, None)
    groups = []
    for p in range(n_patients):
        patient_id = f"synth{p:04d}"
        for g in range(cfg.groups_per_patient):
            base = np.array([rng.uniform(70, 100), rng.uniform(75, 95),
                             rng.uniform(12, 20)])
            drift = rng.uniform(-2.0, 2.0, 3)[:, None] * (t / GROUP_STEPS)
            period = rng.uniform(12, 36)
            phase = rng.uniform(0, 2 * np.pi)
            amp = np.array([rng.uniform(1, 3), rng.uniform(1, 3),
                            rng.uniform(0.5, 1.5)])
            wave = amp[:, None] * np.sin(2 * np.pi * t / period + phase)
            noise = rng.normal(0.0, 1.0, (3, GROUP_STEPS)) * cfg.noise_std
            channels = base[:, None] + drift + wave + noise
            if cfg.deterioration:
                mbp_drop = rng.uniform(15, 30)
                hr_rise = rng.uniform(10, 25)
                channels[0] += hr_rise * ramp
                channels[1] -= mbp_drop * ramp
            spec = ScalingSpec()
            for i, name in enumerate(CHANNELS):
                lo, hi = spec.ranges[name]
                channels[i] = np.clip(channels[i], lo, hi)
            groups.append(PatientGroup(
                patient_id=patient_id,
                group_id=f"{patient_id}-g{g}",
                channels=channels,
                diagnosis_offset_min=(g + 1) * GROUP_STEPS * STEP_MINUTES,
            ))
    return groups


SYNTHETIC_PULSE_PRESSURE = 40.0  # mmHg, used to factor MBP into sbp/dbp for CSV


def synthetic_to_csv(groups, vitals_path, diagnosis_path,
                     label: str = "septic_shock") -> None:
    """Write generated groups in the ingestion schema.  MBP is factored into
    a systolic/diastolic pair with a fixed pulse pressure so that re-deriving
    MBP on ingestion reproduces the generated channel."""
    rows = []
    for group in groups:
        start = group.diagnosis_offset_min - (GROUP_STEPS - 1) * STEP_MINUTES
        for step in range(GROUP_STEPS):
            hr, mbp, rr = group.channels[:, step]
            dbp = mbp - SYNTHETIC_PULSE_PRESSURE / 3.0
            sbp = dbp + SYNTHETIC_PULSE_PRESSURE
            rows.append((group.patient_id, start + step * STEP_MINUTES,
                         hr, sbp, dbp, rr))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(vitals_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(VITALS_HEADER)
        for pid, off, hr, sbp, dbp, rr in rows:
            writer.writerow([pid, off, repr(float(hr)), repr(float(sbp)),
                             repr(float(dbp)), repr(float(rr))])
    with open(diagnosis_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSIS_HEADER)
        for group in groups:
            writer.writerow([group.patient_id, group.group_id,
                             group.diagnosis_offset_min, label])
