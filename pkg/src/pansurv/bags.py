"""Per-patient data bags: text templating, genomic padding/masks, patch bags,
tissue-histogram thresholding, and survival-time discretization.

Also owns the cohort file format: JSON Lines, one patient per line, with
patch features either inline or in a little-endian binary sidecar whose
8-byte header holds rows/cols as two uint32 values.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

SEXES = ("male", "female")

RACES = (
    "White",
    "Black or African American",
    "Asian",
    "American Indian or Alaska native",
    "Native Hawaiian or other pacific islander",
    "Not reported",
)

TREATMENTS = ("none", "radiation", "pharmaceutical", "both")

# canonical genomic groups, in fixed order
GENOMIC_GROUPS = ("TSG", "ONC", "PK", "CDM", "TF", "CGF")

GROUP_FULL_NAMES = {
    "TSG": "tumor suppressor genes",
    "ONC": "oncogenes",
    "PK": "protein kinases",
    "CDM": "cell differentiation markers",
    "TF": "transcription factors",
    "CGF": "cytokines and growth factors",
}

# documented default schema sizes per group
TABLE_GROUP_SIZES = {"TSG": 82, "ONC": 328, "PK": 513, "CDM": 443, "TF": 1536, "CGF": 452}

CANCER_FULL_NAMES = {
    "BLCA": "Bladder Urothelial Carcinoma",
    "BRCA": "Breast Invasive Carcinoma",
    "GBMLGG": "Glioblastoma & Lower Grade Glioma",
    "LUAD": "Lung Adenocarcinoma",
    "UCEC": "Uterine Corpus Endometrial Carcinoma",
}


class TemplateError(ValueError):
    """A text template field is missing or outside its vocabulary."""


class SchemaError(ValueError):
    """A genomic group or gene name is not in the reference schema."""


class BinningError(ValueError):
    """Survival-time discretization precondition violated."""


@dataclass
class PatientMeta:
    sex: str
    age: int
    race: str
    cancer_type: str
    primary_diagnosis: str
    stage: str
    t_stage: str
    n_stage: str
    m_stage: str
    treatments: str

    def validate(self):
        for name in ("sex", "age", "race", "cancer_type", "primary_diagnosis",
                     "stage", "t_stage", "n_stage", "m_stage", "treatments"):
            v = getattr(self, name)
            if v is None or (isinstance(v, str) and not v.strip()):
                raise TemplateError(f"missing meta field: {name}")
        if self.sex not in SEXES:
            raise TemplateError(f"sex {self.sex!r} not in {SEXES}")
        if self.race not in RACES:
            raise TemplateError(f"race {self.race!r} not in declared vocabulary")
        if self.treatments not in TREATMENTS:
            raise TemplateError(f"treatments {self.treatments!r} not in {TREATMENTS}")
        if int(self.age) <= 0:
            raise TemplateError(f"age must be positive, got {self.age}")


@dataclass
class TextBag:
    sentences: tuple  # (demographic, cancer, diagnosis, treatment)

    def __post_init__(self):
        if len(self.sentences) != 4 or any(not s for s in self.sentences):
            raise TemplateError("text bag must hold exactly four non-empty sentences")


@dataclass
class WsiBag:
    patch_features: np.ndarray  # (N_p, d_patch)

    def __post_init__(self):
        self.patch_features = np.asarray(self.patch_features, dtype=np.float64)
        if self.patch_features.ndim != 2 or self.patch_features.shape[0] < 1:
            raise ValueError(f"patch bag needs >=1 patches of equal dim, got "
                             f"shape {self.patch_features.shape}")

    @property
    def patch_count(self):
        return self.patch_features.shape[0]


@dataclass
class GenomicBag:
    values: dict  # group -> float array, zeros where padded
    mask: dict    # group -> 0/1 array, 1 = observed
    schema: dict  # group -> list of gene names

    def __post_init__(self):
        if set(self.schema) != set(GENOMIC_GROUPS):
            raise SchemaError(f"schema must cover exactly the groups {GENOMIC_GROUPS}")
        for grp in GENOMIC_GROUPS:
            v = np.asarray(self.values[grp], dtype=np.float64)
            m = np.asarray(self.mask[grp], dtype=np.float64)
            if len(v) != len(self.schema[grp]) or len(m) != len(v):
                raise SchemaError(f"group {grp}: value/mask length != schema length")
            if not np.all((m == 0.0) | (m == 1.0)):
                raise SchemaError(f"group {grp}: mask entries must be 0 or 1")
            if np.any(v[m == 0.0] != 0.0):
                raise SchemaError(f"group {grp}: padded positions must hold 0")
            self.values[grp] = v
            self.mask[grp] = m


@dataclass
class SurvivalLabel:
    survival_months: float
    censored: bool  # True = event not observed
    time_bin: int


@dataclass
class PatientRecord:
    id: str
    cancer_type: str
    meta: PatientMeta
    wsi: WsiBag
    genomic: GenomicBag
    survival_months: float
    censored: bool
    label: SurvivalLabel | None = None


def table_default_schema() -> dict:
    """Reference schema with the documented per-group sizes (synthetic names)."""
    return positional_schema(TABLE_GROUP_SIZES)


def cancer_full_name(code: str) -> str:
    return CANCER_FULL_NAMES.get(code, code)


# ---------------------------------------------------------------------------
# text bag
# ---------------------------------------------------------------------------

def render_text_bag(meta: PatientMeta) -> TextBag:
    """Instantiate the four sentence templates (demographic, cancer,
    diagnosis, treatment), in that order. Pure: identical meta gives
    byte-identical strings."""
    meta.validate()
    pronoun = "He" if meta.sex == "male" else "She"
    noun = "Man" if meta.sex == "male" else "Woman"
    dem = f"{pronoun} is a {int(meta.age)}-year-old {meta.race} race {noun}."
    can = f"This is a patient who has {cancer_full_name(meta.cancer_type)}."
    dia = (f"{pronoun} has {meta.primary_diagnosis} at {meta.stage}. "
           f"{meta.t_stage}, {meta.n_stage}, {meta.m_stage}.")
    if meta.treatments == "none":
        tre = "No treatment is applied."
    elif meta.treatments == "both":
        tre = "Radiation and pharmaceutical therapy is applied."
    else:
        tre = f"{meta.treatments.title()} is applied."
    return TextBag(sentences=(dem, can, dia, tre))


# ---------------------------------------------------------------------------
# genomic bag
# ---------------------------------------------------------------------------

def build_genomic_bag(observed: dict, schema: dict | None = None) -> GenomicBag:
    """Zero-pad observed gene values into the schema and record the mask.

    `observed` maps group -> {gene name -> z-score}; groups may be missing
    entirely (all-zero values and mask for that group).
    """
    if schema is None:
        schema = table_default_schema()
    unknown_groups = set(observed) - set(GENOMIC_GROUPS)
    if unknown_groups:
        raise SchemaError(f"unknown genomic groups: {sorted(unknown_groups)}")
    values, mask = {}, {}
    for grp in GENOMIC_GROUPS:
        names = schema[grp]
        pos = {g: i for i, g in enumerate(names)}
        v = np.zeros(len(names))
        m = np.zeros(len(names))
        for gene, z in (observed.get(grp) or {}).items():
            if gene not in pos:
                raise SchemaError(f"unknown gene {gene!r} in group {grp}")
            v[pos[gene]] = float(z)
            m[pos[gene]] = 1.0
        values[grp] = v
        mask[grp] = m
    return GenomicBag(values=values, mask=mask, schema=dict(schema))


# ---------------------------------------------------------------------------
# tissue-histogram thresholding
# ---------------------------------------------------------------------------

def otsu_threshold(histogram) -> int:
    """Gray level maximizing between-class variance.

    Threshold t splits levels into [0, t) and [t, 255]; only thresholds with
    both classes non-empty qualify, ties break to the lowest level. A
    histogram with a single occupied level returns that level.
    """
    h = np.asarray(histogram, dtype=np.float64)
    if h.shape != (256,) or np.any(h < 0):
        raise ValueError("histogram must be 256 nonnegative counts")
    total = h.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    levels = np.arange(256)
    w0 = np.cumsum(h)                      # mass at levels <= t
    s0 = np.cumsum(h * levels)
    mu_total = s0[-1] / total
    best_t, best_var = -1, -1.0
    for t in range(1, 256):
        n0 = w0[t - 1]                     # class [0, t)
        n1 = total - n0
        if n0 <= 0 or n1 <= 0:
            continue
        mu0 = s0[t - 1] / n0
        mu1 = (s0[-1] - s0[t - 1]) / n1
        var = n0 * n1 * (mu0 - mu1) ** 2   # scaled between-class variance
        if var > best_var + 1e-12 * max(best_var, 1.0):
            best_var, best_t = var, t
    if best_t < 0:
        return int(np.nonzero(h)[0][0])    # degenerate: single occupied level
    return best_t


# ---------------------------------------------------------------------------
# survival-time discretization
# ---------------------------------------------------------------------------

def compute_bin_edges(uncensored_times, n_bins: int) -> np.ndarray:
    """n_bins-quantile edges over uncensored survival times (sort-and-index)."""
    times = np.asarray(uncensored_times, dtype=np.float64)
    if n_bins < 1:
        raise BinningError(f"n_bins must be >= 1, got {n_bins}")
    if len(np.unique(times)) < n_bins:
        raise BinningError(
            f"need at least {n_bins} distinct uncensored times, got {len(np.unique(times))}")
    if n_bins == 1:
        return np.zeros(0)
    s = np.sort(times)
    edges = np.array([s[(i * len(s)) // n_bins] for i in range(1, n_bins)])
    if np.any(np.diff(edges) <= 0):
        raise BinningError("duplicated times collapse a quantile edge")
    return edges


def assign_time_bin(months: float, edges) -> int:
    """Index of the half-open interval holding `months`; boundary values go
    to the higher bin; the last bin is unbounded above."""
    if months < 0:
        raise BinningError(f"months must be nonnegative, got {months}")
    return int(np.searchsorted(np.asarray(edges), months, side="right"))


def make_label(months: float, censored: bool, edges) -> SurvivalLabel:
    return SurvivalLabel(survival_months=float(months), censored=bool(censored),
                         time_bin=assign_time_bin(months, edges))


# ---------------------------------------------------------------------------
# cohort file format
# ---------------------------------------------------------------------------

_MATRIX_HEADER = struct.Struct("<II")


def write_patch_matrix(path: str, matrix: np.ndarray):
    """Binary patch matrix: uint32 rows, uint32 cols, float64 row-major, LE."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_patch_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = _MATRIX_HEADER.unpack(fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    return data.reshape(rows, cols).astype(np.float64)


def _meta_to_dict(meta: PatientMeta) -> dict:
    return {k: getattr(meta, k) for k in (
        "sex", "age", "race", "cancer_type", "primary_diagnosis",
        "stage", "t_stage", "n_stage", "m_stage", "treatments")}


def patient_to_json(rec: PatientRecord, patch_path: str | None = None) -> dict:
    obj = {
        "id": rec.id,
        "cancer_type": rec.cancer_type,
        "meta": _meta_to_dict(rec.meta),
        "patch_features": patch_path if patch_path is not None
        else [[float(x) for x in row] for row in rec.wsi.patch_features],
        "genomic": {grp: {"values": rec.genomic.values[grp].tolist(),
                          "mask": rec.genomic.mask[grp].tolist()}
                    for grp in GENOMIC_GROUPS},
        "survival_months": float(rec.survival_months),
        "censored": bool(rec.censored),
    }
    return obj


def positional_schema(sizes: dict) -> dict:
    """Gene names derived from group sizes, e.g. TSG_0000 .. TSG_0011."""
    return {grp: [f"{grp}_{i:04d}" for i in range(int(sizes[grp]))]
            for grp in GENOMIC_GROUPS}


def write_cohort(path: str, records, binary_patches: bool = False):
    """One JSON object per line; optional binary sidecars for patch bags."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w") as fh:
        for rec in records:
            patch_path = None
            if binary_patches:
                patch_path = f"{os.path.basename(path)}.{rec.id}.patches.bin"
                write_patch_matrix(os.path.join(base, patch_path), rec.wsi.patch_features)
            fh.write(json.dumps(patient_to_json(rec, patch_path)) + "\n")


def read_cohort(path: str, schema: dict | None = None) -> list[PatientRecord]:
    """Parse a JSON Lines cohort. Patch features may be inline arrays or a
    path (relative to the cohort file) to a binary matrix. Without an
    explicit schema, positional gene names are derived from group lengths.
    """
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            pf = obj["patch_features"]
            if isinstance(pf, str):
                patches = read_patch_matrix(os.path.join(base, pf))
            else:
                patches = np.asarray(pf, dtype=np.float64)
            if schema is None:
                schema = positional_schema(
                    {g: len(obj["genomic"][g]["values"]) for g in GENOMIC_GROUPS})
            genomic = GenomicBag(
                values={g: np.asarray(obj["genomic"][g]["values"]) for g in GENOMIC_GROUPS},
                mask={g: np.asarray(obj["genomic"][g]["mask"]) for g in GENOMIC_GROUPS},
                schema=schema,
            )
            meta = PatientMeta(**obj["meta"])
            records.append(PatientRecord(
                id=obj["id"], cancer_type=obj["cancer_type"], meta=meta,
                wsi=WsiBag(patches), genomic=genomic,
                survival_months=float(obj["survival_months"]),
                censored=bool(obj["censored"]),
            ))
    return records
