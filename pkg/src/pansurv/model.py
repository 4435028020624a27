"""Full-network assembly: parameter construction, the per-patient forward
pass, and checkpoint persistence.

A Model is a flat name->Tensor dict plus the metadata needed to rebuild it
(dimensions, cancer vocabulary, time-bin edges, text-table seed). The
forward pass wires encoders -> OT fusion (image<->text, genomic<->text) ->
GMoE hazards + agent logits. During training the agent head consumes fused
features recomputed from detached text embeddings: values are identical,
but the cancer-classification loss cannot reach the text adapter.

Checkpoint format: magic "UMPS1\n", an 8-byte little-endian manifest
length, a JSON manifest (meta + tensor names/shapes/dtypes/offsets), then
the raw little-endian tensor payloads concatenated in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoders, fusion, moe
from .autodiff import Tensor
from .bags import GENOMIC_GROUPS, PatientRecord, render_text_bag

MAGIC = b"UMPS1\n"


class ModelError(ValueError):
    pass


@dataclass
class ModelMeta:
    d_model: int
    n_bins: int
    n_experts: int
    n_heads: int
    ffn_mult: int
    d_patch: int
    sinkhorn_eps: float
    sinkhorn_max_iter: int
    sinkhorn_tol: float
    cancer_types: tuple
    group_sizes: dict
    bin_edges: tuple
    text_table_seed: int
    text_table_size: int

    def to_dict(self):
        d = asdict(self)
        d["cancer_types"] = list(self.cancer_types)
        d["bin_edges"] = [float(x) for x in self.bin_edges]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cancer_types"] = tuple(d["cancer_types"])
        d["bin_edges"] = tuple(d["bin_edges"])
        return cls(**d)


@dataclass
class Model:
    params: dict
    meta: ModelMeta
    table: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.table is None:
            self.table = encoders.frozen_text_table(
                self.meta.text_table_seed, self.meta.text_table_size, self.meta.d_model)


def init_model(meta: ModelMeta, seed: int) -> Model:
    """Deterministic parameter construction; output heads start at zero."""
    rng = np.random.default_rng([seed, 42])
    p = {}
    p.update(encoders.init_genomic_params(rng, meta.d_model, meta.ffn_mult))
    p.update(encoders.init_patch_params(rng, meta.d_patch, meta.d_model))
    p.update(encoders.init_text_params(rng, meta.d_model))
    p.update(fusion.init_fusion_params(rng, meta.d_model, "fuse_p", meta.ffn_mult))
    p.update(fusion.init_fusion_params(rng, meta.d_model, "fuse_g", meta.ffn_mult))
    p.update(moe.init_expert_params(rng, meta.d_model, meta.n_bins, meta.n_experts,
                                    meta.ffn_mult))
    p.update(moe.init_gate_params(meta.d_model, meta.n_experts))
    p.update(moe.init_agent_params(meta.d_model, len(meta.cancer_types)))
    return Model(params=p, meta=meta)


# ---------------------------------------------------------------------------
# patient preparation
# ---------------------------------------------------------------------------

@dataclass
class PatientPrep:
    id: str
    cancer_type: str
    cancer_idx: int
    gen_values: np.ndarray   # (6, L) padded
    gen_mask: np.ndarray     # (6, L)
    patches: np.ndarray      # (N_p, d_patch)
    txt_rows: np.ndarray     # (4, d_model) frozen sentence vectors
    months: float
    censored: bool
    time_bin: int = -1


def prepare_patient(record: PatientRecord, model: Model, edges=None) -> PatientPrep:
    meta = model.meta
    if record.cancer_type not in meta.cancer_types:
        raise ModelError(f"cancer type {record.cancer_type!r} not in model vocabulary "
                         f"{meta.cancer_types}")
    values, mask = encoders.bag_to_arrays(record.genomic)
    if record.wsi.patch_features.shape[1] != meta.d_patch:
        raise ModelError(f"patch dim {record.wsi.patch_features.shape[1]} != "
                         f"model d_patch {meta.d_patch}")
    bag = render_text_bag(record.meta)
    txt_rows = np.stack([encoders.frozen_sentence_vector(s, model.table)
                         for s in bag.sentences])
    prep = PatientPrep(
        id=record.id, cancer_type=record.cancer_type,
        cancer_idx=meta.cancer_types.index(record.cancer_type),
        gen_values=values, gen_mask=mask,
        patches=record.wsi.patch_features, txt_rows=txt_rows,
        months=record.survival_months, censored=record.censored,
    )
    use_edges = edges if edges is not None else meta.bin_edges
    if len(use_edges) or meta.n_bins == 1:
        from .bags import assign_time_bin
        prep.time_bin = assign_time_bin(record.survival_months, np.asarray(use_edges))
    return prep


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class ForwardOutput:
    hazards: Tensor
    curve: object
    agent: Tensor | None
    gate: Tensor
    txt: Tensor
    fused_p: Tensor
    fused_g: Tensor
    gen_tokens: Tensor
    patch_tokens: Tensor
    plans: dict


def forward(model: Model, prep: PatientPrep, need_agent: bool = True,
            gen_values: Tensor | None = None,
            patches: Tensor | None = None) -> ForwardOutput:
    """Compose the full network for one patient.

    `gen_values`/`patches` may be passed as Tensors to obtain input
    gradients (attribution, gradient checks); defaults wrap the prepared
    arrays as constants.
    """
    meta = model.meta
    p = model.params
    txt = encoders.embed_text_rows(prep.txt_rows, p)
    gen_feats, gen_tokens, _ = encoders.encode_genomic_arrays(
        gen_values if gen_values is not None else prep.gen_values,
        prep.gen_mask, p, n_heads=meta.n_heads)
    patch_feats, patch_tokens = encoders.project_patches(
        patches if patches is not None else prep.patches, p)

    def fuse(txt_feats):
        aligned_p, plan_p = fusion.ot_align(
            patch_feats, txt_feats, p, "fuse_p", eps=meta.sinkhorn_eps,
            max_iter=meta.sinkhorn_max_iter, tol=meta.sinkhorn_tol)
        fused_p = fusion.text_guided_decode(txt_feats, aligned_p, p, "fuse_p",
                                            n_heads=meta.n_heads)
        aligned_g, plan_g = fusion.ot_align(
            gen_feats, txt_feats, p, "fuse_g", eps=meta.sinkhorn_eps,
            max_iter=meta.sinkhorn_max_iter, tol=meta.sinkhorn_tol)
        fused_g = fusion.text_guided_decode(txt_feats, aligned_g, p, "fuse_g",
                                            n_heads=meta.n_heads)
        return fused_p, fused_g, {"p": plan_p, "g": plan_g}

    fused_p, fused_g, plans = fuse(txt)
    cancer_emb = ad.reshape(ad.narrow(txt, 0, 1, 1), (meta.d_model,))
    diag_emb = ad.reshape(ad.narrow(txt, 0, 2, 1), (meta.d_model,))
    gmoe_out = moe.gmoe_hazard(fused_p, fused_g, txt, cancer_emb, diag_emb, p,
                               n_heads=meta.n_heads)
    agent = None
    if need_agent:
        if txt.requires_grad:
            # sever the text path for the agent task: same values, no
            # gradient from L_ce into the text adapter
            fused_p_a, fused_g_a, _ = fuse(txt.detach())
        else:
            fused_p_a, fused_g_a = fused_p, fused_g
        agent = moe.agent_logits(fused_p_a, fused_g_a, p)
    return ForwardOutput(
        hazards=gmoe_out.hazards, curve=gmoe_out.curve, agent=agent,
        gate=gmoe_out.gate, txt=txt, fused_p=fused_p, fused_g=fused_g,
        gen_tokens=gen_tokens, patch_tokens=patch_tokens, plans=plans)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model: Model, dtype: str = "<f8"):
    if dtype not in ("<f8", "<f4"):
        raise ModelError(f"checkpoint dtype must be <f8 or <f4, got {dtype}")
    tensors = []
    offset = 0
    blobs = []
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype=dtype).tobytes()
        tensors.append({"name": name, "shape": list(t.data.shape),
                        "dtype": dtype, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": model.meta.to_dict(), "tensors": tensors},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str) -> Model:
    """Rebuild a model; every tensor's shape is validated against the
    architecture implied by the stored configuration."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ModelError(f"{path} is not a model checkpoint (bad magic)")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        payload = fh.read()
    meta = ModelMeta.from_dict(manifest["meta"])
    model = init_model(meta, seed=0)
    seen = set()
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in model.params:
            raise ModelError(f"checkpoint tensor {name!r} unknown to this architecture")
        expected = tuple(model.params[name].data.shape)
        if tuple(entry["shape"]) != expected:
            raise ModelError(f"checkpoint tensor {name!r} has shape {entry['shape']}, "
                             f"architecture expects {list(expected)}")
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(expected)
        model.params[name].data = arr.astype(np.float64)
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise ModelError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
