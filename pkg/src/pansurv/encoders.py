"""Modality encoders.

The six genomic groups are encoded by six transformer encoders with
unshared parameters; for speed the six weight sets are stored stacked on a
leading axis and executed as one batched pass (numpy broadcasting), which
is arithmetically identical to a per-group loop. Patch bags go through a
learned affine projector standing in for a pretrained image backbone. Text
goes through a frozen, seed-reproducible hashed embedding table followed by
a small trainable affine adapter and L2 normalization.
"""

from __future__ import annotations

import re

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bags import GENOMIC_GROUPS, GenomicBag, TextBag, WsiBag


class EncoderError(ValueError):
    pass


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------

def positional_encoding(pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal position vector: component 2m is sin(pos/10000^(2m/d)),
    component 2m+1 is cos of the same argument."""
    if d_model % 2:
        raise EncoderError(f"d_model must be even, got {d_model}")
    if pos < 0:
        raise EncoderError(f"pos must be nonnegative, got {pos}")
    m = np.arange(d_model // 2)
    arg = pos / np.power(10000.0, 2.0 * m / d_model)
    out = np.empty(d_model)
    out[0::2] = np.sin(arg)
    out[1::2] = np.cos(arg)
    return out


def pe_matrix(length: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise EncoderError(f"d_model must be even, got {d_model}")
    pos = np.arange(length)[:, None]
    m = np.arange(d_model // 2)[None, :]
    arg = pos / np.power(10000.0, 2.0 * m / d_model)
    out = np.empty((length, d_model))
    out[:, 0::2] = np.sin(arg)
    out[:, 1::2] = np.cos(arg)
    return out


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def _linear(rng, fan_in, shape):
    return ad.parameter(rng.standard_normal(shape) / np.sqrt(fan_in))


def init_genomic_params(rng, d_model: int, ffn_mult: int = 2) -> dict:
    """Stacked weights for the six unshared group encoders (depth 1)."""
    g, d, f = len(GENOMIC_GROUPS), d_model, d_model * ffn_mult
    p = {
        "gen.lift_w": ad.parameter(rng.standard_normal((g, 1, d))),
        "gen.lift_b": ad.parameter(np.zeros((g, 1, d))),
        "gen.ffn_w1": _linear(rng, d, (g, d, f)),
        "gen.ffn_b1": ad.parameter(np.zeros((g, 1, f))),
        "gen.ffn_w2": _linear(rng, f, (g, f, d)),
        "gen.ffn_b2": ad.parameter(np.zeros((g, 1, d))),
        "gen.ln1_g": ad.parameter(np.ones((g, 1, d))),
        "gen.ln1_b": ad.parameter(np.zeros((g, 1, d))),
        "gen.ln2_g": ad.parameter(np.ones((g, 1, d))),
        "gen.ln2_b": ad.parameter(np.zeros((g, 1, d))),
    }
    for w in ("wq", "wk", "wv", "wo"):
        p[f"gen.{w}"] = _linear(rng, d, (g, d, d))
        p[f"gen.b{w[1]}"] = ad.parameter(np.zeros((g, 1, d)))
    return p


def init_patch_params(rng, d_patch: int, d_model: int) -> dict:
    return {
        "patch.w": _linear(rng, d_patch, (d_patch, d_model)),
        "patch.b": ad.parameter(np.zeros(d_model)),
    }


def init_text_params(rng, d_model: int) -> dict:
    return {
        "text.adapter_w": _linear(rng, d_model, (d_model, d_model)),
        "text.adapter_b": ad.parameter(np.zeros(d_model)),
    }


def frozen_text_table(seed: int, table_size: int, d_model: int) -> np.ndarray:
    """Fixed embedding table reproducible from the seed alone."""
    return np.random.default_rng(seed).standard_normal((table_size, d_model))


# ---------------------------------------------------------------------------
# genomic encoder
# ---------------------------------------------------------------------------

def bag_to_arrays(bag: GenomicBag) -> tuple[np.ndarray, np.ndarray]:
    """Pad the six groups to a common length; returns (values, mask)."""
    lmax = max(len(bag.values[g]) for g in GENOMIC_GROUPS)
    values = np.zeros((len(GENOMIC_GROUPS), lmax))
    mask = np.zeros((len(GENOMIC_GROUPS), lmax))
    for i, g in enumerate(GENOMIC_GROUPS):
        n = len(bag.values[g])
        values[i, :n] = bag.values[g]
        mask[i, :n] = bag.mask[g]
    return values, mask


def encode_genomic_arrays(values, mask, params: dict, n_heads: int = 4):
    """Batched pass over padded (groups, length) value/mask arrays.

    Returns (features (6, d), lift tokens (6, L, d), absent flags). Masked
    positions are excluded from attention and pooling, so their values
    cannot influence the features; an all-masked group yields a zero vector.
    """
    vals = values if isinstance(values, Tensor) else Tensor(values)
    m = np.asarray(mask, dtype=np.float64)
    tokens = ad.add(ad.mul(ad.reshape(vals, vals.data.shape + (1,)),
                           params["gen.lift_w"]), params["gen.lift_b"])
    pe = pe_matrix(m.shape[1], params["gen.lift_w"].data.shape[-1])
    x = ad.add(tokens, pe[None, :, :])
    q = ad.add(ad.matmul(x, params["gen.wq"]), params["gen.bq"])
    k = ad.add(ad.matmul(x, params["gen.wk"]), params["gen.bk"])
    v = ad.add(ad.matmul(x, params["gen.wv"]), params["gen.bv"])
    a = ad.attention(q, k, v, n_heads=n_heads, key_mask=m)
    a = ad.add(ad.matmul(a, params["gen.wo"]), params["gen.bo"])
    x = ad.layer_norm(ad.add(x, a), params["gen.ln1_g"], params["gen.ln1_b"])
    f = ad.relu(ad.add(ad.matmul(x, params["gen.ffn_w1"]), params["gen.ffn_b1"]))
    f = ad.add(ad.matmul(f, params["gen.ffn_w2"]), params["gen.ffn_b2"])
    x = ad.layer_norm(ad.add(x, f), params["gen.ln2_g"], params["gen.ln2_b"])
    features = ad.masked_mean(x, m[:, :, None], axis=1)
    absent = m.sum(axis=1) == 0
    return features, tokens, absent


def encode_genomic(bag: GenomicBag, params: dict, n_heads: int = 4):
    """Six d_model feature vectors, one per genomic group (Tensor (6, d))."""
    values, mask = bag_to_arrays(bag)
    return encode_genomic_arrays(values, mask, params, n_heads=n_heads)


# ---------------------------------------------------------------------------
# patch projector
# ---------------------------------------------------------------------------

def project_patches(bag, params: dict):
    """Affine map d_patch -> d_model per patch; bag length preserved.

    Returns (features (N, d), projected tokens for attribution).
    """
    patches = bag.patch_features if isinstance(bag, WsiBag) else bag
    x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=np.float64))
    if x.data.ndim != 2 or x.data.shape[1] != params["patch.w"].data.shape[0]:
        raise EncoderError(
            f"patch features {x.data.shape} do not match projector "
            f"{params['patch.w'].data.shape}")
    tokens = ad.add(ad.matmul(x, params["patch.w"]), params["patch.b"])
    return tokens, tokens


# ---------------------------------------------------------------------------
# text embedding
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_WORD = re.compile(r"[a-z0-9]+")


def _fnv1a64(token: str) -> int:
    h = _FNV_OFFSET
    for b in token.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tokenize(sentence: str) -> list[str]:
    return _WORD.findall(sentence.lower())


def frozen_sentence_vector(sentence: str, table: np.ndarray) -> np.ndarray:
    """Mean of hashed token rows from the frozen table (no gradient path)."""
    if not sentence or not sentence.strip():
        raise EncoderError("empty sentence")
    tokens = tokenize(sentence)
    if not tokens:
        raise EncoderError(f"sentence has no word tokens: {sentence!r}")
    idx = np.array([_fnv1a64(t) % table.shape[0] for t in tokens])
    return table[idx].mean(axis=0)


def embed_text_rows(frozen_rows: np.ndarray, params: dict) -> Tensor:
    """Trainable adapter + L2 normalization over precomputed frozen rows."""
    x = Tensor(np.atleast_2d(frozen_rows))
    y = ad.add(ad.matmul(x, params["text.adapter_w"]), params["text.adapter_b"])
    return ad.l2_normalize(y)


def embed_text(sentence: str, params: dict, table: np.ndarray) -> Tensor:
    """Deterministic unit vector for one sentence."""
    vec = frozen_sentence_vector(sentence, table)
    return ad.reshape(embed_text_rows(vec[None, :], params), (table.shape[1],))


def embed_text_bag(bag: TextBag, params: dict, table: np.ndarray) -> Tensor:
    """(4, d) matrix of unit vectors in template order."""
    rows = np.stack([frozen_sentence_vector(s, table) for s in bag.sentences])
    return embed_text_rows(rows, params)
