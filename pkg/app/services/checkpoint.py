"""
Formato binário do checkpoint do scorer

    cabeçalho  <8sH32sI   magic, versão, fingerprint do pool (sha256), tamanho do meta
    meta       JSON utf-8 (encoder, hiperparâmetros, N, histórico de treino)
    projeção   F x d  float64 little-endian, row-major
    chaves     N x d  float64 little-endian, row-major
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError

from app.models.schemas import EncoderConfig, ModelPool, TrainingHyper
from app.services.scorer import EncoderParams, ScorerModel, ensure_pool
from app.utils.exceptions import CheckpointIoError, VersionMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"MOASCORE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sH32sI")
_REAL = np.dtype("<f8")


def save_scorer(model: ScorerModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    meta = {
        "n_models": model.N,
        "encoder": model.encoder.config.model_dump(),
        "hyper": model.hyper.model_dump(),
        "training_history": list(model.training_history),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    payload = b"".join([
        _HEADER.pack(MAGIC, FORMAT_VERSION, bytes.fromhex(model.pool_fingerprint), len(meta_bytes)),
        meta_bytes,
        np.ascontiguousarray(model.encoder.projection, dtype=_REAL).tobytes(),
        np.ascontiguousarray(model.keys, dtype=_REAL).tobytes(),
    ])

    tmp_path = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path.write_bytes(payload)
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointIoError(f"Falha ao gravar checkpoint {path}: {e}") from e

    logger.info(f"Checkpoint salvo em {path} ({len(payload)} bytes)")
    return path


def load_scorer(path: Union[str, Path], pool: Optional[ModelPool] = None) -> ScorerModel:
    """Lê o checkpoint; com `pool`, exige o mesmo fingerprint"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointIoError(f"Falha ao ler checkpoint {path}: {e}") from e

    if len(payload) < _HEADER.size:
        raise VersionMismatchError(f"Checkpoint truncado: {path}")

    magic, version, fingerprint, meta_len = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise VersionMismatchError(f"Arquivo não é um checkpoint de scorer: {path}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"Versão {version} não suportada (esperado {FORMAT_VERSION})")

    offset = _HEADER.size
    if len(payload) < offset + meta_len:
        raise VersionMismatchError(f"Checkpoint truncado no cabeçalho JSON: {path}")

    try:
        meta = json.loads(payload[offset:offset + meta_len].decode("utf-8"))
        encoder_config = EncoderConfig.model_validate(meta["encoder"])
        hyper = TrainingHyper.model_validate(meta["hyper"])
        n_models = int(meta["n_models"])
    except (ValueError, KeyError, TypeError, ValidationError) as e:
        raise VersionMismatchError(f"Metadados inválidos em {path}: {e}") from e
    offset += meta_len

    F, d = encoder_config.feature_dim, encoder_config.embed_dim
    expected = (F * d + n_models * d) * _REAL.itemsize
    if len(payload) - offset != expected:
        raise VersionMismatchError(
            f"Tamanho do corpo {len(payload) - offset} difere do esperado {expected}: {path}"
        )

    projection = np.frombuffer(payload, dtype=_REAL, count=F * d, offset=offset).reshape(F, d).copy()
    offset += F * d * _REAL.itemsize
    keys = np.frombuffer(payload, dtype=_REAL, count=n_models * d, offset=offset).reshape(n_models, d).copy()

    model = ScorerModel(
        encoder=EncoderParams(config=encoder_config, projection=projection),
        keys=keys,
        hyper=hyper,
        pool_fingerprint=fingerprint.hex(),
        training_history=tuple(meta.get("training_history", ())),
    )

    if pool is not None:
        ensure_pool(model, pool)

    logger.info(f"Checkpoint carregado de {path}: N={n_models}, d={d}")
    return model
