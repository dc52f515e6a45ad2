"""Batch embedding extraction: read (id, text) JSONL, run a pretrained masked
language model, write one pooled vector per text in the EMB1 binary format.

EMB1 layout (little-endian): b"EMB1" | u32 count | u32 dim | per record:
u16 id length, id bytes (UTF-8), dim x f32. The file is written atomically
via a temp file and rename.

The default pooling is the model's own pooling head over the sequence-start
token; --pooling mean averages the final hidden states under the attention
mask instead. Inference runs in eval mode with gradients disabled, so
identical texts always map to identical vectors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger("embed_sidecar")

DEFAULT_MODEL = "roberta-base"
DEFAULT_MODEL_DIM = 768

_EMB1_MAGIC = b"EMB1"


class ModelLoadError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass
class SidecarConfig:
    input_path: Path
    output_path: Path
    model_name: str = DEFAULT_MODEL
    batch_size: int = 32
    device: str = "cpu"
    pooling: str = "pooler"  # "pooler" or "mean"

    def __post_init__(self):
        self.input_path = Path(self.input_path)
        self.output_path = Path(self.output_path)
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.pooling not in ("pooler", "mean"):
            raise InputError(f"pooling must be 'pooler' or 'mean', got {self.pooling!r}")


def read_texts(path: Path) -> tuple[list[str], list[str]]:
    """Parse the (id, text) JSONL input; missing ids become row indices."""
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    ids: list[str] = []
    texts: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"line {i}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict) or "text" not in row:
                raise InputError(f"line {i}: expected an object with a 'text' field")
            row_id = str(row.get("id") or f"{i:06d}")
            if row_id in seen:
                raise InputError(f"line {i}: duplicate id {row_id!r}")
            seen.add(row_id)
            ids.append(row_id)
            texts.append(str(row["text"]))
    return ids, texts


def write_emb1(path: Path, ids: list[str], vectors: np.ndarray, dim: int) -> None:
    """Atomic EMB1 write; `vectors` is (len(ids), dim) float32."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_EMB1_MAGIC)
            fh.write(struct.pack("<II", len(ids), dim))
            for row_id, vec in zip(ids, vectors):
                id_bytes = row_id.encode("utf-8")
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _load_model(config: SidecarConfig):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(config.model_name)
        model = AutoModel.from_pretrained(config.model_name)
    except Exception as exc:
        raise ModelLoadError(f"cannot load model {config.model_name!r}: {exc}") from exc
    try:
        device = torch.device(config.device)
        model = model.to(device)
    except (RuntimeError, ValueError) as exc:
        raise ModelLoadError(f"cannot use device {config.device!r}: {exc}") from exc
    model.eval()
    dim = int(model.config.hidden_size)
    if config.model_name == DEFAULT_MODEL and dim != DEFAULT_MODEL_DIM:
        raise ModelLoadError(
            f"{DEFAULT_MODEL} must produce {DEFAULT_MODEL_DIM}-dim vectors, got {dim}"
        )
    return tokenizer, model, device, dim


def _warn_overlong(tokenizer, ids: list[str], texts: list[str]) -> None:
    max_len = getattr(tokenizer, "model_max_length", None)
    if not max_len or max_len > 1_000_000:  # some tokenizers report a sentinel
        return
    for row_id, text in zip(ids, texts):
        n_tokens = len(tokenizer(text, truncation=False)["input_ids"])
        if n_tokens > max_len:
            logger.warning(
                "input %s has %d tokens, truncating to the encoder maximum of %d",
                row_id, n_tokens, max_len,
            )


def extract(config: SidecarConfig) -> Path:
    """Embed every input text and write the EMB1 file; returns its path."""
    import torch

    ids, texts = read_texts(config.input_path)
    tokenizer, model, device, dim = _load_model(config)
    if config.pooling == "pooler" and getattr(model, "pooler", None) is None:
        raise ModelLoadError(
            f"model {config.model_name!r} has no pooling head; use --pooling mean"
        )
    _warn_overlong(tokenizer, ids, texts)

    chunks: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(texts), config.batch_size):
            batch = texts[start : start + config.batch_size]
            encoded = tokenizer(
                batch, padding=True, truncation=True, return_tensors="pt"
            ).to(device)
            output = model(**encoded)
            if config.pooling == "pooler":
                pooled = output.pooler_output
            else:
                mask = encoded["attention_mask"].unsqueeze(-1).to(output.last_hidden_state.dtype)
                pooled = (output.last_hidden_state * mask).sum(1) / mask.sum(1)
            chunks.append(pooled.cpu().to(torch.float32).numpy())

    vectors = (
        np.concatenate(chunks, axis=0) if chunks else np.zeros((0, dim), dtype=np.float32)
    )
    if not np.isfinite(vectors).all():
        raise ModelLoadError("model produced non-finite embedding values")
    write_emb1(config.output_path, ids, vectors, dim)
    logger.info("wrote %d vectors of dim %d to %s", len(ids), dim, config.output_path)
    return config.output_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-sidecar",
        description="Export pooled transformer embeddings as an EMB1 file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("extract", help="embed a JSONL file of (id, text) rows")
    ex.add_argument("--model", default=DEFAULT_MODEL, help="model name or local path")
    ex.add_argument("--input", required=True, help="input JSONL with id and text fields")
    ex.add_argument("--output", required=True, help="output EMB1 path")
    ex.add_argument("--batch", type=int, default=32, help="inference batch size")
    ex.add_argument("--pooling", choices=("pooler", "mean"), default="pooler")
    ex.add_argument("--device", default="cpu")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        config = SidecarConfig(
            input_path=Path(args.input),
            output_path=Path(args.output),
            model_name=args.model,
            batch_size=args.batch,
            device=args.device,
            pooling=args.pooling,
        )
        extract(config)
        return 0
    except (InputError, ModelLoadError) as exc:
        logger.error("error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
