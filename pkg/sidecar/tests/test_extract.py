"""Sidecar tests run against a small randomly initialized 768-dim encoder
saved to a local directory, so no model downloads are needed. Conformance is
checked with the consumer toolkit's EMB1 reader (`affectfuse` must be
installed alongside this package for the test suite).
"""

import json
import logging

import numpy as np
import pytest

torch = pytest.importorskip("torch", reason="sidecar tests need torch")
pytest.importorskip("transformers", reason="sidecar tests need transformers")

from tokenizers import Tokenizer, models, pre_tokenizers, processors
from transformers import PreTrainedTokenizerFast, RobertaConfig, RobertaModel

from affectfuse.features import load_embeddings, lookup
from embed_sidecar import InputError, ModelLoadError, SidecarConfig, extract
from embed_sidecar.extract import main, read_texts


@pytest.fixture(scope="session")
def local_model_dir(tmp_path_factory):
    """A byte-level tokenizer plus a 2-layer, 768-wide encoder on disk."""
    path = tmp_path_factory.mktemp("tiny-roberta")
    specials = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"]
    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    vocab = {tok: i for i, tok in enumerate(specials + alphabet)}
    tok = Tokenizer(models.BPE(vocab=vocab, merges=[], unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=True)
    tok.post_processor = processors.RobertaProcessing(
        sep=("</s>", vocab["</s>"]), cls=("<s>", vocab["<s>"])
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        model_max_length=64,
        bos_token="<s>",
        eos_token="</s>",
        pad_token="<pad>",
        unk_token="<unk>",
        mask_token="<mask>",
        cls_token="<s>",
        sep_token="</s>",
    )
    fast.save_pretrained(path)

    torch.manual_seed(1234)
    config = RobertaConfig(
        vocab_size=len(vocab),
        hidden_size=768,
        num_hidden_layers=2,
        num_attention_heads=12,
        intermediate_size=512,
        max_position_embeddings=66,
        pad_token_id=vocab["<pad>"],
    )
    RobertaModel(config).save_pretrained(path)
    return path


def write_input(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


FIVE_ROWS = [
    {"id": "a1", "text": "the coffee was great this morning"},
    {"id": "b2", "text": "i stayed quiet during the meeting"},
    {"id": "c3", "text": "the coffee was great this morning"},
    {"id": "d4", "text": "counting down to the weekend"},
    {"id": "e5", "text": "short"},
]


def test_sidecar_conformance(tmp_path, local_model_dir):
    """EMB1 output parses with the consumer's reader: dim 768, order kept,
    identical texts identical vectors."""
    input_path = tmp_path / "texts.jsonl"
    write_input(input_path, FIVE_ROWS)
    out = tmp_path / "vectors.emb1"
    extract(SidecarConfig(input_path, out, model_name=str(local_model_dir)))

    table = load_embeddings(out)
    assert table.dim == 768
    assert list(table.vectors) == ["a1", "b2", "c3", "d4", "e5"]
    matrix = lookup(table, [r["id"] for r in FIVE_ROWS])
    assert matrix.data.shape == (5, 768)
    assert np.isfinite(matrix.data).all()
    np.testing.assert_array_equal(matrix.data[0], matrix.data[2])  # same text
    assert not np.array_equal(matrix.data[0], matrix.data[1])
    print("[ACCEPTANCE] sidecar-conformance: PASS")


def test_extract_is_deterministic(tmp_path, local_model_dir):
    input_path = tmp_path / "texts.jsonl"
    write_input(input_path, FIVE_ROWS[:3])
    out_a = tmp_path / "a.emb1"
    out_b = tmp_path / "b.emb1"
    extract(SidecarConfig(input_path, out_a, model_name=str(local_model_dir)))
    extract(SidecarConfig(input_path, out_b, model_name=str(local_model_dir)))
    assert out_a.read_bytes() == out_b.read_bytes()


def test_empty_input(tmp_path, local_model_dir):
    input_path = tmp_path / "empty.jsonl"
    input_path.write_text("", encoding="utf-8")
    out = tmp_path / "empty.emb1"
    extract(SidecarConfig(input_path, out, model_name=str(local_model_dir)))
    table = load_embeddings(out)
    assert table.dim == 768 and table.vectors == {}


def test_batching_matches_single_batch(tmp_path, local_model_dir):
    input_path = tmp_path / "texts.jsonl"
    rows = [{"id": f"r{i}", "text": f"sentence number {i}"} for i in range(7)]
    write_input(input_path, rows)
    small = tmp_path / "small.emb1"
    big = tmp_path / "big.emb1"
    extract(SidecarConfig(input_path, small, model_name=str(local_model_dir), batch_size=2))
    extract(SidecarConfig(input_path, big, model_name=str(local_model_dir), batch_size=32))
    a, b = load_embeddings(small), load_embeddings(big)
    for key in a.vectors:
        np.testing.assert_allclose(a.vectors[key], b.vectors[key], atol=2e-5)


def test_overlong_text_truncated_with_warning(tmp_path, local_model_dir, caplog):
    input_path = tmp_path / "long.jsonl"
    write_input(input_path, [{"id": "long1", "text": "many words here " * 50}])
    out = tmp_path / "long.emb1"
    with caplog.at_level(logging.WARNING, logger="embed_sidecar"):
        extract(SidecarConfig(input_path, out, model_name=str(local_model_dir)))
    assert any("long1" in record.message and "truncating" in record.message
               for record in caplog.records)
    table = load_embeddings(out)
    assert np.isfinite(table.vectors["long1"]).all()


def test_mean_pooling_differs_from_pooler(tmp_path, local_model_dir):
    input_path = tmp_path / "texts.jsonl"
    write_input(input_path, FIVE_ROWS[:2])
    pooler_out = tmp_path / "pooler.emb1"
    mean_out = tmp_path / "mean.emb1"
    extract(SidecarConfig(input_path, pooler_out, model_name=str(local_model_dir)))
    extract(SidecarConfig(input_path, mean_out, model_name=str(local_model_dir), pooling="mean"))
    a, b = load_embeddings(pooler_out), load_embeddings(mean_out)
    assert a.dim == b.dim == 768
    assert not np.array_equal(a.vectors["a1"], b.vectors["a1"])


def test_missing_ids_synthesized(tmp_path):
    path = tmp_path / "noids.jsonl"
    write_input(path, [{"text": "one"}, {"text": "two"}])
    ids, texts = read_texts(path)
    assert ids == ["000000", "000001"]
    assert texts == ["one", "two"]


def test_input_errors(tmp_path):
    missing = tmp_path / "nope.jsonl"
    with pytest.raises(InputError):
        read_texts(missing)

    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(InputError, match="line 0"):
        read_texts(bad)

    no_text = tmp_path / "notext.jsonl"
    write_input(no_text, [{"id": "x"}])
    with pytest.raises(InputError):
        read_texts(no_text)

    dup = tmp_path / "dup.jsonl"
    write_input(dup, [{"id": "x", "text": "a"}, {"id": "x", "text": "b"}])
    with pytest.raises(InputError):
        read_texts(dup)


def test_model_load_error(tmp_path):
    input_path = tmp_path / "texts.jsonl"
    write_input(input_path, [{"id": "a", "text": "hi"}])
    with pytest.raises(ModelLoadError):
        extract(
            SidecarConfig(
                input_path, tmp_path / "out.emb1", model_name=str(tmp_path / "no-model-here")
            )
        )


def test_bad_config(tmp_path):
    with pytest.raises(InputError):
        SidecarConfig(tmp_path / "x", tmp_path / "y", batch_size=0)
    with pytest.raises(InputError):
        SidecarConfig(tmp_path / "x", tmp_path / "y", pooling="max")


def test_cli_extract(tmp_path, local_model_dir):
    input_path = tmp_path / "texts.jsonl"
    write_input(input_path, FIVE_ROWS[:2])
    out = tmp_path / "cli.emb1"
    code = main(
        [
            "extract",
            "--model", str(local_model_dir),
            "--input", str(input_path),
            "--output", str(out),
            "--batch", "2",
            "--pooling", "pooler",
        ]
    )
    assert code == 0
    assert load_embeddings(out).dim == 768


def test_cli_reports_errors(tmp_path):
    code = main(
        ["extract", "--input", str(tmp_path / "missing.jsonl"), "--output", str(tmp_path / "o")]
    )
    assert code == 1
