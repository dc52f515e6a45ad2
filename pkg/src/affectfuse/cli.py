"""Config-driven experiment pipeline and command-line entry point.

Stages run in order (collect, featurize, tune, train, evaluate, report) with
per-stage artifacts cached on disk; a stage reruns only when its outputs are
missing or older than its inputs, so re-running a finished experiment is a
no-op and deleting one artifact regenerates just that stage and its
dependents. One master seed fans out deterministically to every stochastic
component, making mock-mode runs byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus, evaluation, features, fusion, llm, net, tuning
from .corpus import DatasetSplit, TaskSpec
from .errors import AffectFuseError, ConfigError, PlanSyntaxError, StageError
from .seeds import derive_seed

logger = logging.getLogger("affectfuse")

STAGES = ("collect", "featurize", "tune", "train", "evaluate", "report")

_ALLOWED_TASKS = ("sentiment", "suicide", "personality")


@dataclass
class DatasetConfig:
    fmt: str
    path: Path | None = None
    split_sizes: tuple[int, int, int] | None = None
    split_seed: int | None = None
    train: Path | None = None
    dev: Path | None = None
    test: Path | None = None
    max_chars: int | None = None


@dataclass
class BowConfig:
    n_range: frozenset[int]
    size_cap: int


@dataclass
class LlmConfig:
    mock: bool
    params: llm.ChatParams
    concurrency: int = 4
    rate_limit: float | None = None


@dataclass
class EmbeddingsConfig:
    mock: bool
    mock_dim: int = 768
    text: dict[str, Path] = field(default_factory=dict)
    chat: dict[str, Path] = field(default_factory=dict)


@dataclass
class RunConfig:
    tasks: list[str]
    datasets: dict[str, DatasetConfig]
    output_dir: Path
    seed: int = 0
    llm: LlmConfig = None  # type: ignore[assignment]
    embeddings: EmbeddingsConfig = None  # type: ignore[assignment]
    bow: dict[str, BowConfig] = None  # type: ignore[assignment]
    search: tuning.SearchSpace = field(default_factory=tuning.SearchSpace)
    training: dict = field(default_factory=dict)
    plans: list[fusion.FusionPlan] = field(default_factory=list)


def _require_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")


def _parse_dataset(obj: dict, base: Path, context: str) -> DatasetConfig:
    _require_keys(
        obj,
        {"path", "format", "split_sizes", "split_seed", "train", "dev", "test", "max_chars"},
        context,
    )
    fmt = obj.get("format")
    single = "path" in obj
    presplit = all(k in obj for k in ("train", "dev", "test"))
    if single == presplit:
        raise ConfigError(f"{context}: give either 'path' + 'split_sizes' or train/dev/test paths")
    if fmt is None:
        probe = obj["path"] if single else obj["train"]
        fmt = "csv" if str(probe).endswith(".csv") else "jsonl"
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"{context}: format must be 'csv' or 'jsonl'")
    ds = DatasetConfig(fmt=fmt, max_chars=obj.get("max_chars"))
    if single:
        if "split_sizes" not in obj:
            raise ConfigError(f"{context}: 'path' requires 'split_sizes'")
        sizes = obj["split_sizes"]
        if not (isinstance(sizes, list) and len(sizes) == 3):
            raise ConfigError(f"{context}: split_sizes must be [n_train, n_dev, n_test]")
        ds.path = base / obj["path"]
        ds.split_sizes = tuple(int(n) for n in sizes)
        ds.split_seed = obj.get("split_seed")
    else:
        ds.train, ds.dev, ds.test = (base / obj[k] for k in ("train", "dev", "test"))
    return ds


def _parse_llm(obj: dict) -> LlmConfig:
    _require_keys(
        obj,
        {"mock", "model", "temperature", "endpoint_url", "timeout", "max_retries",
         "concurrency", "rate_limit"},
        "llm",
    )
    mock = bool(obj.get("mock", False))
    if mock and "endpoint_url" in obj:
        raise ConfigError("llm: mock mode takes no endpoint_url")
    kwargs = {}
    for key in ("model", "temperature", "endpoint_url", "timeout", "max_retries"):
        if key in obj:
            kwargs[key] = obj[key]
    params = llm.ChatParams(**kwargs)
    if mock:
        params = llm.mock_params(params)
    return LlmConfig(
        mock=mock,
        params=params,
        concurrency=int(obj.get("concurrency", 4)),
        rate_limit=obj.get("rate_limit"),
    )


def _parse_embeddings(obj: dict, base: Path) -> EmbeddingsConfig:
    _require_keys(obj, {"mock", "mock_dim", "text", "chat"}, "embeddings")
    cfg = EmbeddingsConfig(
        mock=bool(obj.get("mock", False)), mock_dim=int(obj.get("mock_dim", 768))
    )
    for source in ("text", "chat"):
        for problem, path in obj.get(source, {}).items():
            getattr(cfg, source)[problem] = base / path
    return cfg


def _parse_bow(obj: dict) -> dict[str, BowConfig]:
    _require_keys(obj, {"text", "chat"}, "bow")
    defaults = {
        "text": BowConfig(features.TEXT_NGRAM_RANGE, features.TEXT_VOCAB_CAP),
        "chat": BowConfig(features.RESPONSE_NGRAM_RANGE, features.RESPONSE_VOCAB_CAP),
    }
    for source in ("text", "chat"):
        section = obj.get(source)
        if section is None:
            continue
        _require_keys(section, {"n_range", "size_cap"}, f"bow.{source}")
        base = defaults[source]
        defaults[source] = BowConfig(
            n_range=frozenset(section.get("n_range", base.n_range)),
            size_cap=int(section.get("size_cap", base.size_cap)),
        )
    return defaults


def _parse_search(obj: dict) -> tuning.SearchSpace:
    _require_keys(obj, {"n_samples", "n_hidden", "first_units", "learning_rate"}, "search")
    kwargs = {}
    if "n_samples" in obj:
        kwargs["n_samples"] = int(obj["n_samples"])
    for key in ("n_hidden", "first_units", "learning_rate"):
        if key in obj:
            lo, hi = obj[key]
            kwargs[key] = (lo, hi)
    return tuning.SearchSpace(**kwargs)


def parse_config(obj: dict, base_dir: Path) -> RunConfig:
    _require_keys(
        obj,
        {"tasks", "datasets", "llm", "embeddings", "bow", "search", "training",
         "plans", "output_dir", "seed"},
        "config",
    )
    for key in ("tasks", "datasets", "output_dir"):
        if key not in obj:
            raise ConfigError(f"config: missing required key '{key}'")
    tasks = list(obj["tasks"])
    for t in tasks:
        if t not in _ALLOWED_TASKS:
            raise ConfigError(f"unknown task {t!r}, expected one of {_ALLOWED_TASKS}")
    datasets = {}
    for t in tasks:
        if t not in obj["datasets"]:
            raise ConfigError(f"datasets: missing entry for task '{t}'")
        datasets[t] = _parse_dataset(obj["datasets"][t], base_dir, f"datasets.{t}")
    _require_keys(obj["datasets"], set(tasks), "datasets")

    plans_obj = obj.get("plans", "all")
    plan_strings = list(fusion.DEFAULT_PLAN_STRINGS) if plans_obj == "all" else list(plans_obj)
    try:
        plans = [fusion.parse_plan(s) for s in plan_strings]
    except PlanSyntaxError as exc:
        raise ConfigError(f"plans: {exc}") from exc

    training = dict(obj.get("training", {}))
    _require_keys(training, {"max_epochs", "batch_size", "patience"}, "training")

    return RunConfig(
        tasks=tasks,
        datasets=datasets,
        output_dir=base_dir / obj["output_dir"],
        seed=int(obj.get("seed", 0)),
        llm=_parse_llm(obj.get("llm", {})),
        embeddings=_parse_embeddings(obj.get("embeddings", {}), base_dir),
        bow=_parse_bow(obj.get("bow", {})),
        search=_parse_search(obj.get("search", {})),
        training=training,
        plans=plans,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(obj, path.parent.resolve())


# -- pipeline ----------------------------------------------------------------


@dataclass
class RunResult:
    out_dir: Path
    llm_calls: int = 0
    stages: list[tuple[str, str, str]] = field(default_factory=list)
    report_paths: list[Path] = field(default_factory=list)
    results_path: Path | None = None

    def log(self, stage: str, scope: str, status: str) -> None:
        self.stages.append((stage, scope, status))
        logger.info("[%s] %s: %s", stage, scope, status)


def _is_fresh(outputs: list[Path], inputs: list[Path]) -> bool:
    if any(not p.exists() for p in outputs):
        return False
    input_times = [p.stat().st_mtime for p in inputs if p.exists()]
    if not input_times:
        return True
    return min(p.stat().st_mtime for p in outputs) >= max(input_times)


def _sanitize(key: str) -> str:
    return key.replace(":", "_").replace("&", "__").replace("+", "-")


def _expand_problems(config: RunConfig) -> list[tuple[str, TaskSpec, DatasetConfig]]:
    problems = []
    for t in config.tasks:
        if t == "personality":
            for trait in corpus.TRAITS:
                problems.append(
                    (f"personality_{trait}", corpus.personality_task(trait), config.datasets[t])
                )
        else:
            task = corpus.sentiment_task() if t == "sentiment" else corpus.suicide_task()
            problems.append((t, task, config.datasets[t]))
    return problems


def _load_split(ds: DatasetConfig, task: TaskSpec, master_seed: int) -> DatasetSplit:
    if ds.path is not None:
        examples = corpus.load_dataset(ds.path, ds.fmt, task)
        if ds.max_chars is not None:
            examples = corpus.filter_max_chars(examples, ds.max_chars)
        seed = ds.split_seed
        if seed is None:
            seed = derive_seed(master_seed, "split", task.name)
        split = corpus.split_dataset(examples, ds.split_sizes, seed)
    else:
        parts = []
        for p in (ds.train, ds.dev, ds.test):
            loaded = corpus.load_dataset(p, ds.fmt, task)
            if ds.max_chars is not None:
                loaded = corpus.filter_max_chars(loaded, ds.max_chars)
            parts.append(loaded)
        split = DatasetSplit(*parts)
    split.require_trainable()
    return split


def _embedding_path(config: RunConfig, source: str, problem: str) -> Path:
    table = getattr(config.embeddings, source)
    path = table.get(problem)
    if path is None and problem.startswith("personality_"):
        path = table.get("personality")
    if path is None:
        raise ConfigError(f"embeddings.{source}: no embedding file configured for '{problem}'")
    if not path.exists():
        raise ConfigError(f"embeddings.{source}: file not found: {path}")
    return path


def _validate_inputs(config: RunConfig, problems) -> None:
    needed = {m for plan in config.plans for m in plan.modalities}
    for problem, _, ds in problems:
        for p in (ds.path, ds.train, ds.dev, ds.test):
            if p is not None and not p.exists():
                raise ConfigError(f"dataset file not found: {p}")
        if not config.embeddings.mock:
            for m in needed:
                if m.featurizer is fusion.FeaturizerKind.EMBEDDING:
                    _embedding_path(config, m.source.value, problem)


def _labels(split: DatasetSplit) -> dict[str, np.ndarray]:
    return {
        part: np.array([e.label for e in getattr(split, part)], dtype=np.float64)
        for part in ("train", "dev", "test")
    }


_PARTS = ("train", "dev", "test")


def _compute_modality(
    config: RunConfig,
    problem: str,
    modality: fusion.Modality,
    split: DatasetSplit,
    records: dict[str, list[llm.ChatRecord]],
) -> dict[str, features.FeatureMatrix]:
    if modality.source is fusion.TextSource.ORIGINAL:
        texts = {p: [e.text for e in getattr(split, p)] for p in _PARTS}
    else:
        texts = {p: [r.response for r in records[p]] for p in _PARTS}
    ids = {p: [e.id for e in getattr(split, p)] for p in _PARTS}

    if modality.featurizer is fusion.FeaturizerKind.BOW:
        bow = config.bow[modality.source.value]
        vocab = features.build_vocab(texts["train"], bow.n_range, bow.size_cap)
        idf = features.fit_idf(texts["train"], vocab)
        mats = {p: features.tfidf(texts[p], vocab, idf, ids=ids[p]) for p in _PARTS}
        scaler = features.fit_scaler(mats["train"])
        return {p: features.scale(mats[p], scaler) for p in _PARTS}

    if config.embeddings.mock:
        seed = derive_seed(config.seed, "mock-emb", modality.source.value)
        return {
            p: features.mock_embed(texts[p], config.embeddings.mock_dim, seed, ids=ids[p])
            for p in _PARTS
        }
    table = features.load_embeddings(
        _embedding_path(config, modality.source.value, problem)
    )
    return {p: features.lookup(table, ids[p]) for p in _PARTS}


def run(
    config: RunConfig,
    *,
    transport=None,
    jobs: int = 1,
    until: str | None = None,
) -> RunResult:
    """Execute the pipeline; returns what ran, what was cached, and where."""
    if until is not None and until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    problems = _expand_problems(config)
    _validate_inputs(config, problems)

    if transport is None:
        transport = (
            llm.MockTransport(responder=llm.heuristic_responder)
            if config.llm.mock
            else llm.HttpTransport()
        )
    counting = llm.CountingTransport(transport)
    result = RunResult(out_dir=out)

    needed_modalities = sorted(
        {m for plan in config.plans for m in plan.modalities}, key=lambda m: m.key
    )
    needed_units: list[fusion.FusionPlan] = []
    for plan in config.plans:
        for unit in fusion.training_units(plan):
            if unit not in needed_units:
                needed_units.append(unit)

    def stage_done(stage: str) -> bool:
        return until == stage

    # -- collect ------------------------------------------------------------
    splits: dict[str, DatasetSplit] = {}
    records: dict[str, dict[str, list[llm.ChatRecord]]] = {}
    response_files: dict[str, Path] = {}
    for problem, task, ds in problems:
        try:
            split = _load_split(ds, task, config.seed)
            splits[problem] = split
            cache_path = out / "responses" / f"{problem}.jsonl"
            response_files[problem] = cache_path
            cache = llm.CacheStore(cache_path)
            before = counting.calls
            records[problem] = {
                part: llm.collect(
                    getattr(split, part),
                    task,
                    config.llm.params,
                    cache,
                    counting,
                    concurrency=config.llm.concurrency,
                    rate_limit=config.llm.rate_limit,
                )
                for part in _PARTS
            }
            result.log("collect", problem, "ran" if counting.calls > before else "cached")
        except AffectFuseError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError("collect", exc) from exc
    result.llm_calls = counting.calls
    if stage_done("collect"):
        return result

    # -- featurize ----------------------------------------------------------
    feature_files: dict[tuple[str, fusion.Modality], dict[str, Path]] = {}
    modality_features: dict[str, dict[fusion.Modality, fusion.SplitFeatures]] = {}
    for problem, task, _ in problems:
        modality_features[problem] = {}
        for modality in needed_modalities:
            paths = {
                p: out / "features" / problem / f"{_sanitize(modality.key)}_{p}.fmat1"
                for p in _PARTS
            }
            feature_files[(problem, modality)] = paths
            inputs = []
            if modality.source is fusion.TextSource.RESPONSE:
                inputs.append(response_files[problem])
            if (
                modality.featurizer is fusion.FeaturizerKind.EMBEDDING
                and not config.embeddings.mock
            ):
                inputs.append(_embedding_path(config, modality.source.value, problem))
            try:
                if _is_fresh(list(paths.values()), inputs):
                    mats = {p: features.load_feature_matrix(paths[p]) for p in _PARTS}
                    status = "cached"
                else:
                    mats = _compute_modality(
                        config, problem, modality, splits[problem], records[problem]
                    )
                    for p in _PARTS:
                        features.save_feature_matrix(mats[p], paths[p])
                    status = "ran"
            except AffectFuseError as exc:
                raise StageError("featurize", exc) from exc
            modality_features[problem][modality] = tuple(mats[p] for p in _PARTS)
            result.log("featurize", f"{problem}/{modality.key}", status)
    if stage_done("featurize"):
        return result

    # -- tune -----------------------------------------------------------------
    best_configs: dict[tuple[str, str], net.MLPConfig] = {}
    for problem, task, _ in problems:
        labels = _labels(splits[problem])
        loss = net.LossKind.MAE if task.label_kind is corpus.LabelKind.REAL else net.LossKind.BINARY_NLL
        for unit in needed_units:
            log_path = out / "trials" / f"{problem}__{_sanitize(unit.key)}.jsonl"
            unit_inputs = [
                feature_files[(problem, m)][p] for m in unit.modalities for p in _PARTS
            ]
            if log_path.exists() and not _is_fresh([log_path], unit_inputs):
                log_path.unlink()  # stale log: inputs changed since it was written
            tr, dv, _te = fusion.unit_features(unit, modality_features[problem])
            try:
                outcome = tuning.tune(
                    config.search,
                    derive_seed(config.seed, "tune", problem, unit.key),
                    tr.data,
                    labels["train"],
                    dv.data,
                    labels["dev"],
                    loss,
                    train_overrides=config.training or None,
                    log_path=log_path,
                    n_jobs=jobs,
                )
            except AffectFuseError as exc:
                raise StageError("tune", exc) from exc
            best_configs[(problem, unit.key)] = outcome.best_config
            result.log(
                "tune",
                f"{problem}/{unit.key}",
                "ran" if outcome.n_executed else "cached",
            )
    if stage_done("tune"):
        return result

    # -- train ----------------------------------------------------------------
    model_files: dict[tuple[str, str], Path] = {}
    for problem, task, _ in problems:
        labels = _labels(splits[problem])
        for unit in needed_units:
            model_path = out / "models" / f"{problem}__{_sanitize(unit.key)}.mlp1"
            model_files[(problem, unit.key)] = model_path
            trial_log = out / "trials" / f"{problem}__{_sanitize(unit.key)}.jsonl"
            if _is_fresh([model_path], [trial_log]):
                result.log("train", f"{problem}/{unit.key}", "cached")
                continue
            tr, dv, _te = fusion.unit_features(unit, modality_features[problem])
            try:
                model = net.train(
                    best_configs[(problem, unit.key)],
                    tr.data,
                    labels["train"],
                    dv.data,
                    labels["dev"],
                )
            except AffectFuseError as exc:
                raise StageError("train", exc) from exc
            net.save_model(model, model_path)
            result.log("train", f"{problem}/{unit.key}", "ran")
    if stage_done("train"):
        return result

    # -- evaluate ---------------------------------------------------------------
    results_path = out / "reports" / "results.json"
    result.results_path = results_path
    eval_inputs = list(model_files.values()) + list(response_files.values())
    if _is_fresh([results_path], eval_inputs):
        result.log("evaluate", "all", "cached")
    else:
        all_reports: dict[str, dict[str, dict]] = {}
        for problem, task, _ in problems:
            labels = _labels(splits[problem])
            reports: dict[str, dict] = {}
            try:
                outcomes = [
                    evaluation.baseline_classify(r.response, task)
                    for r in records[problem]["test"]
                ]
                reports[evaluation.BASELINE_ROW] = evaluation.evaluate(
                    outcomes, labels["test"]
                ).to_json()
                for plan in config.plans:
                    unit_probs = []
                    for unit in fusion.training_units(plan):
                        _tr, _dv, te = fusion.unit_features(unit, modality_features[problem])
                        model = net.load_model(model_files[(problem, unit.key)])
                        unit_probs.append(net.predict_proba(model, te.data))
                    probs = (
                        fusion.late_fuse(unit_probs)
                        if plan.mode is fusion.FusionMode.LATE
                        else unit_probs[0]
                    )
                    reports[plan.key] = evaluation.evaluate(probs, labels["test"]).to_json()
            except AffectFuseError as exc:
                raise StageError("evaluate", exc) from exc
            all_reports[problem] = reports
        results_path.parent.mkdir(parents=True, exist_ok=True)
        results_path.write_text(
            json.dumps(all_reports, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        result.log("evaluate", "all", "ran")
    if stage_done("evaluate"):
        return result

    # -- report -----------------------------------------------------------------
    report_paths = [
        out / "reports" / f"report_{metric}.{ext}"
        for metric in ("accuracy", "uar")
        for ext in ("md", "csv")
    ]
    result.report_paths = report_paths
    if _is_fresh(report_paths, [results_path]):
        result.log("report", "all", "cached")
        return result
    loaded = json.loads(results_path.read_text(encoding="utf-8"))
    table: dict[tuple[str, str], evaluation.EvalReport] = {}
    for problem, reports in loaded.items():
        for plan_key, report in reports.items():
            table[(plan_key, problem)] = evaluation.EvalReport.from_json(report)
    for metric in ("accuracy", "uar"):
        for ext, fmt in (("md", "markdown"), ("csv", "csv")):
            path = out / "reports" / f"report_{metric}.{ext}"
            path.write_text(evaluation.report_table(table, metric, fmt), encoding="utf-8")
    result.log("report", "all", "ran")
    return result


def compact_caches(config: RunConfig) -> int:
    """Deduplicate every response cache under the output directory."""
    removed = 0
    responses = config.output_dir / "responses"
    if responses.is_dir():
        for path in sorted(responses.glob("*.jsonl")):
            removed += llm.CacheStore(path).compact()
    return removed


# -- command line -------------------------------------------------------------


def _apply_flags(config: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "mock_llm", False):
        config.llm = LlmConfig(
            mock=True,
            params=llm.mock_params(config.llm.params),
            concurrency=config.llm.concurrency,
            rate_limit=config.llm.rate_limit,
        )
    if getattr(args, "mock_embeddings", False):
        config.embeddings.mock = True
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="affectfuse",
        description="Train and fuse text classifiers over original texts and "
        "verbose LLM responses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--mock-llm", action="store_true", help="use the built-in mock responder")
        p.add_argument("--mock-embeddings", action="store_true", help="use content-hash mock embeddings")
        p.add_argument("--jobs", type=int, default=1, help="parallel tuning trials")

    for stage in STAGES + ("run",):
        p = sub.add_parser(stage, help=f"run the pipeline through the {stage} stage"
                           if stage != "run" else "run every stage")
        add_common(p)

    cache_parser = sub.add_parser("cache", help="cache maintenance")
    cache_sub = cache_parser.add_subparsers(dest="cache_command", required=True)
    compact = cache_sub.add_parser("compact", help="drop superseded response-cache lines")
    add_common(compact)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    try:
        config = _apply_flags(load_config(args.config), args)
        if args.command == "cache":
            removed = compact_caches(config)
            logger.info("compacted caches, removed %d superseded line(s)", removed)
            return 0
        until = None if args.command == "run" else args.command
        result = run(config, jobs=args.jobs, until=until)
        logger.info(
            "done: %d LLM call(s), artifacts under %s", result.llm_calls, result.out_dir
        )
        return 0
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except StageError as exc:
        logger.error("%s", exc)
        return 1
    except AffectFuseError as exc:
        logger.error("error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
