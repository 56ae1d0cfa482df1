"""Command-line interface.

Every command reads and writes the JSONL/TSV formats defined by the
library and records a manifest (resolved config, results, environment)
next to anything it trains, so runs can be reproduced exactly.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure during training.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys
from pathlib import Path

import click

from . import datasets as ds
from . import synth as synth_mod
from . import teacher as teacher_mod
from . import training
from . import translate as tr
from .core import evaluate_dataset, flatten_pairs
from .errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    AS2KDError,
    ConfigError,
    DataError,
    NumericError,
    ProviderError,
)
from .student import StudentConfig, make_scorer
from .teacher import TeacherStore, load_scores, save_scores, teacher_logits

CACHE_DIR_ENV = "AS2KD_CACHE_DIR"


def _exit_code(exc: AS2KDError) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ProviderError)):
        return EXIT_DATA
    return EXIT_CONFIG


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AS2KDError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


def _translation_cache() -> tr.TranslationCache | None:
    cache_dir = os.environ.get(CACHE_DIR_ENV)
    if not cache_dir:
        return None
    path = Path(cache_dir)
    path.mkdir(parents=True, exist_ok=True)
    return tr.TranslationCache(path / "translations.jsonl")


def _load_provider(spec: str) -> tr.MTProvider:
    """Parse a provider spec: ``identity``, ``dictionary:FILE``, or
    ``permutation:FILE`` where FILE holds {"src", "tgt", "mapping"}."""
    if spec == "identity":
        return tr.IdentityProvider()
    for name, cls in (("dictionary", tr.DictionaryProvider), ("permutation", tr.PermutationProvider)):
        prefix = f"{name}:"
        if spec.startswith(prefix):
            path = spec[len(prefix):]
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            return cls(data["mapping"], data["src"], data["tgt"])
    raise ConfigError(
        f"unknown provider {spec!r}; expected identity, dictionary:FILE, or permutation:FILE"
    )


@click.group()
@click.version_option()
def main() -> None:
    """Data conversion, distillation training, and ranking evaluation."""


# -- convert ----------------------------------------------------------------


@main.group()
def convert() -> None:
    """Convert external corpora into the dataset JSONL format."""


@convert.command("wikiqa")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--language", required=True, help="Language tag of the corpus.")
@click.option("--split", default="train", type=click.Choice(["train", "dev", "test"]))
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def convert_wikiqa(input_path: str, language: str, split: str, out_path: str) -> None:
    """Parse a WikiQA-style TSV (5 or 7 columns)."""
    dataset = ds.parse_wikiqa_tsv(input_path, language=language, split=split)
    ds.write_dataset_jsonl(dataset, out_path)
    click.echo(f"wrote {len(dataset)} questions / {dataset.n_pairs()} pairs to {out_path}")


@convert.command("qadoc")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--split", default="train", type=click.Choice(["train", "dev", "test"]))
@click.option("--splitter", default="rule", help="Registered sentence splitter name.")
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def convert_qadoc(input_path: str, split: str, splitter: str, out_path: str) -> None:
    """Convert QA-document instances (document + answer spans) to examples."""
    instances = ds.read_qadoc_jsonl(input_path)
    if not instances:
        raise DataError(f"{input_path}: no instances")
    language = instances[0].question.language
    examples = tuple(ds.convert_qa_to_as2(inst, splitter) for inst in instances)
    dataset = ds.AS2Dataset(examples=examples, split=split, language=language)
    ds.write_dataset_jsonl(dataset, out_path)
    click.echo(f"wrote {len(dataset)} questions / {dataset.n_pairs()} pairs to {out_path}")


@main.command("filter-train")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def filter_train(input_path: str, out_path: str) -> None:
    """Drop all-negative questions from a train split."""
    dataset = ds.read_dataset_jsonl(input_path)
    filtered = ds.filter_train_all_negative(dataset)
    ds.write_dataset_jsonl(filtered, out_path)
    click.echo(f"kept {len(filtered)} of {len(dataset)} questions")


# -- translate --------------------------------------------------------------


@main.command("translate")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--provider", "provider_spec", required=True)
@click.option("--tgt", "tgt_language", required=True, help="Language to translate into.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pairs", "as_pairs", is_flag=True, help="Emit parallel pairs instead of a dataset.")
@click.option("--direction", type=click.Choice(tr.DIRECTIONS), default="from_english",
              help="Which side of the pairs is the original (with --pairs).")
@handle_errors
def translate_cmd(
    input_path: str, provider_spec: str, tgt_language: str, out_path: str,
    as_pairs: bool, direction: str,
) -> None:
    """Translate a dataset, or build parallel pairs for distillation."""
    dataset = ds.read_dataset_jsonl(input_path)
    provider = _load_provider(provider_spec)
    cache = _translation_cache()
    if as_pairs:
        pairs = tr.build_parallel_dataset(
            dataset, provider, direction, other_language=tgt_language, cache=cache
        )
        tr.write_pairs_jsonl(pairs, out_path)
        click.echo(f"wrote {len(pairs)} parallel pairs to {out_path}")
        return
    records = flatten_pairs(dataset)
    texts = [r.q_text for r in records] + [r.s_text for r in records]
    translated = tr.translate_batch(provider, texts, dataset.language, tgt_language, cache=cache)
    n = len(records)
    by_qid: dict[str, dict[str, str]] = {}
    for i, rec in enumerate(records):
        by_qid.setdefault(rec.question_id, {})[rec.candidate_id] = translated[n + i]
        by_qid[rec.question_id]["__question__"] = translated[i]
    examples = []
    for ex in dataset.examples:
        translated_q = by_qid[ex.question.id]["__question__"]
        cands = tuple(
            dataclasses.replace(c, text=by_qid[ex.question.id][c.id]) for c in ex.candidates
        )
        examples.append(
            ds.AS2Example(
                question=dataclasses.replace(ex.question, text=translated_q, language=tgt_language),
                candidates=cands,
            )
        )
    out_ds = ds.AS2Dataset(examples=tuple(examples), split=dataset.split, language=tgt_language)
    ds.write_dataset_jsonl(out_ds, out_path)
    click.echo(f"wrote translated dataset ({len(out_ds)} questions) to {out_path}")


# -- teacher ----------------------------------------------------------------


@main.group()
def teacher() -> None:
    """Produce or validate teacher score files."""


@teacher.command("score")
@click.option("--endpoint", required=True, help="HTTP scoring endpoint URL.")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--batch-size", default=teacher_mod.MAX_REMOTE_BATCH, show_default=True)
@handle_errors
def teacher_score(endpoint: str, data_path: str, out_path: str, batch_size: int) -> None:
    """Score every (question, sentence) pair of a dataset remotely."""
    dataset = ds.read_dataset_jsonl(data_path)
    triples = [(r.q_text, r.s_text, r.pair_id) for r in flatten_pairs(dataset)]
    store = teacher_mod.score_remote_all(endpoint, triples, batch_size=batch_size)
    save_scores(store, out_path)
    click.echo(f"wrote {len(store)} teacher scores to {out_path}")


@teacher.command("import")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def teacher_import(input_path: str, out_path: str) -> None:
    """Validate a teacher-scores file and re-emit it normalized."""
    store = load_scores(input_path)
    save_scores(store, out_path)
    click.echo(f"validated {len(store)} scores -> {out_path}")


# -- train / sweep ----------------------------------------------------------


def _build_train_config(config_file: str | None, flags: dict) -> training.TrainConfig:
    """Merge precedence: explicit CLI flags > config file > defaults."""
    base: dict = {}
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            base = json.load(fh)
    student = base.pop("student", {})
    merged = dict(base)
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return training.TrainConfig(student=StudentConfig(**student), **merged)
    except TypeError as exc:
        raise ConfigError(f"bad training configuration: {exc}") from exc


def _load_train_inputs(data_paths, pairs_paths, teacher_path, method):
    if method == "finetune":
        if not data_paths or pairs_paths:
            raise ConfigError("finetune needs --data (one or more), not --pairs")
        return [ds.read_dataset_jsonl(p) for p in data_paths], None
    if not pairs_paths:
        raise ConfigError("clkd needs --pairs (one or more)")
    if not teacher_path:
        raise ConfigError("clkd needs --teacher scores")
    pairs = []
    for p in pairs_paths:
        pairs.extend(tr.read_pairs_jsonl(p))
    return pairs, load_scores(teacher_path)


train_options = [
    click.option("--method", type=click.Choice(training.METHODS), default=None),
    click.option("--data", "data_paths", multiple=True, type=click.Path(exists=True)),
    click.option("--pairs", "pairs_paths", multiple=True, type=click.Path(exists=True)),
    click.option("--teacher", "teacher_path", type=click.Path(exists=True), default=None),
    click.option("--languages", default=None, help='"all" or a single language code.'),
    click.option("--tau", type=float, default=None),
    click.option("--alpha", type=float, default=None),
    click.option("--override-alpha", "allow_alpha_override", is_flag=True, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--iters", "total_iters", type=int, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--lr", "base_lr", type=float, default=None),
    click.option("--strict/--lenient", "strict", default=None,
                 help="Missing-teacher-score policy for clkd."),
    click.option("--config", "config_file", type=click.Path(exists=True), default=None),
]


def add_options(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return deco


@main.command("train")
@add_options(train_options)
@click.option("--checkpoint-every", type=int, default=0)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", required=True, type=click.Path())
@handle_errors
def train_cmd(
    data_paths, pairs_paths, teacher_path, config_file, strict,
    checkpoint_every, resume_path, out_dir, **flags,
) -> None:
    """Train a student and write checkpoint plus manifest."""
    if strict is not None:
        flags["teacher_mode"] = "strict" if strict else "lenient"
    cfg = _build_train_config(config_file, flags)
    inputs, store = _load_train_inputs(data_paths, pairs_paths, teacher_path, cfg.method)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.bin"

    initial = None
    start_iter = 0
    if resume_path:
        params0, state0, cfg_saved, start_iter = training.load_checkpoint(resume_path)
        if cfg_saved.to_dict() != cfg.to_dict():
            raise ConfigError("resume checkpoint was trained with a different configuration")
        initial = (params0, state0)

    def callback(step, params, state, loss):
        if checkpoint_every and step % checkpoint_every == 0 and step < cfg.total_iters:
            training.save_checkpoint(ckpt_path, params, state, cfg, step)

    if cfg.method == "finetune":
        params, state = training.train_finetune(
            inputs, cfg, initial=initial, start_iter=start_iter, callback=callback
        )
    else:
        params, state = training.train_clkd(
            inputs, store, cfg, initial=initial, start_iter=start_iter, callback=callback
        )
    training.save_checkpoint(ckpt_path, params, state, cfg, cfg.total_iters)
    training.write_manifest(
        out / "manifest.json",
        cfg,
        {"checkpoint": str(ckpt_path), "iterations": cfg.total_iters},
    )
    click.echo(f"trained {cfg.total_iters} iterations -> {ckpt_path}")


@main.command("sweep-tau")
@add_options(train_options)
@click.option("--dev", "dev_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@handle_errors
def sweep_tau_cmd(
    data_paths, pairs_paths, teacher_path, config_file, strict, dev_path, out_dir, **flags
) -> None:
    """Temperature search: train per tau, select by dev MAP, rerun seeded."""
    if strict is not None:
        flags["teacher_mode"] = "strict" if strict else "lenient"
    flags.setdefault("method", "clkd")
    if flags["method"] is None:
        flags["method"] = "clkd"
    cfg = _build_train_config(config_file, flags)
    inputs, store = _load_train_inputs(data_paths, pairs_paths, teacher_path, cfg.method)
    dev = ds.read_dataset_jsonl(dev_path)
    if cfg.method == "finetune":
        best_tau, report = training.sweep_temperature(inputs, dev, None, cfg)
    else:
        best_tau, report = training.sweep_temperature(inputs, dev, store, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    training.write_manifest(
        out / "manifest.json",
        dataclasses.replace(cfg, tau=best_tau),
        {"selected_tau": best_tau, "report": report.to_dict()},
    )
    click.echo(json.dumps({"selected_tau": best_tau, "dev_map": report.tau_dev_map[best_tau]}))


# -- evaluate / baseline ----------------------------------------------------


def _store_scorer(store: TeacherStore):
    def scorer(question, candidate) -> float:
        pid = f"{question.id}::{candidate.id}"
        teacher_logits(store, pid, mode="strict")
        return store.scores[pid].prob_pos

    return scorer


@main.command("evaluate")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), default=None)
@click.option("--include-all-negative", is_flag=True, default=False)
@click.option("--out", "out_path", type=click.Path(), default=None)
@handle_errors
def evaluate_cmd(data_path, scores_path, ckpt_path, include_all_negative, out_path) -> None:
    """Report P@1 / MAP / MRR for teacher scores or a trained checkpoint."""
    if (scores_path is None) == (ckpt_path is None):
        raise ConfigError("pass exactly one of --scores or --checkpoint")
    dataset = ds.read_dataset_jsonl(data_path)
    if scores_path:
        scorer = _store_scorer(load_scores(scores_path))
    else:
        params, _state, _cfg, _it = training.load_checkpoint(ckpt_path)
        scorer = make_scorer(params)
    report = evaluate_dataset(dataset, scorer, include_all_negative=include_all_negative)
    payload = json.dumps(report.to_dict(), indent=2)
    if out_path:
        Path(out_path).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


@main.group()
def baseline() -> None:
    """Reference pipelines to compare trained students against."""


@baseline.command("mt-teacher")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--provider", "provider_spec", required=True)
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None)
@click.option("--endpoint", default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@handle_errors
def baseline_mt_teacher(data_path, provider_spec, scores_path, endpoint, out_path) -> None:
    """Translate to English and score with the English teacher directly."""
    if (scores_path is None) == (endpoint is None):
        raise ConfigError("pass exactly one of --scores or --endpoint")
    dataset = ds.read_dataset_jsonl(data_path)
    provider = _load_provider(provider_spec)
    teacher_src = load_scores(scores_path) if scores_path else endpoint
    report = tr.mt_teacher_baseline(dataset, provider, teacher_src, cache=_translation_cache())
    payload = json.dumps(report.to_dict(), indent=2)
    if out_path:
        Path(out_path).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


# -- synth ------------------------------------------------------------------


@main.group()
def synth() -> None:
    """Synthetic bilingual benchmark with a known-perfect teacher."""


@synth.command("generate")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--questions", "n_questions", type=int, default=None)
@click.option("--vocab", "vocab_size", type=int, default=None)
@click.option("--candidates", "n_candidates", type=int, default=None)
@click.option("--positive-rate", type=float, default=None)
@click.option("--noise", "noise_rate", type=float, default=None)
@click.option("--permutation-seed", type=int, default=None)
@click.option("--seed", type=int, default=0)
@handle_errors
def synth_generate(out_dir, seed, **kwargs) -> None:
    """Emit parallel corpora, oracle teacher scores, pairs, and the token map."""
    overrides = {k: v for k, v in kwargs.items() if v is not None}
    cfg = synth_mod.SynthConfig(**overrides)
    source, target, store = synth_mod.generate(cfg, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds.write_dataset_jsonl(source, out / "source.jsonl")
    ds.write_dataset_jsonl(target, out / "target.jsonl")
    save_scores(store, out / "teacher.jsonl")
    pairs = tr.pair_parallel_datasets(source, target)
    tr.write_pairs_jsonl(pairs, out / "pairs.jsonl")
    mapping = {
        "src": synth_mod.SOURCE_LANGUAGE,
        "tgt": synth_mod.TARGET_LANGUAGE,
        "mapping": synth_mod.token_mapping(cfg),
    }
    (out / "token_map.json").write_text(json.dumps(mapping, indent=2), encoding="utf-8")
    click.echo(
        f"wrote {len(source)} questions x {cfg.n_candidates} candidates "
        f"({len(pairs)} pairs) to {out_dir}"
    )


if __name__ == "__main__":
    main()
