"""Command-line pipeline driver.

Each subcommand runs one stage against a run directory, reading the
artifacts earlier stages wrote and adding its own; ``pipeline`` chains
them all.  Every byte written is a function of the config and the master
seed (no timestamps, sorted JSON keys), so repeating a run reproduces
the directory exactly.

Exit codes: 0 success, 2 configuration problems (reported all at once),
3 a required artifact is missing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any, Sequence

import numpy as np

from . import attention as attn
from . import cohort as coh
from . import encoder as enc
from . import evaluation as ev
from . import finetune as ft
from . import preprocess as pp
from . import pretrain as pt
from . import synth
from . import tokenizer as tok
from .errors import ConfigError, InputError, MissingArtifactError

# Stage tags feeding SeedSequence([master_seed, tag, ...]) substreams.
SEED_SYNTH = 1
SEED_PRETRAIN = 2
SEED_SPLIT = 3
SEED_FINETUNE = 4

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "synth": {
        "n_patients": 120,
        "case_fraction": 0.3,
        "signal_strength": 0.8,
    },
    "cohort": {
        "settings": ["no_restrict", 365],
        "late_converter": "control",
    },
    "vocab": {
        "max_size": 2048,
        "min_freq": 1,
    },
    "encoder": {
        "max_len": 32,
        "hidden": 64,
        "layers": 2,
        "heads": 2,
        "ffn": 256,
    },
    "pretrain": {
        "steps": 300,
        "batch_size": 8,
        "learning_rate": 1e-3,
        "mask_fraction": 0.15,
        "checkpoint_every": 0,
    },
    "finetune": {
        "epochs": 4,
        "batch_size": 4,
        "learning_rate": 3e-4,
        "threshold": 0.5,
        "freeze_layers": 0,
    },
    "evaluate": {
        "attention_patients": 2,
        "highlight_terms": [],
    },
}


def _check(problems, cond: bool, message: str) -> None:
    if not cond:
        problems.append(message)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate_config(raw: dict) -> dict:
    """Merge over defaults and verify every field; report all problems.

    Unknown keys at any level are rejected so typos cannot silently fall
    back to defaults.
    """
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in DEFAULT_CONFIG:
            problems.append(f"unknown config key '{key}'")
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for section, defaults in DEFAULT_CONFIG.items():
        if section == "seed":
            continue
        given = raw.get(section, {})
        if not isinstance(given, dict):
            problems.append(f"'{section}' must be an object")
            continue
        for key in given:
            if key not in defaults:
                problems.append(f"unknown key '{section}.{key}'")
        for key, value in given.items():
            if key in defaults:
                merged[section][key] = value

    if "seed" in raw:
        if _is_int(raw["seed"]) and raw["seed"] >= 0:
            merged["seed"] = raw["seed"]
        else:
            problems.append("'seed' must be a non-negative integer")

    s = merged["synth"]
    _check(problems, _is_int(s["n_patients"]) and s["n_patients"] >= 1,
           "'synth.n_patients' must be a positive integer")
    _check(problems, _is_number(s["case_fraction"]) and 0 <= s["case_fraction"] <= 1,
           "'synth.case_fraction' must lie in [0, 1]")
    _check(problems, _is_number(s["signal_strength"]) and 0 < s["signal_strength"] <= 1,
           "'synth.signal_strength' must lie in (0, 1]")

    c = merged["cohort"]
    settings = c["settings"]
    if not isinstance(settings, list) or not settings:
        problems.append("'cohort.settings' must be a non-empty list")
    else:
        for item in settings:
            if item == "no_restrict":
                continue
            if not (_is_int(item) and item > 0):
                problems.append(
                    f"'cohort.settings' entries must be 'no_restrict' or a "
                    f"positive integer day count, got {item!r}"
                )
        if len(set(map(str, settings))) != len(settings):
            problems.append("'cohort.settings' entries must be unique")
    _check(problems, c["late_converter"] in ("control", "excluded"),
           "'cohort.late_converter' must be 'control' or 'excluded'")

    v = merged["vocab"]
    _check(problems, _is_int(v["max_size"]) and v["max_size"] > 5,
           "'vocab.max_size' must be an integer above the reserved block")
    _check(problems, _is_int(v["min_freq"]) and v["min_freq"] >= 1,
           "'vocab.min_freq' must be a positive integer")

    e = merged["encoder"]
    for key in ("max_len", "hidden", "layers", "heads", "ffn"):
        _check(problems, _is_int(e[key]) and e[key] >= 1,
               f"'encoder.{key}' must be a positive integer")
    if _is_int(e["hidden"]) and _is_int(e["heads"]) and e["heads"] >= 1:
        _check(problems, e["hidden"] % e["heads"] == 0,
               "'encoder.hidden' must be divisible by 'encoder.heads'")

    p = merged["pretrain"]
    _check(problems, _is_int(p["steps"]) and p["steps"] >= 1,
           "'pretrain.steps' must be a positive integer")
    _check(problems, _is_int(p["batch_size"]) and p["batch_size"] >= 1,
           "'pretrain.batch_size' must be a positive integer")
    _check(problems, _is_number(p["learning_rate"]) and p["learning_rate"] > 0,
           "'pretrain.learning_rate' must be positive")
    _check(problems, _is_number(p["mask_fraction"]) and 0 < p["mask_fraction"] < 1,
           "'pretrain.mask_fraction' must lie in (0, 1)")
    _check(problems, _is_int(p["checkpoint_every"]) and p["checkpoint_every"] >= 0,
           "'pretrain.checkpoint_every' must be a non-negative integer")

    f = merged["finetune"]
    _check(problems, _is_int(f["epochs"]) and f["epochs"] >= 1,
           "'finetune.epochs' must be a positive integer")
    _check(problems, _is_int(f["batch_size"]) and f["batch_size"] >= 2,
           "'finetune.batch_size' must be an integer of at least 2")
    _check(problems, _is_number(f["learning_rate"]) and f["learning_rate"] > 0,
           "'finetune.learning_rate' must be positive")
    _check(problems, _is_number(f["threshold"]) and 0 < f["threshold"] < 1,
           "'finetune.threshold' must lie in (0, 1)")
    _check(problems, _is_int(f["freeze_layers"]) and f["freeze_layers"] >= 0,
           "'finetune.freeze_layers' must be a non-negative integer")

    g = merged["evaluate"]
    _check(problems, _is_int(g["attention_patients"]) and g["attention_patients"] >= 0,
           "'evaluate.attention_patients' must be a non-negative integer")
    terms = g["highlight_terms"]
    if not isinstance(terms, list) or not all(isinstance(t, str) for t in terms):
        problems.append("'evaluate.highlight_terms' must be a list of strings")

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return merged


def stage_seed(master: int, *tags: int) -> int:
    """Deterministic per-stage seed derived from the master seed."""
    state = np.random.SeedSequence([master, *tags]).generate_state(1)
    return int(state[0])


class RunPaths:
    """Canonical artifact locations inside one run directory."""

    def __init__(self, root: str):
        self.root = root
        self.roster = os.path.join(root, "roster.jsonl")
        self.ledger = os.path.join(root, "ledger.json")
        self.exclusions = os.path.join(root, "exclusions.json")
        self.cohort = os.path.join(root, "cohort.jsonl")
        self.summary = os.path.join(root, "summary.json")
        self.sections = os.path.join(root, "sections.jsonl")
        self.vocab = os.path.join(root, "vocab.txt")
        self.pretrain_dir = os.path.join(root, "pretrain")
        self.pretrain_final = os.path.join(self.pretrain_dir, "checkpoint_final")
        self.eval_dir = os.path.join(root, "eval")
        self.resolved_config = os.path.join(root, "resolved_config.json")

    def finetune_dir(self, setting: str) -> str:
        return os.path.join(self.root, "finetune", setting)


def _write_json(path: str, payload) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, sort_keys=True, ensure_ascii=True, indent=2)
        fh.write("\n")


def _read_json(path: str):
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    return path


def _settings(cfg: dict) -> list[coh.Setting]:
    out = []
    for item in cfg["cohort"]["settings"]:
        if item == "no_restrict":
            out.append(coh.Setting(None))
        else:
            out.append(coh.Setting(int(item)))
    return out


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_synth(cfg: dict, paths: RunPaths) -> None:
    scfg = synth.SynthConfig(
        n_patients=cfg["synth"]["n_patients"],
        case_fraction=cfg["synth"]["case_fraction"],
        seed=stage_seed(cfg["seed"], SEED_SYNTH),
        signal_strength=cfg["synth"]["signal_strength"],
    )
    roster, ledger = synth.generate_roster_with_ledger(scfg)
    os.makedirs(paths.root, exist_ok=True)
    synth.save_roster(roster, paths.roster)
    _write_json(paths.ledger, synth.ledger_to_dict(ledger))
    print(f"synth: wrote {len(roster)} patients to {paths.roster}")


def stage_cohort(cfg: dict, paths: RunPaths) -> None:
    roster = synth.load_roster(_require(paths.roster))
    eligible, report = coh.apply_exclusions(roster)
    _write_json(
        paths.exclusions,
        {
            "counts": report.counts,
            "eligible": report.eligible_count,
            "excluded": [
                {"patient_id": pid, "reason": reason}
                for pid, reason in report.excluded
            ],
        },
    )
    summary: dict[str, Any] = {}
    with open(paths.cohort, "w", encoding="ascii") as fh:
        for setting in _settings(cfg):
            labeled = coh.build_cohort(
                eligible, setting, late_converter=cfg["cohort"]["late_converter"]
            )
            for entry in labeled.entries:
                fh.write(
                    json.dumps(
                        {
                            "setting": setting.name,
                            "patient_id": entry.patient_id,
                            "label": entry.label.value.value,
                            "reason": entry.label.reason,
                            "conversion_days": entry.conversion_days,
                        },
                        sort_keys=True,
                        ensure_ascii=True,
                    )
                    + "\n"
                )
            fh.write(
                json.dumps(
                    {"setting": setting.name, "counts": labeled.counts()},
                    sort_keys=True,
                    ensure_ascii=True,
                )
                + "\n"
            )
            summary[setting.name] = coh.cohort_summary(labeled, roster, report)
    _write_json(paths.summary, summary)
    print(f"cohort: labeled {len(eligible)} eligible patients "
          f"under {len(_settings(cfg))} settings")


def stage_preprocess(cfg: dict, paths: RunPaths) -> None:
    roster = synth.load_roster(_require(paths.roster))
    eligible, _ = coh.apply_exclusions(roster)
    n_notes = 0
    with open(paths.sections, "w", encoding="ascii") as fh:
        for patient in eligible:
            for note_index, note in enumerate(coh.collect_notes(patient)):
                secs = [s.text for s in pp.preprocess_note(note.text)]
                if not secs:
                    continue
                fh.write(
                    json.dumps(
                        {
                            "patient_id": patient.patient_id,
                            "note_index": note_index,
                            "sections": secs,
                        },
                        sort_keys=True,
                        ensure_ascii=True,
                    )
                    + "\n"
                )
                n_notes += 1
    print(f"preprocess: wrote {n_notes} notes to {paths.sections}")


def _load_sections(paths: RunPaths) -> list[dict]:
    rows = []
    with open(_require(paths.sections), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def stage_vocab(cfg: dict, paths: RunPaths) -> None:
    rows = _load_sections(paths)
    texts = [sec for row in rows for sec in row["sections"]]
    vocab = tok.build_vocab(
        texts, max_size=cfg["vocab"]["max_size"], min_freq=cfg["vocab"]["min_freq"]
    )
    vocab.save(paths.vocab)
    print(f"vocab: {len(vocab)} tokens -> {paths.vocab}")


def _encoder_config(cfg: dict, vocab_size: int) -> enc.EncoderConfig:
    e = cfg["encoder"]
    return enc.EncoderConfig(
        vocab_size=vocab_size,
        max_len=e["max_len"],
        hidden=e["hidden"],
        layers=e["layers"],
        heads=e["heads"],
        ffn=e["ffn"],
    )


def stage_pretrain(cfg: dict, paths: RunPaths) -> None:
    rows = _load_sections(paths)
    vocab = tok.Vocab.load(_require(paths.vocab))
    note_sections = [row["sections"] for row in rows]
    pcfg = pt.PretrainConfig(
        steps=cfg["pretrain"]["steps"],
        batch_size=cfg["pretrain"]["batch_size"],
        learning_rate=cfg["pretrain"]["learning_rate"],
        mask_fraction=cfg["pretrain"]["mask_fraction"],
        seed=stage_seed(cfg["seed"], SEED_PRETRAIN),
        checkpoint_every=cfg["pretrain"]["checkpoint_every"],
    )
    result = pt.run_pretraining(
        note_sections,
        vocab,
        _encoder_config(cfg, len(vocab)),
        pcfg,
        out_dir=paths.pretrain_dir,
    )
    last = result.curve[-1]
    print(f"pretrain: {last[0]} steps, final total loss {last[3]:.4f} "
          f"-> {paths.pretrain_final}")


def _cohort_labels(paths: RunPaths, setting_name: str) -> dict[str, int]:
    """patient_id -> binary label for one setting, excluded dropped."""
    labels: dict[str, int] = {}
    found = False
    with open(_require(paths.cohort), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if row.get("setting") != setting_name or "patient_id" not in row:
                continue
            found = True
            if row["label"] == "case":
                labels[row["patient_id"]] = 1
            elif row["label"] == "control":
                labels[row["patient_id"]] = 0
    if not found:
        raise InputError(
            f"cohort file has no entries for setting '{setting_name}'; "
            "rerun the cohort stage with this setting configured"
        )
    return labels


def _patient_inputs(
    paths: RunPaths, labels: dict[str, int], vocab: tok.Vocab, max_len: int
) -> tuple[list[ft.PatientInput], list[str]]:
    """Build model inputs and raw texts for every labeled patient."""
    grouped: dict[str, list[str]] = {}
    for row in _load_sections(paths):
        if row["patient_id"] in labels:
            grouped.setdefault(row["patient_id"], []).extend(row["sections"])
    patients = []
    texts = []
    for pid in sorted(grouped):
        secs = grouped[pid]
        patients.append(
            ft.PatientInput(
                patient_id=pid,
                sections=tuple(tok.encode_section(t, vocab, max_len) for t in secs),
                label=labels[pid],
            )
        )
        texts.append("\n".join(secs))
    return patients, texts


def stage_finetune(cfg: dict, paths: RunPaths) -> None:
    vocab = tok.Vocab.load(_require(paths.vocab))
    enc_cfg = _encoder_config(cfg, len(vocab))
    base_params, _ = enc.load_checkpoint(paths.pretrain_final, enc_cfg)
    for idx, setting in enumerate(_settings(cfg)):
        labels = _cohort_labels(paths, setting.name)
        patients, _ = _patient_inputs(paths, labels, vocab, enc_cfg.max_len)
        plabels = [p.label for p in patients]
        plan = ev.split_dataset(plabels, seed=stage_seed(cfg["seed"], SEED_SPLIT, idx))
        out_dir = paths.finetune_dir(setting.name)
        os.makedirs(out_dir, exist_ok=True)
        _write_json(
            os.path.join(out_dir, "split.json"),
            {
                "train": [patients[i].patient_id for i in plan.train],
                "val": [patients[i].patient_id for i in plan.val],
                "test": [patients[i].patient_id for i in plan.test],
            },
        )
        fcfg = ft.FinetuneConfig(
            epochs=cfg["finetune"]["epochs"],
            batch_size=cfg["finetune"]["batch_size"],
            learning_rate=cfg["finetune"]["learning_rate"],
            threshold=cfg["finetune"]["threshold"],
            seed=stage_seed(cfg["seed"], SEED_FINETUNE, idx),
            freeze_layers=cfg["finetune"]["freeze_layers"],
        )
        result = ft.run_finetune(
            [patients[i] for i in plan.train],
            [patients[i] for i in plan.val],
            base_params.copy(),
            fcfg,
        )
        enc.save_checkpoint(result.params, os.path.join(out_dir, "checkpoint_best"))
        with open(os.path.join(out_dir, "train_report.csv"), "w", encoding="ascii") as fh:
            fh.write(ft.history_to_csv(result.history))
        print(f"finetune[{setting.name}]: best epoch {result.best_epoch}, "
              f"val AUC {result.best_val_auc:.4f}")


def stage_evaluate(cfg: dict, paths: RunPaths) -> None:
    vocab = tok.Vocab.load(_require(paths.vocab))
    enc_cfg = _encoder_config(cfg, len(vocab))
    threshold = cfg["finetune"]["threshold"]
    report = ev.ComparisonReport()
    metric_rows = []
    os.makedirs(paths.eval_dir, exist_ok=True)
    for setting in _settings(cfg):
        labels = _cohort_labels(paths, setting.name)
        patients, texts = _patient_inputs(paths, labels, vocab, enc_cfg.max_len)
        by_id = {p.patient_id: i for i, p in enumerate(patients)}
        out_dir = paths.finetune_dir(setting.name)
        split = _read_json(os.path.join(out_dir, "split.json"))
        params, _ = enc.load_checkpoint(
            os.path.join(out_dir, "checkpoint_best"), enc_cfg
        )
        test_idx = [by_id[pid] for pid in split["test"]]
        train_idx = [by_id[pid] for pid in split["train"]]
        test_patients = [patients[i] for i in test_idx]
        test_labels = [p.label for p in test_patients]

        scores = ft.predict_patients(params, test_patients)
        metrics = ev.evaluate(scores, test_labels, threshold)
        report.add("encoder", setting.name, metrics)

        bow = ev.train_bow_baseline(
            [texts[i] for i in train_idx], [patients[i].label for i in train_idx]
        )
        bow_scores = ev.score_bow_baseline(bow, [texts[i] for i in test_idx])
        bow_metrics = ev.evaluate(bow_scores, test_labels, threshold)
        report.add("bow_logreg", setting.name, bow_metrics)

        for model, m in (("encoder", metrics), ("bow_logreg", bow_metrics)):
            metric_rows.append(
                {
                    "setting": setting.name,
                    "model": model,
                    **{k: v for k, v in m.as_dict().items() if k != "confusion"},
                    **m.confusion,
                }
            )

        n_reports = cfg["evaluate"]["attention_patients"]
        if n_reports:
            cases = [p for p in test_patients if p.label == 1]
            controls = [p for p in test_patients if p.label == 0]
            chosen = (cases + controls)[:n_reports]
            terms = cfg["evaluate"]["highlight_terms"] or None
            pid_texts = dict(zip([p.patient_id for p in patients], texts))
            for patient in chosen:
                attributions = [
                    attn.attribute_section(
                        params, sec, vocab, f"section {j}", enc_cfg.max_len
                    )
                    for j, sec in enumerate(pid_texts[patient.patient_id].split("\n"))
                ]
                label_name = "case" if patient.label else "control"
                attn.export_attention_report(
                    os.path.join(
                        paths.eval_dir,
                        "attention",
                        f"{setting.name}_{patient.patient_id}.html",
                    ),
                    f"{patient.patient_id} ({label_name}, {setting.name})",
                    attributions,
                    highlight_terms=terms,
                )

    header = ["setting", "model", "auc", "f1", "precision", "recall",
              "tp", "fp", "fn", "tn"]
    lines = [",".join(header)]
    for row in metric_rows:
        lines.append(",".join(
            repr(row[k]) if isinstance(row[k], float) else str(row[k])
            for k in header
        ))
    with open(os.path.join(paths.eval_dir, "metrics.csv"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(paths.eval_dir, "comparison.csv"), "w", encoding="ascii") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(paths.eval_dir, "comparison.txt"), "w", encoding="ascii") as fh:
        fh.write(report.to_text())
    print(f"evaluate: wrote metrics for {len(metric_rows)} model/setting pairs "
          f"to {paths.eval_dir}")
    sys.stdout.write(report.to_text())


STAGES = {
    "synth": stage_synth,
    "cohort": stage_cohort,
    "preprocess": stage_preprocess,
    "vocab": stage_vocab,
    "pretrain": stage_pretrain,
    "finetune": stage_finetune,
    "evaluate": stage_evaluate,
}

PIPELINE_ORDER = list(STAGES)


def stage_pipeline(cfg: dict, paths: RunPaths) -> None:
    for name in PIPELINE_ORDER:
        STAGES[name](cfg, paths)


def load_config(path: str | None, seed_override: int | None) -> dict:
    raw: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise MissingArtifactError(path)
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if seed_override is not None:
        raw = dict(raw)
        raw["seed"] = seed_override
    return validate_config(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prognote",
        description="Progression-prediction pipeline over synthetic clinical notes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["pipeline"]:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        paths = RunPaths(args.out)
        os.makedirs(paths.root, exist_ok=True)
        _write_json(paths.resolved_config, cfg)
        if args.command == "pipeline":
            stage_pipeline(cfg, paths)
        else:
            STAGES[args.command](cfg, paths)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: missing artifact: {exc.path}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
