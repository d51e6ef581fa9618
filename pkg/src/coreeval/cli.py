"""Command-line entry point.

Subcommands: update, eval, report, sweep, kappa, capture-fixtures.
Configuration comes from a declarative JSON document plus flag
overrides (flags win). Exit codes: 0 success, 2 configuration error,
3 data alignment error, 4 missing run role, 5 agreement-matrix error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .datamodel import TaskKind, load_dataset, save_dataset
from .errors import (
    ConfigError,
    CoreEvalError,
    InputError,
    MatrixError,
    ReportError,
    ValidationError,
)
from .evaluation import (
    DEFAULT_FRACTIONS,
    EvalReport,
    PredictionRecord,
    RunManifest,
    SweepRun,
    contamination_report,
    evaluate_run,
    fleiss_kappa,
    load_agreement_csv,
    parse_prediction,
    proportion_sweep,
    render_delta_table,
    synthetic_sweep_runs,
)
from .gateway import Gateway, HTTPBackend, MockBackend, MockRule, ResponseCache
from .knowledge import (
    EntitySet,
    FixtureGdeltClient,
    LiveGdeltClient,
    TimeWindow,
    write_fixture,
)
from .pipeline import PipelineConfig, update_dataset
from .prompts import load_template_pack

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ROLE = 4
EXIT_MATRIX = 5


@dataclass
class RunConfig:
    task: TaskKind
    input_path: Path
    output_dir: Path
    window: TimeWindow
    split: str = "test"
    backend: dict | None = None
    gdelt: dict | None = None
    max_entities: int = 8
    max_records: int = 25
    max_triples: int = 5
    max_rounds: int = 3
    parallelism: int = 1
    template_pack: Path | None = None
    cache_dir: Path | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.input_path.is_file():
            raise ConfigError(f"input dataset not found: {self.input_path}")
        if self.template_pack is not None and not self.template_pack.is_dir():
            raise ConfigError(f"template pack not found: {self.template_pack}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}")
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _parse_date(value: str, name: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise ConfigError(f"{name} must be an ISO date (YYYY-MM-DD), got {value!r}")


def _build_run_config(args) -> RunConfig:
    cfg = _load_config_file(args.config)
    gdelt_cfg = dict(cfg.get("gdelt", {}))
    pipeline_cfg = dict(cfg.get("pipeline", {}))

    def pick(flag, key, default=None, section=None):
        if flag is not None:
            return flag
        source = section if section is not None else cfg
        return source.get(key, default)

    task_name = pick(args.task, "task")
    if not task_name:
        raise ConfigError("task is required (flag --task or config key 'task')")
    input_path = pick(args.input, "input")
    if not input_path:
        raise ConfigError("input is required (flag --input or config key 'input')")
    output_dir = pick(args.output_dir, "output_dir")
    if not output_dir:
        raise ConfigError("output_dir is required (flag --output-dir or config key 'output_dir')")

    t_start = pick(args.t_start, "t_start", section=gdelt_cfg)
    if not t_start:
        raise ConfigError("gdelt.t_start is required (the retrieval window start date)")
    t_end = pick(args.t_end, "t_end", section=gdelt_cfg)
    end_date = _parse_date(t_end, "t_end") if t_end else dt.date.today()
    try:
        window = TimeWindow(_parse_date(t_start, "t_start"), end_date)
    except ValidationError as exc:
        raise ConfigError(str(exc))

    template_pack = pick(args.template_pack, "template_pack")
    cache_dir = pick(args.cache_dir, "cache_dir")
    return RunConfig(
        task=TaskKind.from_name(task_name),
        input_path=Path(input_path),
        output_dir=Path(output_dir),
        window=window,
        split=pick(args.split, "split", "test"),
        backend=cfg.get("backend"),
        gdelt=gdelt_cfg,
        max_entities=int(pick(None, "max_entities", 8, pipeline_cfg)),
        max_records=int(pick(None, "max_records", 25, pipeline_cfg)),
        max_triples=int(pick(None, "max_triples", 5, pipeline_cfg)),
        max_rounds=int(pick(args.max_rounds, "max_rounds", 3, pipeline_cfg)),
        parallelism=int(pick(args.parallelism, "parallelism", 1, pipeline_cfg)),
        template_pack=Path(template_pack) if template_pack else None,
        cache_dir=Path(cache_dir) if cache_dir else None,
        seed=int(pick(args.seed, "seed", 0)),
    )


def _build_backend(spec: dict | None):
    if not spec or "provider" not in spec:
        raise ConfigError("backend.provider is required ('mock' or 'http')")
    provider = spec["provider"]
    if provider == "mock":
        script_path = spec.get("script")
        payload: dict = {}
        if script_path:
            try:
                with open(script_path, "r", encoding="utf-8") as fh:
                    payload = json.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"mock script not found: {script_path}")
            except json.JSONDecodeError as exc:
                raise ConfigError(f"mock script {script_path} is not valid JSON: {exc.msg}")
        rules = [
            MockRule(
                response=str(rule["response"]),
                template_id=rule.get("template_id"),
                contains=rule.get("contains"),
            )
            for rule in payload.get("rules", [])
        ]
        label_space = payload.get("label_space")
        return MockBackend(
            script=payload.get("script"),
            rules=rules,
            label_space=tuple(label_space) if label_space else None,
            seed=int(payload.get("seed", 0)),
            default=payload.get("default"),
        )
    if provider == "http":
        if not spec.get("base_url") or not spec.get("model"):
            raise ConfigError("http backend needs base_url and model")
        return HTTPBackend(
            base_url=spec["base_url"],
            model=spec["model"],
            style=spec.get("style", "proprietary"),
        )
    raise ConfigError(f"unknown backend provider {provider!r}")


def _build_gdelt(spec: dict | None):
    if not spec or "mode" not in spec:
        raise ConfigError("gdelt.mode is required ('fixture' or 'live')")
    mode = spec["mode"]
    if mode == "fixture":
        path = spec.get("path")
        if not path or not Path(path).exists():
            raise ConfigError(f"gdelt fixture path not found: {path}")
        return FixtureGdeltClient(path)
    if mode == "live":
        return LiveGdeltClient(endpoint=spec.get("endpoint", LiveGdeltClient().endpoint))
    raise ConfigError(f"unknown gdelt mode {mode!r}")


def cmd_update(args) -> int:
    config = _build_run_config(args)
    dataset = load_dataset(config.input_path, config.task, config.split)
    backend = _build_backend(config.backend)
    cache = ResponseCache(config.cache_dir) if config.cache_dir else None
    gateway = Gateway(backend, cache)
    gdelt_client = _build_gdelt(config.gdelt)
    pack = load_template_pack(config.template_pack)
    pipeline_config = PipelineConfig(
        window=config.window,
        max_entities=config.max_entities,
        max_records=config.max_records,
        max_triples=config.max_triples,
        max_rounds=config.max_rounds,
        parallelism=config.parallelism,
    )
    result = update_dataset(dataset, gateway, gdelt_client, pack, pipeline_config)

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(result.updated, out / "updated.jsonl")
    save_dataset(result.semantic, out / "semantic.jsonl")
    with open(out / "provenance.jsonl", "w", encoding="utf-8") as fh:
        for record in result.provenance:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(result.stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(result.stats, sort_keys=True))
    return EXIT_OK


def _load_predictions(path, task: TaskKind) -> list[PredictionRecord]:
    records: list[PredictionRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: malformed JSON on line {line_no}: {exc.msg}")
            try:
                raw = str(payload["raw_output"])
                records.append(
                    PredictionRecord(
                        sample_id=str(payload["sample_id"]),
                        template_id=str(payload["template_id"]),
                        raw_output=raw,
                        parsed_label=parse_prediction(raw, task),
                    )
                )
            except KeyError as exc:
                raise InputError(f"{path}: line {line_no} is missing field {exc}")
    return records


def cmd_eval(args) -> int:
    task = TaskKind.from_name(args.task)
    if not Path(args.gold).is_file():
        raise ConfigError(f"gold dataset not found: {args.gold}")
    if not Path(args.predictions).is_file():
        raise ConfigError(f"prediction file not found: {args.predictions}")
    gold = load_dataset(args.gold, task, args.split, variant=args.variant)
    predictions = _load_predictions(args.predictions, task)
    report = evaluate_run(predictions, gold)
    payload = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"averaged_f1={report.averaged_f1:.2f}")
    return EXIT_OK


def _load_runs(manifest_dir, need_predictions: bool = False):
    directory = Path(manifest_dir)
    if not directory.is_dir():
        raise ConfigError(f"manifest directory not found: {manifest_dir}")
    manifest_paths = sorted(directory.glob("*.manifest.json"))
    if not manifest_paths:
        raise ConfigError(f"no *.manifest.json files in {manifest_dir}")
    runs: list[SweepRun] = []
    for manifest_path in manifest_paths:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        manifest = RunManifest.from_json(payload)
        stem = manifest_path.name[: -len(".manifest.json")]
        report_ref = payload.get("report", f"{stem}.report.json")
        report_path = directory / report_ref
        if not report_path.is_file():
            raise ConfigError(f"run {stem!r} has no report file ({report_path})")
        with open(report_path, "r", encoding="utf-8") as fh:
            report = EvalReport.from_json(json.load(fh))
        predictions = None
        predictions_ref = payload.get("predictions", f"{stem}.predictions.jsonl")
        predictions_path = directory / predictions_ref
        if predictions_path.is_file():
            predictions = _load_predictions(predictions_path, manifest.task)
        elif need_predictions:
            log.debug("run %s has no prediction file", stem)
        runs.append(SweepRun(manifest=manifest, report=report, predictions=predictions))
    return runs


def cmd_report(args) -> int:
    runs = _load_runs(args.manifest_dir)
    report = contamination_report([(r.manifest, r.report) for r in runs])
    table = render_delta_table(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(table)
    print(table, end="")
    return EXIT_OK


def _parse_fractions(raw: str | None) -> list[float]:
    if not raw:
        return list(DEFAULT_FRACTIONS)
    try:
        fractions = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"fractions must be comma-separated numbers, got {raw!r}")
    if not fractions:
        raise ConfigError("fractions list is empty")
    return fractions


def cmd_sweep(args) -> int:
    fractions = _parse_fractions(args.fractions)
    gold = None
    if args.gold:
        task = TaskKind.from_name(args.task) if args.task else None
        if task is None:
            raise ConfigError("--task is required when --gold is given")
        gold = load_dataset(args.gold, task, args.split)
    if args.synthetic:
        if gold is None:
            raise ConfigError("--synthetic needs --gold and --task")
        runs = synthetic_sweep_runs(
            gold,
            fractions,
            base_accuracy=args.base_accuracy,
            seed=args.seed,
            train_gain=args.train_gain,
        )
    else:
        if not args.manifest_dir:
            raise ConfigError("either --manifest-dir or --synthetic is required")
        runs = _load_runs(args.manifest_dir, need_predictions=True)
    report = proportion_sweep(
        runs, fractions, seed=args.seed, gold=gold, parallelism=args.parallelism
    )
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    print(payload, end="")
    return EXIT_OK


def cmd_kappa(args) -> int:
    if not Path(args.matrix).is_file():
        raise MatrixError(f"matrix file not found: {args.matrix}")
    matrix = load_agreement_csv(args.matrix)
    value = fleiss_kappa(matrix)
    print(f"{value:.2f}")
    return EXIT_OK


def cmd_capture_fixtures(args) -> int:
    terms = [t.strip() for t in args.terms.split(",") if t.strip()]
    if not terms:
        raise ConfigError("--terms needs at least one query term")
    window = TimeWindow(_parse_date(args.t_start, "t_start"), _parse_date(args.t_end, "t_end"))
    client = LiveGdeltClient(fetch_limit=args.max_records)
    raw = client.fetch(EntitySet(entities=tuple(terms), source_sample="capture"), window)
    write_fixture(raw, args.out)
    print(f"captured {len(raw)} records -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coreeval",
        description="Update NLP classification datasets with fresh knowledge and "
        "measure contamination resistance.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress per-stage logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_update = sub.add_parser("update", help="run the dataset update pipeline")
    p_update.add_argument("--config", help="JSON run configuration")
    p_update.add_argument("--task")
    p_update.add_argument("--input")
    p_update.add_argument("--split")
    p_update.add_argument("--output-dir")
    p_update.add_argument("--t-start")
    p_update.add_argument("--t-end")
    p_update.add_argument("--seed", type=int)
    p_update.add_argument("--parallelism", type=int)
    p_update.add_argument("--max-rounds", type=int)
    p_update.add_argument("--template-pack")
    p_update.add_argument("--cache-dir")
    p_update.set_defaults(func=cmd_update)

    p_eval = sub.add_parser("eval", help="score a prediction file against gold")
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--task", required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--variant", default="original", choices=["original", "semantic", "updated"])
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="build the delta table from run manifests")
    p_report.add_argument("--manifest-dir", required=True)
    p_report.add_argument("--out")
    p_report.add_argument("--table")
    p_report.set_defaults(func=cmd_report)

    p_sweep = sub.add_parser("sweep", help="delta series across data proportions")
    p_sweep.add_argument("--manifest-dir")
    p_sweep.add_argument("--gold")
    p_sweep.add_argument("--task")
    p_sweep.add_argument("--split", default="test")
    p_sweep.add_argument("--fractions", help="comma-separated, default 0.2,0.4,0.6,0.8,1.0")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--parallelism", type=int, default=1)
    p_sweep.add_argument("--synthetic", action="store_true", help="use the memorizing model")
    p_sweep.add_argument("--base-accuracy", type=float, default=0.6)
    p_sweep.add_argument("--train-gain", type=float, default=0.5)
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_kappa = sub.add_parser("kappa", help="Fleiss' kappa from an agreement CSV")
    p_kappa.add_argument("matrix")
    p_kappa.set_defaults(func=cmd_kappa)

    p_capture = sub.add_parser(
        "capture-fixtures", help="record live GDELT responses into a fixture file"
    )
    p_capture.add_argument("--terms", required=True, help="comma-separated query terms")
    p_capture.add_argument("--t-start", required=True)
    p_capture.add_argument("--t-end", required=True)
    p_capture.add_argument("--max-records", type=int, default=250)
    p_capture.add_argument("--out", required=True)
    p_capture.set_defaults(func=cmd_capture_fixtures)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_ROLE
    except MatrixError as exc:
        print(f"matrix error: {exc}", file=sys.stderr)
        return EXIT_MATRIX
    except CoreEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
