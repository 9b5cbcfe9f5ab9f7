"""Command-line interface: ``tsnerisk {synth,train,score,evaluate,compare,plot}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or schema
error, 3 numeric failure during training or evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import render
from .baselines import (
    KINDS,
    GridSearchSpec,
    compare_spaces,
    format_comparison_csv,
    format_comparison_text,
)
from .dataset import (
    ConfigError,
    Normalizer,
    ParseError,
    SchemaError,
    SyntheticConfig,
    claims_of,
    encode_features,
    format_contracts,
    generate_synthetic,
    parse_contracts,
    split,
)
from .metrics import DEFAULT_BOUNDARIES
from .pipeline import ArtifactError, PipelineConfig, RiskPipeline, StageError, lineage_hash
from .tsne import run_tsne

log = logging.getLogger("tsnerisk")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MIN_TRAIN_ROWS = 100


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


# -- io helpers ---------------------------------------------------------------

def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _read_json_config(path) -> dict:
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a JSON object")
    return data


def _read_records(path) -> list:
    text = _read_text(path)
    if not text.strip():
        return []
    return parse_contracts(text)


def _load_artifact(path) -> RiskPipeline:
    return RiskPipeline.loads(_read_text(path))


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _write(path: Path, content) -> None:
    if isinstance(content, bytes):
        path.write_bytes(content)
    else:
        path.write_text(content)
    log.info("wrote %s", path)


def _fnum(v: float) -> str:
    return repr(float(v))


def _points_csv(points, names=("y1", "y2")) -> str:
    lines = [",".join(names)]
    lines += [f"{_fnum(a)},{_fnum(b)}" for a, b in np.asarray(points).reshape(-1, 2)]
    return "\n".join(lines) + "\n"


def _surface_exports(out: Path, surface, prefix: str, title: str, marks=None) -> None:
    _write(out / f"{prefix}.pgm", render.pgm_bytes(surface.grid))
    _write(out / f"{prefix}.svg", render.surface_svg(surface, title, marks))


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        cfg = SyntheticConfig.from_json(_read_text(args.config)) if args.config else SyntheticConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.n is not None:
            cfg.n_contracts = args.n
        records, clusters = generate_synthetic(cfg)
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"synthetic config: {exc}") from None
    out = _out_dir(args.out)
    _write(out / "portfolio.csv", format_contracts(records))
    sidecar = ["row,cluster"] + [f"{i},{int(c)}" for i, c in enumerate(clusters)]
    _write(out / "portfolio_clusters.csv", "\n".join(sidecar) + "\n")
    claims = claims_of(records)
    print(f"contracts: {len(records)}")
    print(f"claim ratio: {100 * claims.mean():.2f}%")
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.from_dict(_read_json_config(args.config)) if args.config \
            else PipelineConfig()
    except (ValueError, TypeError) as exc:
        raise UsageError(f"pipeline config: {exc}") from None
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.perplexity is not None:
        cfg = replace(cfg, tsne=replace(cfg.tsne, perplexity=args.perplexity))
    return cfg


def _perplexity_sweep(args, cfg: PipelineConfig, x, claims, out: Path) -> int:
    for value in args.perplexity_sweep:
        tcfg = replace(cfg.tsne, perplexity=value)
        try:
            tcfg.validate(x.shape[0])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        emb = run_tsne(x, tcfg)
        name = f"sweep_perplexity_{value:g}"
        _write(out / f"{name}.svg",
               render.scatter_svg(emb.y, claims, title=f"t-SNE, perplexity {value:g}"))
        _write(out / f"{name}.csv", _points_csv(emb.y))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _pipeline_config(args)
    if not 0 < args.train_fraction < 1:
        raise UsageError("--train-fraction must lie in (0, 1)")
    records = _read_records(args.data)
    if len(records) < MIN_TRAIN_ROWS:
        raise DataError(f"need at least {MIN_TRAIN_ROWS} contracts to train, got {len(records)}")
    seed = cfg.tsne.seed if args.seed is None else args.seed
    parts = split(len(records), args.train_fraction, seed)
    train = [records[i] for i in parts.train_indices]
    test = [records[i] for i in parts.test_indices]
    out = _out_dir(args.out)
    if args.perplexity_sweep:
        x = Normalizer().fit_transform(encode_features(train))
        return _perplexity_sweep(args, cfg, x, claims_of(train), out)
    try:
        cfg.tsne.validate(len(train))
        cfg.nn_tsne.validate()
        cfg.nn_risk.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    split_info = {
        "n_rows": len(records),
        "train_fraction": args.train_fraction,
        "seed": seed,
        "train": parts.train_indices.tolist(),
        "test": parts.test_indices.tolist(),
    }
    pipe = RiskPipeline(cfg).fit(train, split_info=split_info)
    kl = pipe.kl_history_
    for it in range(0, kl.size, 50):
        log.info("t-SNE iteration %4d  KL %.6f", it, kl[it])
    log.info("t-SNE final KL %.6f, sigma warnings %d", kl[-1], pipe.n_sigma_warnings_)

    _write(out / "artifact.json", pipe.dumps())
    _write(out / "train.csv", format_contracts(train))
    _write(out / "test.csv", format_contracts(test))
    _write(out / "embedding.csv", _points_csv(pipe.embedding_))
    trace = ["iteration,kl"] + [f"{i},{_fnum(v)}" for i, v in enumerate(kl)]
    _write(out / "kl_trace.csv", "\n".join(trace) + "\n")
    print(f"trained on {len(train)} contracts, {len(test)} held out; artifact {out / 'artifact.json'}")
    return EXIT_OK


def cmd_score(args) -> int:
    pipe = _load_artifact(args.artifact)
    records = _read_records(args.data)
    out = _out_dir(args.out)
    lines = ["row,y1,y2,risk,status"]
    n_out = 0
    if records:
        coords = pipe.transform(records)
        scores = pipe.surface_.score(coords)
        for i, ((a, b), s) in enumerate(zip(coords, scores)):
            if np.isnan(s):
                n_out += 1
                lines.append(f"{i},{_fnum(a)},{_fnum(b)},,out_of_surface")
            else:
                lines.append(f"{i},{_fnum(a)},{_fnum(b)},{_fnum(s)},ok")
    _write(out / "scored.csv", "\n".join(lines) + "\n")
    print(f"retained: {len(records) - n_out}")
    print(f"out_of_surface: {n_out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pipe = _load_artifact(args.artifact)
    records = _read_records(args.data)
    if not records:
        raise DataError("no contracts to evaluate")
    boundaries = args.groups if args.groups is not None else DEFAULT_BOUNDARIES
    try:
        report = pipe.evaluate(records, insurer=args.insurer, boundaries=boundaries)
    except SchemaError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "boundaries" in msg:
            raise UsageError(msg) from None
        if "undefined correlation" in msg or "degenerate" in msg:
            raise FloatingPointError(msg) from None
        raise DataError(msg) from None
    out = _out_dir(args.out)
    _write(out / "report.json", report.to_json())
    _write(out / "report.txt", report.to_text())
    _write(out / "thresholds.csv", report.ours.threshold_curve.to_csv())
    if args.insurer:
        _write(out / "insurer_thresholds.csv", report.insurer.threshold_curve.to_csv())
        if pipe.insurer_surface_ is not None:
            _surface_exports(out, pipe.insurer_surface_, "insurer_surface", "Insurer risk surface")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _compare_data(args, pipe: RiskPipeline):
    """Training and test records for ``compare``.

    With ``--test`` the data file is the training set. Otherwise it must be
    the full file the artifact was trained from, split as recorded.
    """
    records = _read_records(args.data)
    if args.test:
        return records, _read_records(args.test)
    info = pipe.split_
    if info is None:
        raise UsageError("artifact has no stored split; pass the test file with --test")
    if len(records) != info["n_rows"]:
        raise DataError(f"data has {len(records)} rows but the artifact was trained on a "
                        f"{info['n_rows']}-row file; pass --test for separate files")
    return [records[i] for i in info["train"]], [records[i] for i in info["test"]]


def cmd_compare(args) -> int:
    pipe = _load_artifact(args.artifact)
    kinds = args.models or list(KINDS)
    unknown = [k for k in kinds if k not in KINDS]
    if unknown:
        raise UsageError(f"unknown model kind(s): {', '.join(unknown)}; "
                         f"choose from {', '.join(KINDS)}")
    spec = GridSearchSpec()
    if args.config:
        grids = _read_json_config(args.config)
        bad = [k for k in grids if k not in spec.grids]
        if bad:
            raise UsageError(f"grid config has unknown model kind(s): {', '.join(bad)}")
        spec.grids.update(grids)
    if args.seed is not None:
        spec.seed = args.seed
    train, test = _compare_data(args, pipe)
    if not train or not test:
        raise DataError("compare needs non-empty training and test sets")
    x_train = pipe.normalizer_.transform(encode_features(train))
    if not args.test and lineage_hash(x_train) != pipe.lineage_:
        raise DataError("training rows do not match the artifact's training data")
    x_test = pipe.normalizer_.transform(encode_features(test))
    tables = compare_spaces(x_train, claims_of(train), x_test, claims_of(test),
                            pipe.nn_tsne_, kinds, spec)
    out = _out_dir(args.out)
    _write(out / "comparison.csv", format_comparison_csv(tables))
    text = format_comparison_text(tables)
    _write(out / "comparison.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    pipe = _load_artifact(args.artifact)
    marks = None
    if args.mark:
        if args.data:
            records = _read_records(args.data)
            n = len(records)
        else:
            records, n = None, pipe.train_coords_.shape[0]
        bad = [i for i in args.mark if not 0 <= i < n]
        if bad:
            raise DataError(f"unknown contract id(s): {', '.join(map(str, bad))} "
                            f"(valid ids are 0..{n - 1})")
        if records is not None:
            coords = pipe.transform([records[i] for i in args.mark])
        else:
            coords = pipe.train_coords_[args.mark]
        marks = [(str(i), float(a), float(b)) for i, (a, b) in zip(args.mark, coords)]
    out = _out_dir(args.out)
    _surface_exports(out, pipe.surface_, "surface", "Risk surface", marks)
    _write(out / "scatter.svg",
           render.scatter_svg(pipe.embedding_, pipe.train_claims_, "t-SNE embedding"))
    if pipe.insurer_surface_ is not None:
        _surface_exports(out, pipe.insurer_surface_, "insurer_surface", "Insurer risk surface",
                         marks)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="tsnerisk", description="t-SNE based insurance risk surfaces")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic portfolio")
    p.add_argument("--n", type=int, default=None, help="number of contracts")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the pipeline on a CSV portfolio")
    p.add_argument("data")
    p.add_argument("--perplexity", type=float, default=None)
    p.add_argument("--perplexity-sweep", type=_float_list, default=None,
                   help="comma-separated perplexities; writes one scatter per value and stops")
    p.add_argument("--train-fraction", type=float, default=2 / 3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score contracts with a trained artifact")
    p.add_argument("artifact")
    p.add_argument("data")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate scores against claims")
    p.add_argument("artifact")
    p.add_argument("data")
    p.add_argument("--insurer", action="store_true",
                   help="compare with premium / vehicle value risk")
    p.add_argument("--groups", type=_float_list, default=None,
                   help="risk group boundaries, e.g. 0.3,0.5")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="baseline models in 2D and 14D")
    p.add_argument("artifact")
    p.add_argument("data")
    p.add_argument("--test", default=None, help="separate test file; DATA is then the training set")
    p.add_argument("--models", type=_str_list, default=None,
                   help=f"comma-separated subset of {','.join(KINDS)}")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", parents=[common], help="export surfaces and scatters")
    p.add_argument("artifact")
    p.add_argument("--data", default=None, help="file the --mark ids refer to (default: training set)")
    p.add_argument("--mark", type=_int_list, default=None, help="comma-separated row ids")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, ParseError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
