"""Command-line front end.

Documented order::

    clvc gen-corpus --out corpus
    clvc train-dae  --corpus corpus --out dae.cvcm
    clvc train-dnn  --corpus corpus --dae dae.cvcm --out mapper.cvcm
    clvc train-gmm  --corpus corpus --out gmm.cvcm
    clvc convert    --corpus corpus --system proposed --dae dae.cvcm --model mapper.cvcm --out converted
    clvc evaluate   --corpus corpus --system proposed --dae dae.cvcm --model mapper.cvcm --report report.json

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric/training error.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

from . import container
from .corpus import (
    ManifestEntry,
    generate_corpus,
    load_entries,
    make_speaker_specs,
    parallel_rendering,
    read_manifest,
    write_features,
    write_manifest,
)
from .dae import DaeTrainConfig, dae_build, dae_train
from .errors import ClvcError, ConfigError, DataError
from .evaluation import SpeakerClassifier, evaluate
from .mapper import MapperTrainConfig
from .pipeline import BASELINE, PROPOSED, VcSystem, convert, provenance, train_baseline, train_proposed

log = logging.getLogger("clvc")

EXIT_USAGE = 1


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _widths(text: str) -> List[int]:
    try:
        widths = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not widths or any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError(f"widths must be positive integers, got {text!r}")
    return widths


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


# ---------------------------------------------------------------------------
# helpers


def _check_writable(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _write_atomic(path: Path, data: bytes, force: bool) -> None:
    _check_writable(path, force)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj, force: bool) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    _write_atomic(path, text.encode("utf-8"), force)


def _config_echo(args, skip=("func", "force", "verbose")) -> dict:
    """Resolved options minus file locations, so artifacts do not depend on paths."""
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or key in _PATH_OPTIONS:
            continue
        out[key] = value
    return out


_PATH_OPTIONS = {"corpus", "manifest", "out", "dae", "model", "report", "table"}


def _run_log(args, **extra) -> dict:
    log_obj = {"command": args.command,
               "paths": {k: str(v) for k, v in sorted(vars(args).items()) if k in _PATH_OPTIONS and v is not None},
               "config": _config_echo(args)}
    log_obj.update(extra)
    return log_obj


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if args.corpus:
        return Path(args.corpus) / "manifest.tsv"
    raise UsageError("pass --corpus or --manifest")


def _select(entries: Sequence[ManifestEntry], patterns: str, split: Optional[str],
            exclude: Sequence[str] = ()) -> List[ManifestEntry]:
    pats = [p.strip() for p in patterns.split(",") if p.strip()]
    return [
        e for e in entries
        if any(fnmatch.fnmatchcase(e.speaker_id, p) for p in pats)
        and e.speaker_id not in exclude
        and (split is None or e.split == split)
    ]


def _load(args, patterns: str, split: Optional[str], exclude=()):
    mpath = _manifest_path(args)
    entries = _select(read_manifest(mpath), patterns, split, exclude)
    if not entries:
        raise DataError(f"no {split or ''} utterances match speakers {patterns!r} in {mpath}")
    utts = load_entries(entries, mpath.parent)
    if args.feature_dim is not None:
        bad = [u.utterance_id for u in utts if u.feature_dim != args.feature_dim]
        if bad:
            raise DataError(f"{len(bad)} utterances do not have --feature-dim {args.feature_dim}, e.g. {bad[0]}")
    return entries, utts


def _load_system(args) -> VcSystem:
    if args.model is None:
        raise UsageError("--model is required")
    if args.system == PROPOSED:
        if args.dae is None:
            raise UsageError("--dae is required for the proposed system")
        dae = container.load_model(args.dae, "dae")
        mapper = container.load_model(args.model, "mapper")
        return VcSystem.from_models(dae=dae, mapper=mapper)
    return VcSystem.from_models(gmm=container.load_model(args.model, "gmm"))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    _check_writable(out, args.force)
    m = args.feature_dim if args.feature_dim is not None else 40
    if m < 2 or m % 2:
        raise UsageError(f"--feature-dim must be an even number >= 2, got {m}")
    if args.phones < 2:
        raise UsageError("--phones must be at least 2")
    if args.vc_speakers < 2:
        raise UsageError("--vc-speakers must be at least 2 (one target, one source)")
    ids = [f"dae{i}" for i in range(args.dae_speakers)] + [f"vc{i}" for i in range(args.vc_speakers)]
    specs = make_speaker_specs(ids, m, seed=args.seed, noise_sigma=args.noise)
    corpus = generate_corpus(specs, args.phones, args.train_utts + args.test_utts, args.frames,
                             m, seed=args.seed, n_test=args.test_utts, jitter=args.jitter)

    # Build everything in a scratch directory next to the target, then swap it in.
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        entries = []
        for utt, split in zip(corpus.utterances, corpus.splits):
            rel = f"features/{utt.speaker_id}/{utt.utterance_id}.cvcf"
            (tmp / rel).parent.mkdir(parents=True, exist_ok=True)
            write_features(utt, tmp / rel)
            entries.append(ManifestEntry(utt.speaker_id, utt.utterance_id, rel, split))
        vc_ids = ids[args.dae_speakers:]
        for i, (utt, split) in enumerate(zip(corpus.utterances, corpus.splits)):
            if split != "test" or utt.speaker_id not in vc_ids:
                continue
            for other in vc_ids:
                if other == utt.speaker_id:
                    continue
                truth = parallel_rendering(corpus, i, corpus.specs[other])
                rel = f"truth/{other}/{utt.utterance_id}.cvcf"
                (tmp / rel).parent.mkdir(parents=True, exist_ok=True)
                write_features(truth, tmp / rel)
                entries.append(ManifestEntry(other, utt.utterance_id, rel, "truth"))
        write_manifest(entries, tmp / "manifest.tsv")
        speakers = [{"speaker_id": s.speaker_id, "role": "dae" if s.speaker_id.startswith("dae") else "vc",
                     "base_f0": s.base_f0, "f0_range": s.f0_range, "noise_sigma": s.noise_sigma,
                     "warp": s.warp.tolist(), "offset": s.offset.tolist()} for s in specs]
        (tmp / "speakers.json").write_text(json.dumps(speakers, indent=1, sort_keys=True) + "\n")
        (tmp / "run.log.json").write_text(json.dumps(_run_log(args, utterances=len(entries)),
                                                     indent=2, sort_keys=True) + "\n")
        if out.exists():
            shutil.rmtree(out) if out.is_dir() else out.unlink()
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    print(f"wrote {len(entries)} utterances to {out}")
    return 0


def cmd_train_dae(args) -> int:
    out = Path(args.out)
    _check_writable(out, args.force)
    _, utts = _load(args, args.speakers, "train")
    m = utts[0].feature_dim
    model = dae_build(m, seed=args.seed, hidden_widths=args.hidden_widths,
                      bottleneck_dim=args.bottleneck, tied=not args.untied)
    config = DaeTrainConfig(learning_rate=args.lr, patience=args.patience,
                            batch_size=args.batch_size, max_epochs=args.epochs,
                            validation_fraction=args.validation_fraction, seed=args.seed)
    model, trace = dae_train(model, utts, config)
    data = container.encode_model(model)
    _write_atomic(out, data, args.force)
    _write_json(Path(f"{out}.log.json"),
                _run_log(args, model_hash=data[-32:].hex(), trace=trace.to_dict()), True)
    print(f"autoencoder {model.widths} best epoch {trace.best_epoch}/{trace.epochs_run} -> {out}")
    return 0


def cmd_train_dnn(args) -> int:
    out = Path(args.out)
    _check_writable(out, args.force)
    dae = container.load_model(args.dae, "dae")
    _, utts = _load(args, args.target, "train")
    config = MapperTrainConfig(learning_rate=args.lr, epochs=args.epochs,
                               batch_size=args.batch_size, seed=args.seed,
                               hidden_widths=args.hidden_widths)
    system = train_proposed(dae, utts, config)
    data = container.encode_model(system.mapper)
    _write_atomic(out, data, args.force)
    _write_json(Path(f"{out}.log.json"),
                _run_log(args, model_hash=data[-32:].hex(), dae_hash=system.mapper.dae_hash,
                         loss_trace=system.train_trace), True)
    print(f"mapper {system.mapper.net.sizes} final loss {system.train_trace[-1]:.6g} -> {out}")
    return 0


def cmd_train_gmm(args) -> int:
    out = Path(args.out)
    _check_writable(out, args.force)
    _, utts = _load(args, args.target, "train")
    system = train_baseline(utts, args.components, seed=args.seed,
                            max_iters=args.max_iters, tol=args.tol)
    data = container.encode_model(system.gmm)
    _write_atomic(out, data, args.force)
    _write_json(Path(f"{out}.log.json"),
                _run_log(args, model_hash=data[-32:].hex(), log_likelihood_trace=system.train_trace), True)
    print(f"GMM with {args.components} components, {len(system.train_trace) - 1} EM iterations -> {out}")
    return 0


def cmd_convert(args) -> int:
    out = Path(args.out)
    _check_writable(out, args.force)
    system = _load_system(args)
    target = system.target_profile.speaker_id
    _, sources = _load(args, args.sources, args.split, exclude=(target,))
    converted = []
    for src in sources:
        conv = convert(system, src)
        rel = f"{src.speaker_id}/{src.utterance_id}.cvcf"
        converted.append((rel, conv, ManifestEntry(conv.speaker_id, conv.utterance_id, rel,
                                                   "converted", provenance(system, src))))
    if out.exists():
        shutil.rmtree(out) if out.is_dir() else out.unlink()
    for rel, conv, _ in converted:
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_features(conv, out / rel)
    write_manifest([e for _, _, e in converted], out / "manifest.tsv")
    _write_json(out / "run.log.json", _run_log(args, model_hashes=system.model_hashes(),
                                               utterances=len(converted)), True)
    print(f"converted {len(converted)} utterances to {target} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    report_path = Path(args.report)
    _check_writable(report_path, args.force)
    if args.table:
        _check_writable(Path(args.table), args.force)
    system = _load_system(args)
    target = system.target_profile.speaker_id
    entries, sources = _load(args, args.sources, args.split, exclude=(target,))
    truth_entries, truth = _load(args, target, "truth")
    by_id = {u.utterance_id: u for u in truth}
    missing = [s.utterance_id for s in sources if s.utterance_id not in by_id]
    if missing:
        raise DataError(f"no {target} truth rendering for {missing[0]} (and {len(missing) - 1} more)")
    aligned = [by_id[s.utterance_id] for s in sources]

    source_ids = sorted({s.speaker_id for s in sources})
    all_entries = read_manifest(_manifest_path(args))
    root = _manifest_path(args).parent
    corpora = {}
    for spk in [target] + source_ids:
        chosen = [e for e in all_entries if e.speaker_id == spk and e.split == "train"]
        if not chosen:
            raise DataError(f"no natural training utterances for classifier speaker {spk}")
        corpora[spk] = load_entries(chosen, root)
    classifier = SpeakerClassifier.fit(corpora, args.classifier_components, seed=args.seed)

    echo = _config_echo(args)
    report = evaluate(system, sources, aligned, classifier, skip_c0=not args.keep_c0, config=echo)
    report.reference = evaluate(None, sources, aligned, classifier, skip_c0=not args.keep_c0,
                                target_speaker_id=target, config=echo)
    _write_atomic(report_path, report.to_json().encode("utf-8"), args.force)
    if args.table:
        _write_atomic(Path(args.table), report.to_table().encode("utf-8"), args.force)
    _write_json(Path(f"{report_path}.log.json"), _run_log(args, model_hashes=system.model_hashes()), True)
    print(f"{report.system_kind}: MCD {report.mean_mcd:.3f} dB (unconverted {report.reference.mean_mcd:.3f}), "
          f"target accuracy {report.accuracy:.3f} (unconverted {report.reference.accuracy:.3f})")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="clvc", description="Cross-lingual voice conversion toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, corpus=True):
        if corpus:
            p.add_argument("--corpus", help="corpus directory holding manifest.tsv")
            p.add_argument("--manifest", help="manifest path (default: CORPUS/manifest.tsv)")
            p.add_argument("--feature-dim", type=_positive_int, default=None,
                           help="expected spectral dimension M (checked against the data)")
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("gen-corpus", formatter_class=fmt, help="generate a synthetic feature corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--feature-dim", type=int, default=40, help="spectral dimension M")
    p.add_argument("--phones", type=int, default=24, help="number of shared phone prototypes")
    p.add_argument("--dae-speakers", type=int, default=6, help="speakers reserved for autoencoder training")
    p.add_argument("--vc-speakers", type=int, default=4, help="target/source speakers for conversion")
    p.add_argument("--train-utts", type=_positive_int, default=40, help="training utterances per speaker")
    p.add_argument("--test-utts", type=int, default=10, help="test utterances per speaker")
    p.add_argument("--frames", type=_positive_int, default=100, help="frames per utterance")
    p.add_argument("--jitter", type=float, default=0.5, help="within-phone variation")
    p.add_argument("--noise", type=float, default=0.0, help="observation noise sigma")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-dae", formatter_class=fmt, help="train the multi-speaker autoencoder")
    common(p)
    p.add_argument("--speakers", default="dae*", help="comma-separated speaker id patterns")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--lr", type=float, default=0.001, help="RMSprop learning rate")
    p.add_argument("--patience", type=_positive_int, default=15, help="early-stopping patience (epochs)")
    p.add_argument("--epochs", type=_positive_int, default=200, help="maximum epochs")
    p.add_argument("--batch-size", type=_positive_int, default=64, help="mini-batch size")
    p.add_argument("--hidden-widths", type=_widths, default=[512, 512], help="encoder hidden widths")
    p.add_argument("--bottleneck", type=_positive_int, default=None, help="bottleneck width (default M/2)")
    p.add_argument("--validation-fraction", type=float, default=0.1, help="held-out utterance fraction")
    p.add_argument("--untied", action="store_true", help="give the decoder its own weights")
    p.set_defaults(func=cmd_train_dae)

    p = sub.add_parser("train-dnn", formatter_class=fmt, help="train the target mapping network")
    common(p)
    p.add_argument("--dae", required=True, help="trained autoencoder model file")
    p.add_argument("--target", default="vc0", help="target speaker id")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--lr", type=float, default=0.001, help="RMSprop learning rate")
    p.add_argument("--epochs", type=_positive_int, default=25, help="training epochs")
    p.add_argument("--batch-size", type=_positive_int, default=64, help="mini-batch size")
    p.add_argument("--hidden-widths", type=_widths, default=[50, 50], help="hidden layer widths")
    p.set_defaults(func=cmd_train_dnn)

    p = sub.add_parser("train-gmm", formatter_class=fmt, help="train the baseline GMM tokenizer")
    common(p)
    p.add_argument("--target", default="vc0", help="target speaker id")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--components", type=_positive_int, default=128, help="mixture components")
    p.add_argument("--max-iters", type=_positive_int, default=100, help="maximum EM iterations")
    p.add_argument("--tol", type=float, default=1e-6, help="relative log-likelihood tolerance")
    p.set_defaults(func=cmd_train_gmm)

    for name, func, helptext in (("convert", cmd_convert, "convert source utterances"),
                                 ("evaluate", cmd_evaluate, "objective evaluation report")):
        p = sub.add_parser(name, formatter_class=fmt, help=helptext)
        common(p)
        p.add_argument("--system", choices=[PROPOSED, BASELINE], default=PROPOSED, help="conversion system")
        p.add_argument("--dae", help="autoencoder model file (proposed system)")
        p.add_argument("--model", required=True, help="mapper or GMM model file")
        p.add_argument("--sources", default="vc*", help="source speaker id patterns (target excluded)")
        p.add_argument("--split", default="test", help="manifest split to convert")
        if name == "convert":
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--report", required=True, help="output report JSON")
            p.add_argument("--table", help="optional gnuplot table output")
            p.add_argument("--classifier-components", type=_positive_int, default=8,
                           help="GMM components per speaker in the classifier")
            p.add_argument("--keep-c0", action="store_true", help="include c0 in MCD")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ClvcError as exc:
        print(f"clvc {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"clvc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"clvc {args.command}: numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
