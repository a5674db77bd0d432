"""Command-line entry point: fac {train-am, extract-bnf, train-synth, convert, eval}

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from src.config import PipelineConfig
from src.errors import ConfigError, FacError, InputNotFoundError, ValidationError
from src.models.command import CommandResult
from src.models.conversion import ConversionRequest
from src.models.evaluation import MetricRecord
from src.models.training import GridSearchSpace
from src.models.utterance import UtteranceRecord
from src.providers.base import create_provider
from src.services import (
    acoustic_service,
    corpus_service,
    evaluation_service,
    feature_cache,
    trainer_service,
)
from src.services.conversion_service import (
    BnfExtractor,
    ConversionPipeline,
    Synthesizer,
    SynthesizerTrainer,
    build_speaker_provider,
    encode_speaker,
)
from src.services.feature_service import FeatureService, compute_mel

logger = logging.getLogger('fac')

VARIANTS = ('ppg_only', 'tv_only', 'combined')
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='seed for every stochastic component')
    common.add_argument('--dry-run', action='store_true', help='validate and print the plan only')
    common.add_argument('--print-config', action='store_true', help='print the effective config and exit')
    common.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog='fac', description='Reference-based foreign accent conversion')
    commands = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    p = commands.add_parser('train-am', parents=[common], help='train the multi-task acoustic model')
    p.add_argument('--config', required=True)
    p.add_argument('--variant', choices=VARIANTS, default=None)
    p.add_argument('--manifest', default=None, help='overrides corpus.manifest')
    p.add_argument('--out', default=None, help='checkpoint directory')
    p.add_argument('--grid-search', choices=['alpha', 'hyperparameters'], default=None,
                   help='run a grid search on train/dev instead of a single training')

    p = commands.add_parser('extract-bnf', parents=[common], help='write bottleneck features for a manifest')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--config', default=None)

    p = commands.add_parser('train-synth', parents=[common], help='train prosody encoder + synthesizer')
    p.add_argument('--config', required=True)
    p.add_argument('--bnf-dir', required=True)
    p.add_argument('--manifest', default=None)
    p.add_argument('--out', default=None)

    p = commands.add_parser('convert', parents=[common], help='convert one L2 utterance')
    p.add_argument('--l2', required=True, help='L2 (non-native) audio')
    p.add_argument('--l1-ref', required=True, help='L1 reference audio with the same text')
    p.add_argument('--out', required=True)
    p.add_argument('--config', default=None)
    p.add_argument('--transcript', default='', help='shared transcript of both utterances')
    p.add_argument('--l2-speaker', default='L2', help='speaker label recorded in provenance')

    p = commands.add_parser('eval', parents=[common], help='objective evaluation reports')
    p.add_argument('kind', choices=['mcd', 'wer', 'centroid'])
    p.add_argument('--config', default=None)
    p.add_argument('--converted', help='manifest of converted audio (mcd, centroid)')
    p.add_argument('--reference', help='manifest of reference audio (mcd)')
    p.add_argument('--original', help='manifest of original L2 audio (centroid)')
    p.add_argument('--manifest', help='audio manifest with reference transcripts (wer)')
    p.add_argument('--order', type=int, default=13, help='mel-cepstral order (mcd)')
    p.add_argument('--out', default=None)
    return parser


def configure_logging(level: str):
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if getattr(args, 'config', None) else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, 'variant', None):
        config.variant = args.variant
    return config.validate()


def _existing(path, what: str) -> Path:
    if not path:
        raise InputNotFoundError(f'{what} is required')
    resolved = Path(path)
    if not resolved.exists():
        raise InputNotFoundError(f'{what} not found: {resolved}')
    return resolved


def _manifest_path(args, config: PipelineConfig) -> Path:
    return _existing(args.manifest or config.corpus.manifest, 'manifest')


def _output_dir(args, config: PipelineConfig, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(config.output_dir) / default_name


# Each command has a plan step (validation only, no writes) and a run step.

def plan_train_am(args, config) -> List[str]:
    manifest = _manifest_path(args, config)
    out = _output_dir(args, config, f'am-{config.variant}')
    steps = [
        f'load manifest {manifest}; hold out {", ".join(config.corpus.heldout_speakers)}',
        f'fit TV normalization on train split, segment to {config.corpus.segment_seconds} s',
    ]
    if args.grid_search == 'alpha':
        steps.append('grid search alpha over the default grid')
    elif args.grid_search == 'hyperparameters':
        steps.append('grid search learning rate x batch size')
    else:
        steps.append(f'train variant {config.variant} (lr {config.optimizer.learning_rate}, '
                     f'batch {config.optimizer.batch_size}, patience {config.patience}, seed {config.seed})')
    steps.append(f'write checkpoint to {out}')
    return steps


def run_train_am(args, config) -> Tuple[List[str], str]:
    records = corpus_service.load_manifest(_manifest_path(args, config))
    splits = corpus_service.build_splits(records, set(config.corpus.heldout_speakers))
    features = FeatureService.from_config(config)
    stats = features.fit_tv_stats(splits.train)
    out = _output_dir(args, config, f'am-{config.variant}')
    out.mkdir(parents=True, exist_ok=True)
    model_config, weights = acoustic_service.make_variant(config.variant, config.acoustic_model)

    if args.grid_search:
        trainer = trainer_service.AcousticTrainer(
            features, config.optimizer, config.schedule, patience=config.patience,
            max_epochs=config.max_epochs, seed=config.seed, num_workers=config.num_workers)
        train, dev = features.examples(splits.train), features.examples(splits.dev)
        space = GridSearchSpace()
        if args.grid_search == 'alpha':
            report = trainer_service.grid_search_alpha(space, train, dev, trainer, model_config)
            summary = f'selected alpha {report.selected_alpha}'
        else:
            report = trainer_service.grid_search_hyperparameters(
                space, train, dev, trainer, model_config, weights)
            summary = (f'selected lr {report.selected_learning_rate}, '
                       f'batch {report.selected_batch_size}')
        report_path = out / f'grid_search_{args.grid_search}.json'
        with open(report_path, 'w') as f:
            json.dump(report.to_dict(), f, indent=2)
        return [str(report_path)], summary

    history_path = out / 'history.jsonl'
    trainer = trainer_service.AcousticTrainer(
        features, config.optimizer, config.schedule, patience=config.patience,
        max_epochs=config.max_epochs, seed=config.seed, num_workers=config.num_workers,
        history_writer=trainer_service.HistoryWriter(history_path))
    model = acoustic_service.AcousticModel(model_config, weights).initialize(config.seed)
    model, history = trainer.fit(model, splits)
    acoustic_service.save_checkpoint(model, out, training={
        'variant': config.variant,
        'tv_stats': stats.to_dict(),
        'optimizer': config.optimizer.to_dict(),
        'schedule': config.schedule.to_dict(),
        'patience': config.patience,
    })
    artifacts = [str(out / acoustic_service.CONFIG_FILE), str(out / acoustic_service.PARAMETERS_FILE),
                 str(history_path)]
    best = history.epochs[history.best_epoch]
    return artifacts, f'best epoch {history.best_epoch}, val loss {best.val_loss:.4f}'


def plan_extract_bnf(args, config) -> List[str]:
    checkpoint = _existing(args.checkpoint, 'checkpoint')
    manifest = _existing(args.manifest, 'manifest')
    return [f'load acoustic model {checkpoint}',
            f'extract BNFs for every record of {manifest}',
            f'write {feature_cache.CACHE_SUFFIX} files to {args.out}']


def run_extract_bnf(args, config) -> Tuple[List[str], str]:
    model = acoustic_service.load_checkpoint(args.checkpoint)
    features = FeatureService.from_config(config)
    records = corpus_service.load_manifest(args.manifest)
    artifacts = []
    for record in records:
        bnf = acoustic_service.extract_bnf(features.upstream(record), model)
        path = Path(args.out) / f'{record.utterance_id}{feature_cache.CACHE_SUFFIX}'
        feature_cache.write_feature_cache(bnf.values, path, provider_id='acoustic-model')
        artifacts += [str(path), str(feature_cache.sidecar_path(path))]
    return artifacts, f'extracted BNFs for {len(records)} utterances'


def plan_train_synth(args, config) -> List[str]:
    manifest = _manifest_path(args, config)
    out = _output_dir(args, config, 'synthesizer')
    return [f'load manifest {manifest}; sample (A, C) same-speaker pairs each epoch',
            f'BNFs from {args.bnf_dir} (acoustic model {config.checkpoints.acoustic_model or "none"} for misses)',
            f'train prosody encoder + synthesizer for up to {config.max_epochs} epochs, seed {config.seed}',
            f'write checkpoint to {out}']


def run_train_synth(args, config) -> Tuple[List[str], str]:
    records = corpus_service.load_manifest(_manifest_path(args, config))
    splits = corpus_service.build_splits(records, set(config.corpus.heldout_speakers))
    features = FeatureService.from_config(config)
    if config.checkpoints.acoustic_model:
        acoustic_model = acoustic_service.load_checkpoint(config.checkpoints.acoustic_model)
    else:
        acoustic_model = acoustic_service.AcousticModel(config.acoustic_model).initialize(config.seed)
    trainer = SynthesizerTrainer(
        Synthesizer(config.synthesizer, seed=config.seed),
        BnfExtractor(features, acoustic_model, bnf_dir=args.bnf_dir),
        build_speaker_provider(config),
        features,
        optimizer=config.optimizer,
        schedule=config.schedule,
        seed=config.seed,
        patience=config.patience,
        max_epochs=config.max_epochs,
    )
    history = trainer.fit(splits.train, splits.dev)
    out = _output_dir(args, config, 'synthesizer')
    trainer.synthesizer.save_checkpoint(out, training={'bnf_dir': args.bnf_dir})
    history_path = out / 'history.jsonl'
    with open(history_path, 'w') as f:
        for entry in history:
            f.write(json.dumps(entry) + '\n')
    artifacts = [str(out / 'config.json'), str(out / 'parameters.pt'), str(history_path)]
    return artifacts, f'trained {len(history)} epochs'


def plan_convert(args, config) -> List[str]:
    l2 = _existing(args.l2, 'L2 audio')
    l1 = _existing(args.l1_ref, 'L1 reference audio')
    return [f'BNFs from {l1}',
            f'prosody and speaker embeddings from {l2}',
            f'decode up to {config.synthesizer.max_decode_frames} frames, vocode with '
            f'{config.providers["vocoder"].id}',
            f'write {args.out} and its provenance sidecar']


def run_convert(args, config) -> Tuple[List[str], str]:
    l2 = corpus_service.record_for_audio(args.l2, args.l2_speaker, args.transcript)
    l1 = corpus_service.record_for_audio(args.l1_ref, config.corpus.l1_speaker, args.transcript)
    pipeline = ConversionPipeline.from_config(config)
    result = pipeline.convert(ConversionRequest(l2, l1, args.out))
    summary = f'{result.mel.num_frames} frames, {result.waveform.duration:.2f} s'
    if result.truncated:
        summary += ' (decoding truncated)'
    return result.artifacts, summary


def plan_eval(args, config) -> List[str]:
    if args.kind == 'mcd':
        inputs = [_existing(args.converted, '--converted manifest'), _existing(args.reference, '--reference manifest')]
    elif args.kind == 'wer':
        inputs = [_existing(args.manifest, '--manifest')]
    else:
        inputs = [_existing(args.original, '--original manifest'), _existing(args.converted, '--converted manifest')]
    out = _output_dir(args, config, f'eval-{args.kind}')
    return [f'{args.kind} over {", ".join(str(p) for p in inputs)}', f'write records and summary to {out}']


def _mel(record: UtteranceRecord, config: PipelineConfig):
    return compute_mel(corpus_service.load_waveform(record), config.mel)


def _eval_mcd(args, config) -> Tuple[List[MetricRecord], dict]:
    converted = corpus_service.load_manifest(args.converted)
    reference = {r.utterance_id: r for r in corpus_service.load_manifest(args.reference)}
    records = []
    for record in converted:
        if record.utterance_id not in reference:
            logger.warning('no reference for %s; skipped', record.utterance_id)
            continue
        result = evaluation_service.mcd(_mel(record, config), _mel(reference[record.utterance_id], config),
                                        args.order)
        records.append(MetricRecord(record.utterance_id, record.speaker_id, 'mcd', result.mcd_db))
    if not records:
        raise ValidationError('no converted utterance has a reference with the same utterance_id')
    return records, {}


def _eval_wer(args, config) -> Tuple[List[MetricRecord], dict]:
    manifest = corpus_service.load_manifest(args.manifest)
    spec = config.providers['transcriber']
    transcriber = create_provider('transcriber', spec.id, checkpoint=spec.checkpoint, **spec.options)
    items = [(corpus_service.load_waveform(r), r) for r in manifest]
    hypotheses = evaluation_service.transcribe_batch(items, transcriber)
    records = [
        MetricRecord(r.utterance_id, r.speaker_id, 'wer', evaluation_service.wer(r.transcript, h).wer_percent)
        for r, h in zip(manifest, hypotheses)
    ]
    return records, {}


def _eval_centroid(args, config) -> Tuple[List[MetricRecord], dict]:
    provider = build_speaker_provider(config)
    embeddings = defaultdict(list)
    for condition, path in (('original', args.original), ('converted', args.converted)):
        for record in corpus_service.load_manifest(path):
            wave = corpus_service.load_waveform(record)
            source = compute_mel(wave, config.mel) if provider.accepts == 'mel' else wave
            embeddings[(record.speaker_id, condition)].append(encode_speaker(source, provider, record))
    report = evaluation_service.centroid_report(dict(embeddings))
    out = _output_dir(args, config, 'eval-centroid')
    exported = evaluation_service.export_embeddings(embeddings, out / 'embeddings')
    records = [MetricRecord(speaker, speaker, 'centroid_distance', d) for speaker, d in report.distances.items()]
    return records, {'mean': report.mean, 'std': report.std, 'exported': [str(p) for p in exported]}


EVALUATORS: Dict[str, Callable] = {'mcd': _eval_mcd, 'wer': _eval_wer, 'centroid': _eval_centroid}


def run_eval(args, config) -> Tuple[List[str], str]:
    return eval_subcommand(args.kind, args, config)


def eval_subcommand(kind: str, args, config) -> Tuple[List[str], str]:
    """Per-speaker + Average report for one metric"""
    records, extra = EVALUATORS[kind](args, config)
    if not records:
        raise ValidationError(f'no {kind} records to summarize; the input manifests are empty')
    out = _output_dir(args, config, f'eval-{kind}')
    records_path = evaluation_service.write_metric_records(records, out / f'{kind}_records.jsonl')
    summary_path = evaluation_service.write_summary_table(records, out / f'{kind}_summary.json', kind,
                                                          extra=extra or None)
    rows = evaluation_service.summarize(records)
    average = rows[-1]['value']
    artifacts = [str(records_path), str(summary_path)] + list(extra.get('exported', []))
    summary = f'{kind}: Average {average:.4f} over {len(records)} records'
    if kind == 'centroid':
        summary = f'centroid distance {extra["mean"]:.4f} +/- {extra["std"]:.4f}'
    return artifacts, summary


COMMANDS = {
    'train-am': (plan_train_am, run_train_am),
    'extract-bnf': (plan_extract_bnf, run_extract_bnf),
    'train-synth': (plan_train_synth, run_train_synth),
    'convert': (plan_convert, run_convert),
    'eval': (plan_eval, run_eval),
}


def run(argv: Optional[List[str]] = None) -> CommandResult:
    """Parse argv, validate config, then dry-run or execute one subcommand"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else EXIT_USAGE
        return CommandResult(exit_code=code, summary='usage' if code else 'help')

    configure_logging(args.log_level)
    plan_step, run_step = COMMANDS[args.command]
    try:
        config = load_config(args)
        if args.print_config:
            print(json.dumps(config.to_dict(), indent=2))
            return CommandResult(EXIT_OK, [], 'config printed')
        plan = plan_step(args, config)
        if args.dry_run:
            print(f'fac {args.command}: execution plan')
            for number, step in enumerate(plan, start=1):
                print(f'  {number}. {step}')
            return CommandResult(EXIT_OK, [], 'dry run')
        artifacts, summary = run_step(args, config)
    except (ConfigError, InputNotFoundError) as e:
        print(f'error: {e}', file=sys.stderr)
        parser.print_usage(sys.stderr)
        return CommandResult(EXIT_USAGE, [], str(e))
    except (FacError, FileNotFoundError) as e:
        logger.error('%s failed: %s', args.command, e)
        print(f'error: {getattr(e, "title", type(e).__name__)}: {e}', file=sys.stderr)
        return CommandResult(EXIT_RUNTIME, [], str(e))

    print(f'fac {args.command}: {summary}')
    for artifact in artifacts:
        print(f'  wrote {artifact}')
    return CommandResult(EXIT_OK, artifacts, summary)


def main(argv: Optional[List[str]] = None) -> int:
    return run(argv).exit_code


if __name__ == '__main__':
    sys.exit(main())
