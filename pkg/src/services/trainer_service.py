"""Trainer Service - Adam training loop with exponential decay, early stopping and grid searches"""

import copy
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch
from torch.optim.lr_scheduler import ExponentialLR
from torch.utils.data import DataLoader, Dataset

from src.errors import TrainingDivergenceError, ValidationError
from src.models.acoustic import AcousticExample, AcousticModelConfig, CombinedLossReport, LossWeights
from src.models.training import (
    AlphaCandidate,
    AlphaSelectionReport,
    EarlyStopState,
    EpochRecord,
    GridSearchSpace,
    HyperparameterCandidate,
    HyperparameterReport,
    OptimizerSpec,
    ScheduleSpec,
    TrainingHistory,
)
from src.models.utterance import DataSplits, UtteranceRecord
from src.services.acoustic_service import AcousticModel, combined_loss_tensor, forward
from src.services.evaluation_service import mean_channel_ppmc

logger = logging.getLogger(__name__)

CONTINUE = 'continue'
STOP = 'stop'
PREFERRED_ALPHA = 0.4
SCORE_TIE_TOLERANCE = 1e-12


class ExampleSource(Protocol):
    """Anything that turns corpus records into training examples (FeatureService does)"""

    def examples(self, records: List[UtteranceRecord]) -> List[AcousticExample]:
        ...


def lr_at_epoch(spec: OptimizerSpec, schedule: ScheduleSpec, epoch: int) -> float:
    """learning_rate * decay_factor ** epoch"""
    if epoch < 0:
        raise ValidationError(f'epoch must be >= 0, got {epoch}')
    return spec.learning_rate * schedule.decay_factor ** epoch


def early_stop_update(state: EarlyStopState, val_loss: float) -> Tuple[EarlyStopState, str]:
    """Advance the early-stopping state by one epoch

    Returns 'stop' exactly when the count of non-improving epochs exceeds patience.
    """
    if math.isnan(val_loss):
        raise TrainingDivergenceError(f'validation loss is NaN at epoch {state.epoch + 1}')
    epoch = state.epoch + 1
    if val_loss < state.best_val_loss:
        updated = EarlyStopState(val_loss, epoch, 0, state.patience, epoch)
    else:
        updated = EarlyStopState(state.best_val_loss, state.best_epoch,
                                 state.epochs_since_improvement + 1, state.patience, epoch)
    decision = STOP if updated.epochs_since_improvement > updated.patience else CONTINUE
    return updated, decision


class AcousticExampleDataset(Dataset):
    def __init__(self, examples: Sequence[AcousticExample]):
        self.examples = list(examples)

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, index):
        example = self.examples[index]
        return (
            torch.as_tensor(example.upstream.values, dtype=torch.float32),
            torch.as_tensor(example.ppg_target.values, dtype=torch.float32),
            torch.as_tensor(example.tv_target.values, dtype=torch.float32),
        )


def collate_examples(batch):
    """Stack a batch, cutting inputs and targets to the shortest item"""
    inputs, ppg, tv = zip(*batch)
    t_in = min(x.shape[0] for x in inputs)
    t_out = min(min(p.shape[0] for p in ppg), min(v.shape[0] for v in tv))
    return (
        torch.stack([x[:t_in] for x in inputs]),
        torch.stack([p[:t_out] for p in ppg]),
        torch.stack([v[:t_out] for v in tv]),
    )


class HistoryWriter:
    """Appends one JSON line per epoch"""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text('')

    def write(self, record: EpochRecord):
        with open(self.path, 'a') as f:
            f.write(json.dumps(record.to_dict()) + '\n')


def read_history(path) -> List[EpochRecord]:
    with open(path, 'r') as f:
        return [EpochRecord.from_dict(json.loads(line)) for line in f if line.strip()]


class AcousticTrainer:
    """Owns the acoustic model's parameters while training"""

    def __init__(self, source: Optional[ExampleSource] = None,
                 optimizer: Optional[OptimizerSpec] = None,
                 schedule: Optional[ScheduleSpec] = None,
                 patience: int = 6, max_epochs: int = 100, seed: int = 0,
                 num_workers: int = 0, history_writer: Optional[HistoryWriter] = None):
        self.source = source
        self.optimizer_spec = optimizer or OptimizerSpec()
        self.schedule = schedule or ScheduleSpec()
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed
        self.num_workers = num_workers
        self.history_writer = history_writer

    def with_optimizer(self, optimizer: OptimizerSpec) -> 'AcousticTrainer':
        clone = copy.copy(self)
        clone.optimizer_spec = optimizer
        clone.history_writer = None
        return clone

    def fit(self, model: AcousticModel, splits: DataSplits) -> Tuple[AcousticModel, TrainingHistory]:
        """Train on splits.train, early-stop on splits.dev"""
        if not splits.train or not splits.dev:
            raise ValidationError('training needs non-empty train and dev splits')
        if self.source is None:
            raise ValidationError('no example source configured for the trainer')
        return self.fit_examples(model, self.source.examples(splits.train), self.source.examples(splits.dev))

    def _loader(self, examples, shuffle: bool, generator=None) -> DataLoader:
        return DataLoader(
            AcousticExampleDataset(examples),
            batch_size=self.optimizer_spec.batch_size,
            shuffle=shuffle,
            generator=generator,
            collate_fn=collate_examples,
            num_workers=self.num_workers,
        )

    def fit_examples(self, model: AcousticModel, train: Sequence[AcousticExample],
                     dev: Sequence[AcousticExample]) -> Tuple[AcousticModel, TrainingHistory]:
        if not train or not dev:
            raise ValidationError('training needs non-empty train and dev example sets')
        if not model.initialized:
            model.initialize(self.seed)
        torch.manual_seed(self.seed)
        network = model.network
        weights = model.weights
        spec = self.optimizer_spec

        optimizer = torch.optim.Adam(network.parameters(), lr=spec.learning_rate,
                                     betas=spec.betas, eps=spec.eps, weight_decay=0.0)
        scheduler = ExponentialLR(optimizer, gamma=self.schedule.decay_factor)
        train_loader = self._loader(train, shuffle=True,
                                    generator=torch.Generator().manual_seed(self.seed))
        dev_loader = self._loader(dev, shuffle=False)

        history = TrainingHistory()
        state = EarlyStopState(patience=self.patience)
        best_parameters = copy.deepcopy(network.state_dict())
        logger.info('training alpha=%.2f on %d/%d examples, lr=%g, batch=%d',
                    weights.alpha, len(train), len(dev), spec.learning_rate, spec.batch_size)

        for epoch in range(self.max_epochs):
            lr = optimizer.param_groups[0]['lr']
            train_loss = self.train_epoch(network, optimizer, train_loader, weights)
            if not math.isfinite(train_loss):
                raise TrainingDivergenceError(f'training loss is {train_loss} at epoch {epoch}', history)
            report = self.evaluate(network, dev_loader, weights, epoch)
            record = EpochRecord(epoch, train_loss, report.combined, report.tv_loss, report.ppg_loss, lr)
            history.append(record)
            if self.history_writer is not None:
                self.history_writer.write(record)
            logger.info('epoch %d: train %.4f val %.4f (tv %.4f, ppg %.4f) lr %.3g',
                        epoch, train_loss, report.combined, report.tv_loss, report.ppg_loss, lr)

            try:
                state, decision = early_stop_update(state, report.combined)
            except TrainingDivergenceError as e:
                e.history = history
                raise
            if state.best_epoch == epoch:
                best_parameters = copy.deepcopy(network.state_dict())
            if decision == STOP:
                history.stopped_early = True
                logger.info('early stop at epoch %d; best epoch %d', epoch, state.best_epoch)
                break
            scheduler.step()

        network.load_state_dict(best_parameters)
        network.eval()
        history.best_epoch = state.best_epoch
        model.initialized = True
        model.metadata.update({
            'seed': self.seed,
            'best_epoch': state.best_epoch,
            'best_val_loss': state.best_val_loss,
            'epochs_run': len(history.epochs),
        })
        return model, history

    def train_epoch(self, network, optimizer, loader: DataLoader, weights: LossWeights) -> float:
        network.train()
        dtype = next(network.parameters()).dtype
        total, count = 0.0, 0
        for inputs, ppg_target, tv_target in loader:
            optimizer.zero_grad()
            ppg_logits, tv, _ = network(inputs.to(dtype))
            loss, _, _ = combined_loss_tensor(ppg_logits, tv, ppg_target.to(dtype), tv_target.to(dtype), weights)
            loss.backward()
            optimizer.step()
            total += loss.item() * inputs.shape[0]
            count += inputs.shape[0]
        return total / count

    def evaluate(self, network, loader: DataLoader, weights: LossWeights, epoch: int) -> CombinedLossReport:
        """Full pass over the dev set in evaluation mode"""
        network.eval()
        dtype = next(network.parameters()).dtype
        tv_total = ppg_total = 0.0
        count = 0
        with torch.no_grad():
            for inputs, ppg_target, tv_target in loader:
                ppg_logits, tv, _ = network(inputs.to(dtype))
                _, tv_loss, ppg_loss = combined_loss_tensor(ppg_logits, tv, ppg_target.to(dtype),
                                                            tv_target.to(dtype), weights)
                tv_total += tv_loss.item() * inputs.shape[0]
                ppg_total += ppg_loss.item() * inputs.shape[0]
                count += inputs.shape[0]
        return CombinedLossReport.from_parts(tv_total / count, ppg_total / count, weights)


def fit(model: AcousticModel, splits: DataSplits, source: ExampleSource,
        opt: Optional[OptimizerSpec] = None, schedule: Optional[ScheduleSpec] = None,
        patience: int = 6, seed: int = 0, max_epochs: int = 100) -> Tuple[AcousticModel, TrainingHistory]:
    trainer = AcousticTrainer(source, opt, schedule, patience=patience, max_epochs=max_epochs, seed=seed)
    return trainer.fit(model, splits)


def dev_metrics(model: AcousticModel, dev: Sequence[AcousticExample]) -> Tuple[float, float]:
    """(TV PPMC averaged over channels, PPG posterior RMSE) over the pooled dev frames"""
    tv_estimates, tv_targets, squared, frames = [], [], 0.0, 0
    for example in dev:
        output = forward(example.upstream, model)
        n = min(output.num_frames, example.tv_target.num_frames, example.ppg_target.num_frames)
        tv_estimates.append(output.tv_estimates.values[:n])
        tv_targets.append(example.tv_target.values[:n])
        posteriors = torch.softmax(torch.as_tensor(output.ppg_logits.values[:n], dtype=torch.float64), dim=-1)
        squared += float(((posteriors.numpy() - example.ppg_target.values[:n]) ** 2).mean(axis=1).sum())
        frames += n
    tv_ppmc = mean_channel_ppmc(np.concatenate(tv_estimates), np.concatenate(tv_targets))
    return tv_ppmc, float(np.sqrt(squared / frames))


def _min_max(values: List[float]) -> List[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


def select_alpha(candidates: List[AlphaCandidate], preferred: float = PREFERRED_ALPHA) -> AlphaSelectionReport:
    """Maximize normalized PPMC minus normalized RMSE; ties go to the alpha closest to preferred"""
    if not candidates:
        raise ValidationError('alpha grid is empty')
    ppmc_n = _min_max([c.tv_ppmc for c in candidates])
    rmse_n = _min_max([c.ppg_rmse for c in candidates])
    for candidate, p, r in zip(candidates, ppmc_n, rmse_n):
        candidate.score = p - r
    best = max(c.score for c in candidates)
    tied = [c for c in candidates if best - c.score <= SCORE_TIE_TOLERANCE]
    winner = min(tied, key=lambda c: (abs(c.alpha - preferred), c.alpha))
    return AlphaSelectionReport(candidates=candidates, selected_alpha=winner.alpha)


def grid_search_alpha(space: GridSearchSpace, train: Sequence[AcousticExample],
                      dev: Sequence[AcousticExample], trainer: AcousticTrainer,
                      config: AcousticModelConfig) -> AlphaSelectionReport:
    """Train one model per alpha with fixed optimizer settings and score it on dev"""
    if not space.alpha_grid:
        raise ValidationError('alpha grid is empty')
    candidates = []
    for alpha in space.alpha_grid:
        model = AcousticModel(config, LossWeights(alpha)).initialize(trainer.seed)
        trainer.with_optimizer(trainer.optimizer_spec).fit_examples(model, train, dev)
        tv_ppmc, ppg_rmse = dev_metrics(model, dev)
        logger.info('alpha %.2f: dev TV PPMC %.4f, PPG RMSE %.5f', alpha, tv_ppmc, ppg_rmse)
        candidates.append(AlphaCandidate(alpha, tv_ppmc, ppg_rmse))
    return select_alpha(candidates)


def grid_search_hyperparameters(space: GridSearchSpace, train: Sequence[AcousticExample],
                                dev: Sequence[AcousticExample], trainer: AcousticTrainer,
                                config: AcousticModelConfig, weights: LossWeights) -> HyperparameterReport:
    """Learning-rate x batch-size search; picks the lowest best validation loss

    Ties go to the smallest learning rate, then the smallest batch size.
    """
    candidates = []
    for lr in space.lr_grid:
        for batch_size in space.batch_grid:
            spec = OptimizerSpec(learning_rate=lr, batch_size=batch_size,
                                 betas=trainer.optimizer_spec.betas, eps=trainer.optimizer_spec.eps)
            model = AcousticModel(config, weights).initialize(trainer.seed)
            _, history = trainer.with_optimizer(spec).fit_examples(model, train, dev)
            candidates.append(HyperparameterCandidate(lr, batch_size, min(history.val_losses)))
    best = min(candidates, key=lambda c: (c.best_val_loss, c.learning_rate, c.batch_size))
    return HyperparameterReport(candidates, best.learning_rate, best.batch_size)
