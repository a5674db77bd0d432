"""Exception hierarchy shared by every pipeline module"""

from typing import Optional


class FacError(Exception):
    """Base class for all accent-conversion pipeline errors"""

    title = 'Pipeline error'


class ValidationError(FacError, ValueError):
    """Input violates a documented invariant"""

    title = 'Validation failed'


class ManifestParseError(ValidationError):
    """A manifest line could not be parsed"""

    title = 'Malformed manifest'

    def __init__(self, line_number: int, message: str):
        super().__init__(f'line {line_number}: {message}')
        self.line_number = line_number


class DuplicateUtteranceError(ValidationError):
    """Two manifest records share one utterance_id"""

    title = 'Duplicate utterance'

    def __init__(self, utterance_id: str, line_number: Optional[int] = None):
        where = f' (line {line_number})' if line_number is not None else ''
        super().__init__(f'duplicate utterance_id "{utterance_id}"{where}')
        self.utterance_id = utterance_id


class ShapeError(ValidationError):
    """Array has the wrong number of frames or channels"""

    title = 'Shape mismatch'


class AnalysisWindowError(ValidationError):
    title = 'Input too short'

    def __init__(self, num_samples: int, window: int):
        super().__init__(
            f'input shorter than analysis window ({num_samples} < {window} samples)'
        )


class ReferenceNotFoundError(FacError, LookupError):
    """No L1 reference shares the L2 utterance's transcript"""

    title = 'Reference not found'

    def __init__(self, utterance_id: str):
        super().__init__(f'no parallel L1 reference for utterance "{utterance_id}"')
        self.utterance_id = utterance_id


class AmbiguousReferenceError(FacError):
    title = 'Ambiguous reference'

    def __init__(self, utterance_id: str, candidates):
        super().__init__(
            f'utterance "{utterance_id}" matches {len(candidates)} L1 references: '
            + ', '.join(candidates)
        )
        self.utterance_id = utterance_id
        self.candidates = list(candidates)


class ProviderError(FacError):
    """A pretrained-component provider failed; carries the call context"""

    title = 'Provider failure'

    def __init__(self, provider_id: str, message: str,
                 utterance_id: Optional[str] = None, branch: Optional[str] = None):
        context = []
        if branch:
            context.append(f'branch={branch}')
        if utterance_id:
            context.append(f'utterance={utterance_id}')
        suffix = f' [{", ".join(context)}]' if context else ''
        super().__init__(f'{provider_id}: {message}{suffix}')
        self.provider_id = provider_id
        self.utterance_id = utterance_id
        self.branch = branch


class ProviderStateError(FacError):
    title = 'Provider not initialized'


class CacheIntegrityError(FacError):
    title = 'Corrupt feature cache'


class ModelStateError(FacError):
    title = 'Model not ready'


class TrainingDivergenceError(FacError):
    """Loss became NaN/inf; the history up to the failure is attached"""

    title = 'Training diverged'

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class WiringError(FacError):
    """Utterances fed to the model branches violate the training/conversion wiring"""

    title = 'Invalid wiring'


class ConfigError(FacError):
    title = 'Invalid configuration'

    def __init__(self, field: str, message: str):
        super().__init__(f'{field}: {message}')
        self.field = field


class InputNotFoundError(FacError):
    """A manifest, audio file or checkpoint named on the command line does not exist"""

    title = 'Missing input'


class AudioReadError(ValidationError):
    """An audio file exists but cannot be decoded"""

    title = 'Unreadable audio'


class CheckpointError(ModelStateError):
    """A checkpoint directory exists but its files cannot be loaded"""

    title = 'Corrupt checkpoint'
