"""Unit and workflow tests for the conversion stage"""

import json
import logging

import numpy as np
import pytest
import torch

from src.errors import ProviderError, ShapeError, ValidationError, WiringError
from src.models.acoustic import BottleneckFeatures
from src.models.conversion import ConversionRequest, ProsodyEmbedding, SpeakerEmbedding, SynthesisResult
from src.models.features import FrameSequence, MelSpectrogram
from src.models.utterance import UtteranceRecord, Waveform
from src.providers.base import VocoderProvider, create_provider
from src.services import corpus_service, feature_cache
from src.services.acoustic_service import AcousticModel, parameter_checksum
from src.services.conversion_service import (
    AUTOREGRESSIVE,
    TEACHER_FORCED,
    BnfExtractor,
    ConversionPipeline,
    Synthesizer,
    SynthesizerTrainer,
    batch_convert,
    build_speaker_provider,
    build_vocoder,
    check_dims,
    check_training_pair,
    encode_prosody,
    encode_speaker,
    provenance_path,
    synthesize,
    vocode,
)
from src.services.feature_service import FeatureService, compute_mel


class BrokenVocoder(VocoderProvider):
    provider_id = 'test-broken'

    def _vocode(self, mel):
        raise RuntimeError('vocoder weights missing')


class MelAsBnf:
    """Feeds the reference's own log-mel in place of bottleneck features"""

    def __init__(self, features):
        self.features = features

    def extract(self, record, wave=None):
        return BottleneckFeatures(self.features.mel(record, wave), record.utterance_id)


class PassThroughSynthesizer:
    """Returns the content features unchanged as the output mel"""

    def encode_prosody(self, mel, utterance_id=None):
        return ProsodyEmbedding(np.zeros(4, dtype=np.float32), utterance_id)

    def synthesize(self, bnf, speaker, prosody, mode=AUTOREGRESSIVE, target_mel=None):
        mel = MelSpectrogram(np.asarray(bnf.values.values), 100.0)
        return SynthesisResult(mel, np.zeros(mel.num_frames), mel.num_frames - 1)


def by_id(corpus, utterance_id) -> UtteranceRecord:
    return next(r for r in corpus['records'] if r.utterance_id == utterance_id)


@pytest.fixture
def synthesizer(tiny_config):
    """Untrained tiny synthesizer"""
    return Synthesizer(tiny_config.synthesizer, seed=0)


@pytest.fixture
def bnf(tiny_config):
    """Random 30-frame BNF track at the tiny width"""
    values = np.random.default_rng(0).standard_normal((30, tiny_config.synthesizer.bnf_dim)).astype(np.float32)
    return BottleneckFeatures(FrameSequence(values, 100.0), 'BDL_a0000')


@pytest.fixture
def speaker(tiny_config):
    return SpeakerEmbedding(np.ones(tiny_config.synthesizer.speaker_dim, dtype=np.float32), 'NJS_a0000')


@pytest.fixture
def pipeline(tiny_config):
    """Pipeline wired from the tiny config with untrained models"""
    return ConversionPipeline.from_config(tiny_config, l1_speaker='BDL')


@pytest.fixture
def trainer(tiny_config):
    """Synthesizer trainer over a frozen, initialized acoustic model"""
    features = FeatureService.from_config(tiny_config)
    acoustic_model = AcousticModel(tiny_config.acoustic_model).initialize(0)
    return SynthesizerTrainer(
        Synthesizer(tiny_config.synthesizer, seed=0),
        BnfExtractor(features, acoustic_model),
        build_speaker_provider(tiny_config),
        features,
        optimizer=tiny_config.optimizer,
        max_epochs=2,
        seed=0,
    )


class TestEmbeddings:
    """Test cases for prosody and speaker vectors"""

    def test_prosody_is_fixed_length(self, synthesizer):
        """Test mels of different lengths give prosody vectors of one size"""
        short = compute_mel(Waveform(np.random.default_rng(0).standard_normal(3200).astype(np.float32), 16000))
        long = compute_mel(Waveform(np.random.default_rng(1).standard_normal(16000).astype(np.float32), 16000))
        assert encode_prosody(short, synthesizer).dim == encode_prosody(long, synthesizer).dim == 4

    def test_prosody_of_empty_mel(self, synthesizer):
        """Test an empty mel has no prosody"""
        with pytest.raises(ValidationError):
            encode_prosody(MelSpectrogram(np.zeros((0, 80), dtype=np.float32), 100.0), synthesizer)

    def test_speaker_embedding_dim(self, tiny_config, corpus):
        """Test the speaker encoder returns the configured width"""
        provider = build_speaker_provider(tiny_config)
        record = corpus['records'][0]
        embedding = encode_speaker(compute_mel(corpus_service.load_waveform(record)), provider, record)
        assert embedding.dim == 8
        assert embedding.source_utterance_id == record.utterance_id

    def test_hash_encoder_is_per_speaker(self, corpus):
        """Test the hash encoder gives one vector per speaker"""
        provider = create_provider('speaker', 'mock-hash', dim=8)
        a, b, c = by_id(corpus, 'ABA_a0000'), by_id(corpus, 'ABA_a0001'), by_id(corpus, 'SKA_a0000')
        mel = MelSpectrogram(np.zeros((5, 80), dtype=np.float32), 100.0)
        assert np.array_equal(encode_speaker(mel, provider, a).vector, encode_speaker(mel, provider, b).vector)
        assert not np.array_equal(encode_speaker(mel, provider, a).vector, encode_speaker(mel, provider, c).vector)


class TestSynthesis:
    """Test cases for teacher-forced and autoregressive decoding"""

    def test_seeded_construction_leaves_global_rng(self, tiny_config):
        """Test one seed gives one set of weights and the global torch RNG is untouched"""
        torch.manual_seed(123)
        expected = torch.rand(3)
        torch.manual_seed(123)
        first = Synthesizer(tiny_config.synthesizer, seed=4)
        assert torch.equal(torch.rand(3), expected)
        second = Synthesizer(tiny_config.synthesizer, seed=4)
        assert parameter_checksum(first.trainable_parameters()) == \
            parameter_checksum(second.trainable_parameters())
        other = Synthesizer(tiny_config.synthesizer, seed=5)
        assert parameter_checksum(first.trainable_parameters()) != \
            parameter_checksum(other.trainable_parameters())

    def test_teacher_forced_matches_target_length(self, synthesizer, bnf, speaker):
        """Test teacher forcing produces exactly the target's frame count"""
        prosody = encode_prosody(MelSpectrogram(np.zeros((20, 80), dtype=np.float32), 100.0), synthesizer)
        target = MelSpectrogram(np.random.default_rng(0).standard_normal((37, 80)).astype(np.float32), 100.0)
        result = synthesize(bnf, speaker, prosody, synthesizer, TEACHER_FORCED, target)
        assert result.mel.num_frames == 37
        assert result.stop_logits.shape == (37,)

    def test_teacher_forced_needs_target(self, synthesizer, bnf, speaker):
        """Test teacher forcing without a target is rejected"""
        prosody = encode_prosody(MelSpectrogram(np.zeros((20, 80), dtype=np.float32), 100.0), synthesizer)
        with pytest.raises(ValidationError):
            synthesize(bnf, speaker, prosody, synthesizer, TEACHER_FORCED)

    def test_stop_head_ends_decoding(self, synthesizer, bnf, speaker):
        """Test a stop head that always fires yields one frame"""
        with torch.no_grad():
            synthesizer.network.stop_out.weight.zero_()
            synthesizer.network.stop_out.bias.fill_(1e4)
        prosody = encode_prosody(MelSpectrogram(np.zeros((20, 80), dtype=np.float32), 100.0), synthesizer)
        result = synthesize(bnf, speaker, prosody, synthesizer, AUTOREGRESSIVE)
        assert result.stop_frame == 0
        assert result.mel.num_frames == 1
        assert not result.truncated

    def test_decoding_cap_truncates(self, synthesizer, bnf, speaker, caplog):
        """Test a stop head that never fires is cut at max_decode_frames with a warning"""
        with torch.no_grad():
            synthesizer.network.stop_out.weight.zero_()
            synthesizer.network.stop_out.bias.fill_(-1e4)
        prosody = encode_prosody(MelSpectrogram(np.zeros((20, 80), dtype=np.float32), 100.0), synthesizer)
        with caplog.at_level(logging.WARNING):
            result = synthesize(bnf, speaker, prosody, synthesizer, AUTOREGRESSIVE)
        assert result.truncated
        assert result.stop_frame is None
        assert result.mel.num_frames == 50
        assert 'max_decode_frames' in caplog.text

    def test_dimension_mismatch(self, synthesizer, bnf, tiny_config):
        """Test a speaker vector of the wrong width is rejected"""
        wrong = SpeakerEmbedding(np.ones(5, dtype=np.float32), 'x')
        with pytest.raises(ShapeError):
            check_dims(bnf, wrong, None, tiny_config.synthesizer)

    def test_zero_bnf_frames(self, speaker, tiny_config):
        """Test synthesis needs at least one BNF frame"""
        empty = BottleneckFeatures(FrameSequence(np.zeros((0, 8), dtype=np.float32), 100.0))
        with pytest.raises(ValidationError):
            check_dims(empty, speaker, None, tiny_config.synthesizer)

    def test_unknown_mode(self, synthesizer, bnf, speaker):
        """Test an unknown decoding mode is rejected"""
        prosody = encode_prosody(MelSpectrogram(np.zeros((20, 80), dtype=np.float32), 100.0), synthesizer)
        with pytest.raises(ValidationError):
            synthesize(bnf, speaker, prosody, synthesizer, 'beam')

    def test_checkpoint_roundtrip(self, synthesizer, tmp_path):
        """Test a reloaded synthesizer encodes prosody identically"""
        mel = MelSpectrogram(np.random.default_rng(3).standard_normal((25, 80)).astype(np.float32), 100.0)
        synthesizer.save_checkpoint(tmp_path / 'synth', training={'epochs': 1})
        restored = Synthesizer.load_checkpoint(tmp_path / 'synth')
        assert np.allclose(encode_prosody(mel, synthesizer).vector, encode_prosody(mel, restored).vector)
        assert restored.metadata['epochs'] == 1


class TestVocoder:
    """Test cases for mel inversion"""

    def test_sine_vocoder_length(self, tiny_config):
        """Test one hop of samples per mel frame"""
        mel = MelSpectrogram(np.zeros((12, 80), dtype=np.float32), 100.0)
        wave = vocode(mel, build_vocoder(tiny_config))
        assert wave.num_samples == 12 * 160
        assert wave.sample_rate == 16000

    def test_wrong_channel_count(self, tiny_config):
        """Test a 79-channel input is rejected"""
        with pytest.raises(ShapeError):
            vocode(FrameSequence(np.zeros((4, 79)), 100.0), build_vocoder(tiny_config))


class TestTrainingWiring:
    """Test cases for the (A, C) training wiring"""

    def test_pair_checks(self, corpus):
        """Test C must differ from A and share its speaker"""
        a = by_id(corpus, 'ABA_a0000')
        with pytest.raises(WiringError):
            check_training_pair(a, a)
        with pytest.raises(WiringError):
            check_training_pair(a, by_id(corpus, 'SKA_a0001'))
        check_training_pair(a, by_id(corpus, 'ABA_a0001'))

    @pytest.mark.slow
    def test_hundred_steps_follow_wiring(self, trainer, corpus):
        """Test every step feeds A to BNF and prosody and C to the speaker encoder"""
        train = [r for r in corpus['records'] if r.speaker_id != 'NJS']
        pairs = corpus_service.sample_training_pairs(train, seed=0)
        for step in range(100):
            a, c = pairs[step % len(pairs)]
            provenance = trainer.train_step(a, c).provenance
            assert provenance.bnf == provenance.prosody == a.utterance_id
            assert provenance.speaker == c.utterance_id
            assert provenance.speaker != provenance.bnf
            assert provenance.bnf_speaker == provenance.speaker_speaker

    @pytest.mark.slow
    def test_frozen_components_stay_frozen(self, trainer, corpus):
        """Test 50 steps change the synthesizer but not the acoustic model or speaker encoder"""
        acoustic_before = trainer.bnf_extractor.acoustic_model.state_checksum()
        speaker_before = parameter_checksum(trainer.speaker_provider.parameters())
        synth_before = parameter_checksum(trainer.synthesizer.trainable_parameters())
        pairs = corpus_service.sample_training_pairs([r for r in corpus['records'] if r.speaker_id == 'ABA'])
        for step in range(50):
            trainer.train_step(*pairs[step % len(pairs)])
        assert trainer.bnf_extractor.acoustic_model.state_checksum() == acoustic_before
        assert parameter_checksum(trainer.speaker_provider.parameters()) == speaker_before
        assert parameter_checksum(trainer.synthesizer.trainable_parameters()) != synth_before

    def test_fit_history(self, trainer, corpus):
        """Test fit returns one entry per epoch with its losses"""
        splits = corpus_service.build_splits(corpus['records'], {'NJS'})
        history = trainer.fit(splits.train, splits.dev)
        assert [entry['epoch'] for entry in history] == list(range(len(history)))
        assert {'train_loss', 'val_loss', 'mel_loss', 'stop_loss', 'lr'} <= set(history[0])
        assert trainer.synthesizer.metadata['epochs_run'] == len(history)

    def test_fit_needs_pairs(self, trainer, corpus):
        """Test speakers with one utterance each leave nothing to train on"""
        singles = [by_id(corpus, 'ABA_a0000'), by_id(corpus, 'SKA_a0000')]
        with pytest.raises(ValidationError):
            trainer.fit(singles)


class TestConversionPipeline:
    """Test cases for reference-based conversion"""

    def test_provenance_and_outputs(self, pipeline, corpus, tmp_path):
        """Test BNF from the L1 reference, prosody and voice from the L2 utterance"""
        l2, l1 = by_id(corpus, 'NJS_a0001'), by_id(corpus, 'BDL_a0001')
        out = tmp_path / 'out' / 'converted.wav'
        result = pipeline.convert(ConversionRequest(l2, l1, str(out)))
        assert result.provenance.bnf == 'BDL_a0001'
        assert result.provenance.prosody == result.provenance.speaker == 'NJS_a0001'
        assert result.provenance.bnf_speaker == 'BDL'
        assert result.provenance.speaker_speaker == 'NJS'
        assert out.exists()
        with open(provenance_path(out)) as f:
            sidecar = json.load(f)
        assert sidecar['branches']['bnf'] == 'BDL_a0001'
        assert sidecar['frames'] == result.mel.num_frames
        assert 1 <= result.mel.num_frames <= 50

    def test_transcripts_must_match(self, pipeline, corpus):
        """Test a reference with different text is rejected"""
        with pytest.raises(ValidationError):
            pipeline.convert(ConversionRequest(by_id(corpus, 'NJS_a0001'), by_id(corpus, 'BDL_a0002')))

    def test_reference_must_be_l1_speaker(self, pipeline, corpus):
        """Test the reference must come from the configured L1 speaker"""
        with pytest.raises(WiringError):
            pipeline.convert(ConversionRequest(by_id(corpus, 'NJS_a0001'), by_id(corpus, 'ABA_a0001')))

    def test_provider_failure_names_branch(self, tiny_config, corpus):
        """Test a vocoder failure is reported with its branch"""
        pipeline = ConversionPipeline.from_config(tiny_config)
        pipeline.vocoder = BrokenVocoder().initialize()
        with pytest.raises(ProviderError) as exc_info:
            pipeline.convert(ConversionRequest(by_id(corpus, 'NJS_a0000'), by_id(corpus, 'BDL_a0000')))
        assert exc_info.value.branch == 'vocoder'
        assert exc_info.value.utterance_id == 'NJS_a0000'

    def test_content_comes_from_reference(self, tiny_config, corpus):
        """Test the output mel is the reference's content when synthesis passes it through"""
        features = FeatureService.from_config(tiny_config)
        pipeline = ConversionPipeline(features, MelAsBnf(features), PassThroughSynthesizer(),
                                      build_speaker_provider(tiny_config), build_vocoder(tiny_config))
        l1 = by_id(corpus, 'BDL_a0002')
        result = pipeline.convert(ConversionRequest(by_id(corpus, 'NJS_a0002'), l1))
        assert np.array_equal(result.mel.values, features.mel(l1).values)

    def test_cached_bnfs_are_used(self, tiny_config, corpus, tmp_path):
        """Test BNFs written by extract-bnf are read instead of recomputed"""
        features = FeatureService.from_config(tiny_config)
        record = by_id(corpus, 'BDL_a0000')
        marker = FrameSequence(np.full((7, 8), 0.25, dtype=np.float32), 100.0)
        feature_cache.write_feature_cache(marker, tmp_path / 'bnf' / 'BDL_a0000.facf')
        extractor = BnfExtractor(features, AcousticModel(tiny_config.acoustic_model).initialize(0),
                                 bnf_dir=str(tmp_path / 'bnf'))
        assert np.array_equal(extractor.extract(record).values.values, marker.values)

    def test_batch_preserves_order(self, pipeline, corpus):
        """Test batch conversion returns results in request order"""
        requests = [
            ConversionRequest(by_id(corpus, f'NJS_a000{i}'), by_id(corpus, f'BDL_a000{i}'))
            for i in range(3)
        ]
        results = batch_convert(pipeline, requests, max_workers=2)
        assert [r.provenance.bnf for r in results] == ['BDL_a0000', 'BDL_a0001', 'BDL_a0002']
