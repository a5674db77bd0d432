"""Unit tests for the multi-task acoustic model"""

import json
import math

import numpy as np
import pytest
import torch

from src.errors import CheckpointError, ModelStateError, ShapeError, ValidationError
from src.models.acoustic import AcousticModelConfig, CombinedLossReport, LossWeights
from src.models.features import (
    FeatureGeometry,
    FrameSequence,
    PosteriorgramTrack,
    TractVariableTrack,
    UpstreamEmbedding,
)
from src.providers.base import create_provider
from src.services.acoustic_service import (
    AcousticModel,
    combined_loss,
    combined_loss_tensor,
    extract_bnf,
    forward,
    load_checkpoint,
    loss_terms,
    make_variant,
    posterior_rmse,
    save_checkpoint,
    upsample_frames,
)
from src.services.feature_service import get_upstream_embeddings
from tests.conftest import tone

TINY = AcousticModelConfig(input_dim=16, bilstm_hidden=8, num_bilstm_layers=1,
                           dropout_rate=0.0, bnf_dim=8, ppg_dim=12, tv_dim=6)
GRADIENT = AcousticModelConfig(input_dim=8, bilstm_hidden=16, num_bilstm_layers=2,
                               dropout_rate=0.0, bnf_dim=16, ppg_dim=10, tv_dim=6)


def embeddings(frames=20, dim=16, seed=0):
    values = np.random.default_rng(seed).standard_normal((frames, dim)).astype(np.float32)
    return UpstreamEmbedding(values=values, frame_rate=50.0, metadata={'utterance_id': 'u1'})


@pytest.fixture
def model():
    """Initialized tiny combined-variant model"""
    return AcousticModel(TINY).initialize(seed=0)


class TestForward:
    """Test cases for inference"""

    def test_heads_are_upsampled(self, model):
        """Test T upstream frames give 2T frames on every head"""
        output = forward(embeddings(20), model)
        assert output.ppg_logits.values.shape == (40, 12)
        assert output.tv_estimates.values.shape == (40, 6)
        assert output.bnf.values.values.shape == (40, 8)
        assert output.ppg_logits.frame_rate == 100.0

    def test_tv_estimates_inside_unit_interval(self, model):
        """Test the tanh head keeps TV estimates in (-1, 1)"""
        output = forward(embeddings(20), model)
        assert np.all(np.abs(output.tv_estimates.values) < 1.0)

    def test_zero_frames(self, model):
        """Test empty input gives empty outputs"""
        output = forward(UpstreamEmbedding(np.zeros((0, 16), dtype=np.float32), 50.0), model)
        assert output.num_frames == 0

    def test_uninitialized_model(self):
        """Test an untrained, uninitialized model refuses to run"""
        with pytest.raises(ModelStateError):
            forward(embeddings(), AcousticModel(TINY))

    def test_wrong_input_width(self, model):
        """Test input width must match the config"""
        with pytest.raises(ShapeError):
            forward(embeddings(dim=15), model)

    def test_full_size_geometry(self):
        """Test 2 s of audio gives 100 upstream frames and 200 frames on every head"""
        provider = create_provider('upstream', 'mock', dim=1024, frame_rate=50.0)
        upstream = get_upstream_embeddings(tone(200.0, 2.0), provider, FeatureGeometry())
        assert upstream.values.shape == (100, 1024)
        output = forward(upstream, AcousticModel(AcousticModelConfig()).initialize(0))
        assert output.ppg_logits.values.shape == (200, 5816)
        assert output.tv_estimates.values.shape == (200, 6)
        assert output.bnf.values.values.shape == (200, 256)

    def test_seeded_initialization(self):
        """Test one seed gives one set of parameters"""
        assert AcousticModel(TINY).initialize(3).state_checksum() == \
            AcousticModel(TINY).initialize(3).state_checksum()
        assert AcousticModel(TINY).initialize(3).state_checksum() != \
            AcousticModel(TINY).initialize(4).state_checksum()


class TestBottleneck:
    """Test cases for BNF extraction"""

    def test_bnf_matches_forward(self, model):
        """Test extract_bnf equals the bottleneck produced by forward"""
        x = embeddings(12)
        assert np.allclose(extract_bnf(x, model).values.values, forward(x, model).bnf.values.values)

    def test_bnf_independent_of_heads(self, model):
        """Test changing the heads leaves BNFs unchanged"""
        x = embeddings(12)
        before = extract_bnf(x, model).values.values
        with torch.no_grad():
            model.network.ppg_head.weight.add_(1.0)
            model.network.tv_head.bias.add_(1.0)
        assert np.array_equal(before, extract_bnf(x, model).values.values)

    def test_bnf_metadata(self, model):
        """Test BNFs name their source utterance and run at 100 Hz"""
        bnf = extract_bnf(embeddings(10), model)
        assert bnf.source_utterance_id == 'u1'
        assert bnf.values.frame_rate == 100.0
        assert bnf.dim == 8

    def test_upsample_frames(self):
        """Test nearest-neighbour repetition doubles the frame rate"""
        seq = FrameSequence(np.array([[1.0], [2.0]]), 50.0)
        up = upsample_frames(seq, 2)
        assert up.values[:, 0].tolist() == [1.0, 1.0, 2.0, 2.0]
        assert up.frame_rate == 100.0
        with pytest.raises(ValidationError):
            upsample_frames(seq, 0)


class TestLoss:
    """Test cases for the combined objective"""

    def test_uniform_logits_cross_entropy(self):
        """Test uniform logits against a one-hot target give ln(5816)"""
        logits = torch.zeros(1, 3, 5816, dtype=torch.float64)
        target = torch.zeros(1, 3, 5816, dtype=torch.float64)
        target[..., 7] = 1.0
        tv = torch.zeros(1, 3, 6, dtype=torch.float64)
        _, ppg_loss = loss_terms(logits, tv, target, tv)
        assert ppg_loss.item() == pytest.approx(math.log(5816), abs=1e-4)
        assert ppg_loss.item() == pytest.approx(8.6686, abs=1e-4)

    def test_weighted_combination(self):
        """Test alpha 0.4 combines TV 0.5 and PPG 1.5 into 1.1"""
        report = CombinedLossReport.from_parts(0.5, 1.5, LossWeights(0.4))
        assert report.combined == pytest.approx(1.1, abs=1e-12)

    def test_tv_loss_is_mean_absolute_error(self):
        """Test the TV term is the mean absolute difference"""
        tv = torch.full((1, 4, 6), 0.5, dtype=torch.float64)
        target = torch.zeros(1, 4, 6, dtype=torch.float64)
        logits = torch.zeros(1, 4, 3, dtype=torch.float64)
        ppg = torch.full((1, 4, 3), 1 / 3, dtype=torch.float64)
        tv_loss, _ = loss_terms(logits, tv, ppg, target)
        assert tv_loss.item() == pytest.approx(0.5)

    def test_truncation_tolerance(self):
        """Test lengths within two frames are cut to the shortest, wider gaps fail"""
        logits = torch.zeros(1, 10, 3, dtype=torch.float64)
        ppg = torch.full((1, 8, 3), 1 / 3, dtype=torch.float64)
        tv = torch.zeros(1, 10, 6, dtype=torch.float64)
        loss_terms(logits, tv, ppg, tv[:, :9])
        with pytest.raises(ShapeError):
            loss_terms(logits, tv, ppg[:, :7], tv)

    def test_zero_frames(self):
        """Test a loss over zero frames is an error"""
        empty = torch.zeros(1, 0, 3, dtype=torch.float64)
        with pytest.raises(ValidationError):
            loss_terms(empty, empty, empty, empty)

    def test_combined_loss_report(self, model):
        """Test the report weights its float64 terms with the model's alpha"""
        output = forward(embeddings(10), model)
        frames = output.num_frames
        ppg = PosteriorgramTrack(np.full((frames, 12), 1 / 12), 100.0)
        tv = TractVariableTrack(np.zeros((frames, 6)), 100.0)
        report = combined_loss(output, ppg, tv, LossWeights(0.4))
        assert report.combined == pytest.approx(0.4 * report.tv_loss + 0.6 * report.ppg_loss)
        assert report.ppg_loss >= math.log(12) - 1e-9

    def test_posterior_rmse_of_confident_match(self, model):
        """Test posteriors peaked on the target give near-zero RMSE"""
        output = forward(embeddings(5), model)
        frames = output.num_frames
        target = np.zeros((frames, 12))
        target[:, 3] = 1.0
        output.ppg_logits.values[:] = 0.0
        output.ppg_logits.values[:, 3] = 50.0
        assert posterior_rmse(output, PosteriorgramTrack(target, 100.0)) < 1e-6


class TestVariants:
    """Test cases for the three loss variants"""

    def test_variant_alphas(self):
        """Test PPG-only, combined and TV-only weights"""
        assert make_variant('ppg_only')[1].alpha == 0.0
        assert make_variant('combined')[1].alpha == 0.4
        assert make_variant('tv_only')[1].alpha == 1.0

    def test_unknown_variant(self):
        """Test an unknown variant name is rejected"""
        with pytest.raises(ValidationError):
            make_variant('bnf_only')

    def test_alpha_range(self):
        """Test alpha must lie in [0, 1]"""
        with pytest.raises(ValidationError):
            LossWeights(1.5)

    def test_gradient_decomposes_by_alpha(self):
        """Test the trunk gradient is alpha * TV gradient + (1 - alpha) * PPG gradient"""
        model = AcousticModel(GRADIENT, dtype=torch.float64).initialize(seed=1)
        rng = np.random.default_rng(2)
        x = torch.as_tensor(rng.standard_normal((2, 6, 8)))
        ppg_target = torch.softmax(torch.as_tensor(rng.standard_normal((2, 12, 10))), dim=-1)
        tv_target = torch.as_tensor(rng.uniform(-0.9, 0.9, (2, 12, 6)))
        trunk = model.network.trunk_parameters()
        alpha = 0.4

        ppg_logits, tv, _ = model.network(x)
        total, tv_loss, ppg_loss = combined_loss_tensor(ppg_logits, tv, ppg_target, tv_target, LossWeights(alpha))
        g_total = torch.autograd.grad(total, trunk, retain_graph=True)
        g_tv = torch.autograd.grad(tv_loss, trunk, retain_graph=True)
        g_ppg = torch.autograd.grad(ppg_loss, trunk)
        for a, b, c in zip(g_total, g_tv, g_ppg):
            assert torch.allclose(a, alpha * b + (1 - alpha) * c, atol=1e-10)

    def test_gradient_matches_finite_differences(self):
        """Test autograd agrees with central differences on trunk weights"""
        model = AcousticModel(GRADIENT, dtype=torch.float64).initialize(seed=3)
        rng = np.random.default_rng(4)
        x = torch.as_tensor(rng.standard_normal((1, 4, 8)))
        ppg_target = torch.softmax(torch.as_tensor(rng.standard_normal((1, 8, 10))), dim=-1)
        tv_target = torch.as_tensor(rng.uniform(-0.9, 0.9, (1, 8, 6)))
        weights = LossWeights(0.4)

        def objective():
            ppg_logits, tv, _ = model.network(x)
            return combined_loss_tensor(ppg_logits, tv, ppg_target, tv_target, weights)[0]

        parameter = model.network.trunk_parameters()[0]
        analytic = torch.autograd.grad(objective(), parameter)[0]
        eps = 1e-6
        for index in [(0, 0), (1, 3), (5, 7)]:
            with torch.no_grad():
                original = parameter[index].item()
                parameter[index] = original + eps
                plus = objective().item()
                parameter[index] = original - eps
                minus = objective().item()
                parameter[index] = original
            numeric = (plus - minus) / (2 * eps)
            assert numeric == pytest.approx(analytic[index].item(), rel=1e-3, abs=1e-8)

    def test_ppg_only_ignores_tv_head(self):
        """Test alpha 0 sends no gradient to the TV head"""
        model = AcousticModel(GRADIENT, dtype=torch.float64).initialize(seed=1)
        x = torch.randn(1, 5, 8, dtype=torch.float64)
        ppg_target = torch.full((1, 10, 10), 0.1, dtype=torch.float64)
        tv_target = torch.zeros(1, 10, 6, dtype=torch.float64)
        ppg_logits, tv, _ = model.network(x)
        total, _, _ = combined_loss_tensor(ppg_logits, tv, ppg_target, tv_target, LossWeights(0.0))
        total.backward()
        assert torch.count_nonzero(model.network.tv_head.weight.grad) == 0


class TestCheckpoint:
    """Test cases for saving and loading"""

    def test_roundtrip(self, model, tmp_path):
        """Test a reloaded model reproduces its outputs and alpha"""
        x = embeddings(10)
        save_checkpoint(model, tmp_path / 'am', training={'patience': 6})
        restored = load_checkpoint(tmp_path / 'am')
        assert restored.weights.alpha == 0.4
        assert restored.metadata['patience'] == 6
        assert np.allclose(forward(x, model).ppg_logits.values, forward(x, restored).ppg_logits.values)

    def test_config_document(self, model, tmp_path):
        """Test config.json records architecture, alpha and variant"""
        save_checkpoint(model, tmp_path / 'am')
        with open(tmp_path / 'am' / 'config.json') as f:
            document = json.load(f)
        assert document['variant'] == 'combined'
        assert document['model']['ppg_dim'] == 12

    def test_missing_checkpoint(self, tmp_path):
        """Test loading from an empty directory fails"""
        with pytest.raises(ModelStateError):
            load_checkpoint(tmp_path)

    def test_save_uninitialized(self, tmp_path):
        """Test an uninitialized model cannot be saved"""
        with pytest.raises(ModelStateError):
            save_checkpoint(AcousticModel(TINY), tmp_path / 'am')

    def test_corrupt_parameters(self, model, tmp_path):
        """Test unreadable parameters.pt is reported as a corrupt checkpoint"""
        save_checkpoint(model, tmp_path / 'am')
        (tmp_path / 'am' / 'parameters.pt').write_bytes(b'\x00not a torch file')
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / 'am')

    def test_mismatched_state(self, model, tmp_path):
        """Test a config that disagrees with the saved weights fails to load"""
        save_checkpoint(model, tmp_path / 'am')
        path = tmp_path / 'am' / 'config.json'
        document = json.loads(path.read_text())
        document['model']['bnf_dim'] = 24
        path.write_text(json.dumps(document))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / 'am')
