"""Tests for the HTTP API"""

import json

import pytest

from src.api.app import create_app
from src.services.conversion_service import ConversionPipeline

HEADERS = {'X-API-Key': 'test-api-key-123'}


@pytest.fixture
def client(tiny_config, tmp_path):
    """Test client over the tiny config with a prebuilt pipeline, writing under tmp_path/runs"""
    tiny_config.output_dir = str(tmp_path / 'runs')
    app = create_app(config=tiny_config, pipeline=ConversionPipeline.from_config(tiny_config))
    app.config['TESTING'] = True
    return app.test_client()


class TestService:
    """Test cases for service endpoints and authentication"""

    def test_health(self, client):
        """Test the health check needs no key"""
        response = client.get('/health')
        assert response.status_code == 200
        assert response.get_json()['status'] == 'healthy'
        assert response.get_json()['pipeline_loaded'] is True

    def test_root_lists_endpoints(self, client):
        """Test the root endpoint names the conversion route"""
        assert client.get('/').get_json()['endpoints']['convert'] == '/api/convert'

    def test_missing_key(self, client):
        """Test API routes reject requests without a key"""
        response = client.get('/api/config')
        assert response.status_code == 401
        assert response.get_json()['error'] == 'API key is missing'

    def test_invalid_key(self, client):
        """Test an unknown key is rejected"""
        assert client.get('/api/config', headers={'X-API-Key': 'nope'}).status_code == 401

    def test_keys_from_environment(self, client, monkeypatch):
        """Test FAC_API_KEYS replaces the development keys"""
        monkeypatch.setenv('FAC_API_KEYS', 'prod-key:admin')
        assert client.get('/api/config', headers=HEADERS).status_code == 401
        assert client.get('/api/config', headers={'X-API-Key': 'prod-key'}).status_code == 200

    def test_config(self, client):
        """Test the effective config is returned"""
        response = client.get('/api/config', headers=HEADERS)
        assert response.get_json()['corpus']['l1_speaker'] == 'BDL'

    def test_unknown_route(self, client):
        """Test unknown routes return a JSON 404"""
        response = client.get('/api/nothing-here', headers=HEADERS)
        assert response.status_code == 404
        assert response.get_json()['error'] == 'Not found'


class TestEvaluationRoutes:
    """Test cases for /api/eval"""

    def test_wer(self, client):
        """Test one substitution in three words"""
        response = client.post('/api/eval/wer', headers=HEADERS,
                               json={'reference': 'a b c', 'hypothesis': 'a x c'})
        assert response.status_code == 200
        body = response.get_json()
        assert body['substitutions'] == 1
        assert body['wer_percent'] == pytest.approx(33.333, abs=1e-3)

    def test_wer_missing_fields(self, client):
        """Test a missing hypothesis is a 400"""
        assert client.post('/api/eval/wer', headers=HEADERS, json={'reference': 'a'}).status_code == 400

    def test_wer_empty_reference(self, client):
        """Test an empty reference maps to a JSON validation error"""
        response = client.post('/api/eval/wer', headers=HEADERS, json={'reference': '', 'hypothesis': 'a'})
        assert response.status_code == 400
        assert response.get_json()['error'] == 'Validation failed'

    def test_ppmc(self, client):
        """Test an affine pair correlates at 1"""
        response = client.post('/api/eval/ppmc', headers=HEADERS, json={'x': [1, 2, 3, 4], 'y': [5, 7, 9, 11]})
        assert response.get_json()['ppmc'] == pytest.approx(1.0)

    def test_ppmc_constant(self, client):
        """Test a constant sequence is a 400"""
        response = client.post('/api/eval/ppmc', headers=HEADERS, json={'x': [1, 2, 3], 'y': [1, 1, 1]})
        assert response.status_code == 400

    def test_mcd_of_file_against_itself(self, client, corpus):
        """Test MCD of one file against itself is zero"""
        path = corpus['records'][0].audio_path
        response = client.post('/api/eval/mcd', headers=HEADERS,
                               json={'converted_path': path, 'reference_path': path})
        assert response.status_code == 200
        assert response.get_json()['mcd_db'] == pytest.approx(0.0, abs=1e-9)

    def test_mcd_missing_file(self, client, corpus, tmp_path):
        """Test a nonexistent audio path is a 404"""
        response = client.post('/api/eval/mcd', headers=HEADERS, json={
            'converted_path': str(tmp_path / 'missing.wav'),
            'reference_path': corpus['records'][0].audio_path,
        })
        assert response.status_code == 404

    @pytest.mark.parametrize('body', [
        {'x': [1, 'a', 3], 'y': [1, 2, 3]},
        {'x': [1, 2, 3], 'y': '123'},
        {'x': [1, 2, 3], 'y': [True, False, True]},
        {'x': [[1, 2], [3, 4]], 'y': [1, 2]},
    ])
    def test_ppmc_non_numeric(self, client, body):
        """Test sequences that are not flat numeric lists are a 400"""
        response = client.post('/api/eval/ppmc', headers=HEADERS, json=body)
        assert response.status_code == 400
        assert response.get_json()['error'] == 'Invalid request data'

    @pytest.mark.parametrize('order', ['abc', 2.5, True, 0, None])
    def test_mcd_bad_order(self, client, corpus, order):
        """Test a non-integer or non-positive order is a 400"""
        path = corpus['records'][0].audio_path
        response = client.post('/api/eval/mcd', headers=HEADERS,
                               json={'converted_path': path, 'reference_path': path, 'order': order})
        assert response.status_code == 400
        assert 'order' in response.get_json()['message']

    def test_mcd_order_above_channels(self, client, corpus):
        """Test an order at or above the mel channel count is a 400"""
        path = corpus['records'][0].audio_path
        response = client.post('/api/eval/mcd', headers=HEADERS,
                               json={'converted_path': path, 'reference_path': path, 'order': 10000})
        assert response.status_code == 400

    def test_wer_non_string(self, client):
        """Test non-string transcripts are a 400"""
        response = client.post('/api/eval/wer', headers=HEADERS, json={'reference': 12, 'hypothesis': 'twelve'})
        assert response.status_code == 400

    def test_json_array_body(self, client):
        """Test a JSON array body is treated as missing fields"""
        response = client.post('/api/eval/ppmc', headers=HEADERS, json=[1, 2, 3])
        assert response.status_code == 400
        assert response.get_json()['error'] == 'Missing required fields'


class TestConvertRoute:
    """Test cases for /api/convert"""

    def test_convert(self, client, corpus, tmp_path):
        """Test conversion writes audio and reports branch provenance"""
        records = {r.utterance_id: r for r in corpus['records']}
        out = tmp_path / 'runs' / 'api' / 'converted.wav'
        response = client.post('/api/convert', headers=HEADERS, json={
            'l2_audio_path': records['NJS_a0000'].audio_path,
            'l1_reference_path': records['BDL_a0000'].audio_path,
            'output_path': 'api/converted.wav',
            'l2_speaker': 'NJS',
        })
        assert response.status_code == 201
        body = response.get_json()
        assert body['provenance']['bnf'] == 'BDL_a0000'
        assert body['provenance']['prosody'] == 'NJS_a0000'
        assert body['frames'] >= 1
        assert body['requested_by'] == 'admin'
        assert out.exists()
        with open(out.with_name('converted.provenance.json')) as f:
            assert json.load(f)['branches']['speaker_speaker'] == 'NJS'

    def test_convert_absolute_inside_output_dir(self, client, corpus, tmp_path):
        """Test an absolute output_path under the output directory is accepted"""
        records = {r.utterance_id: r for r in corpus['records']}
        out = tmp_path / 'runs' / 'abs.wav'
        response = client.post('/api/convert', headers=HEADERS, json={
            'l2_audio_path': records['ABA_a0000'].audio_path,
            'l1_reference_path': records['BDL_a0000'].audio_path,
            'output_path': str(out),
        })
        assert response.status_code == 201
        assert out.exists()

    @pytest.mark.parametrize('output_path', ['../escape.wav', 'api/../../escape.wav', '/tmp/escape.wav', '.'])
    def test_convert_output_outside_dir(self, client, corpus, tmp_path, output_path):
        """Test output paths leaving the output directory are a 400 and nothing is written"""
        records = {r.utterance_id: r for r in corpus['records']}
        response = client.post('/api/convert', headers=HEADERS, json={
            'l2_audio_path': records['NJS_a0000'].audio_path,
            'l1_reference_path': records['BDL_a0000'].audio_path,
            'output_path': output_path,
        })
        assert response.status_code == 400
        assert response.get_json()['error'] == 'Validation failed'
        assert not (tmp_path / 'escape.wav').exists()

    def test_convert_missing_fields(self, client):
        """Test missing paths are a 400 naming the fields"""
        response = client.post('/api/convert', headers=HEADERS, json={'l2_audio_path': 'a.wav'})
        assert response.status_code == 400
        assert 'output_path' in response.get_json()['message']

    def test_convert_missing_audio(self, client, tmp_path):
        """Test nonexistent audio is a 404"""
        response = client.post('/api/convert', headers=HEADERS, json={
            'l2_audio_path': str(tmp_path / 'a.wav'),
            'l1_reference_path': str(tmp_path / 'b.wav'),
            'output_path': str(tmp_path / 'o.wav'),
        })
        assert response.status_code == 404

    def test_convert_needs_json(self, client):
        """Test a non-JSON body is a 400"""
        response = client.post('/api/convert', headers=HEADERS, data='not json')
        assert response.status_code == 400

    def test_convert_non_string_path(self, client):
        """Test a non-string path field is a 400"""
        response = client.post('/api/convert', headers=HEADERS, json={
            'l2_audio_path': 'a.wav', 'l1_reference_path': 'b.wav', 'output_path': 7,
        })
        assert response.status_code == 400
        assert 'output_path' in response.get_json()['message']
