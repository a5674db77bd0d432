"""Evaluation API Routes"""

from pathlib import Path

from flask import Blueprint, current_app, jsonify, request
from src.api.auth import require_api_key
from src.services import evaluation_service
from src.services.corpus_service import load_waveform
from src.services.feature_service import compute_mel

evaluation_bp = Blueprint('evaluation', __name__)


def _json_body() -> dict:
    data = request.get_json(silent=True)
    return data if isinstance(data, dict) else {}


def _invalid(message: str):
    return jsonify({'error': 'Invalid request data', 'message': message}), 400


def _is_number(value) -> bool:
    # JSON true/false arrive as bool, a subclass of int
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@evaluation_bp.route('/wer', methods=['POST'])
@require_api_key
def word_error_rate():
    """
    Word error rate of a hypothesis against a reference transcript
    ---
    tags:
      - Evaluation
    parameters:
      - in: header
        name: X-API-Key
        required: true
        schema:
          type: string
      - in: body
        name: transcripts
        required: true
        schema:
          type: object
          required:
            - reference
            - hypothesis
          properties:
            reference:
              type: string
            hypothesis:
              type: string
    responses:
      200:
        description: WER in percent with edit counts
      400:
        description: Invalid request data
    """
    data = _json_body()
    if 'reference' not in data or 'hypothesis' not in data:
        return jsonify({
            'error': 'Missing required fields',
            'message': 'reference and hypothesis are required'
        }), 400
    if not isinstance(data['reference'], str) or not isinstance(data['hypothesis'], str):
        return _invalid('reference and hypothesis must be strings')

    result = evaluation_service.wer(data['reference'], data['hypothesis'])
    return jsonify(result.to_dict()), 200


@evaluation_bp.route('/mcd', methods=['POST'])
@require_api_key
def mel_cepstral_distortion():
    """
    DTW-aligned mel cepstral distortion between two audio files
    ---
    tags:
      - Evaluation
    parameters:
      - in: header
        name: X-API-Key
        required: true
        schema:
          type: string
      - in: body
        name: audio
        required: true
        schema:
          type: object
          required:
            - converted_path
            - reference_path
          properties:
            converted_path:
              type: string
            reference_path:
              type: string
            order:
              type: integer
    responses:
      200:
        description: MCD in dB
      400:
        description: Invalid request data
      404:
        description: Audio not found
    """
    data = _json_body()
    missing = [name for name in ('converted_path', 'reference_path') if not data.get(name)]
    if missing:
        return jsonify({'error': 'Missing required fields', 'message': ', '.join(missing)}), 400
    for name in ('converted_path', 'reference_path'):
        if not Path(data[name]).exists():
            return jsonify({'error': 'Not found', 'message': f'{name} does not exist: {data[name]}'}), 404
    order = data.get('order', 13)
    if not isinstance(order, int) or isinstance(order, bool) or order < 1:
        return _invalid(f'order must be a positive integer, got {order!r}')

    mel_config = current_app.config['PIPELINE_CONFIG'].mel
    converted = compute_mel(load_waveform(data['converted_path']), mel_config)
    reference = compute_mel(load_waveform(data['reference_path']), mel_config)
    result = evaluation_service.mcd(converted, reference, order)
    return jsonify(result.to_dict()), 200


@evaluation_bp.route('/ppmc', methods=['POST'])
@require_api_key
def correlation():
    """
    Pearson correlation of two equal-length sequences
    ---
    tags:
      - Evaluation
    parameters:
      - in: header
        name: X-API-Key
        required: true
        schema:
          type: string
      - in: body
        name: sequences
        required: true
        schema:
          type: object
          properties:
            x:
              type: array
              items:
                type: number
            y:
              type: array
              items:
                type: number
    responses:
      200:
        description: Correlation coefficient
      400:
        description: Invalid request data
    """
    data = _json_body()
    if 'x' not in data or 'y' not in data:
        return jsonify({'error': 'Missing required fields', 'message': 'x and y are required'}), 400
    for name in ('x', 'y'):
        if not isinstance(data[name], list) or not all(_is_number(v) for v in data[name]):
            return _invalid(f'{name} must be a list of numbers')
    return jsonify({'ppmc': evaluation_service.ppmc(data['x'], data['y'])}), 200
