"""Conversion API Routes"""

from pathlib import Path

from flask import Blueprint, current_app, g, jsonify, request
from src.api.auth import require_api_key
from src.errors import ValidationError
from src.models.conversion import ConversionRequest
from src.services.conversion_service import ConversionPipeline
from src.services.corpus_service import record_for_audio

conversion_bp = Blueprint('conversion', __name__)

PIPELINE_EXTENSION = 'fac_pipeline'


def resolve_output_path(output_path: str, output_dir: str) -> Path:
    """Place output_path under output_dir; paths that leave it are rejected"""
    root = Path(output_dir).resolve()
    target = (root / output_path).resolve()
    if target == root or root not in target.parents:
        raise ValidationError(f'output_path must stay inside the output directory {output_dir}: {output_path}')
    return target


def get_pipeline() -> ConversionPipeline:
    """Build the pipeline once per app, on first use"""
    pipeline = current_app.extensions.get(PIPELINE_EXTENSION)
    if pipeline is None:
        pipeline = ConversionPipeline.from_config(current_app.config['PIPELINE_CONFIG'])
        current_app.extensions[PIPELINE_EXTENSION] = pipeline
    return pipeline


@conversion_bp.route('/convert', methods=['POST'])
@require_api_key
def convert():
    """
    Convert one L2 utterance using a parallel L1 reference
    ---
    tags:
      - Conversion
    parameters:
      - in: header
        name: X-API-Key
        required: true
        schema:
          type: string
      - in: body
        name: conversion
        required: true
        schema:
          type: object
          required:
            - l2_audio_path
            - l1_reference_path
            - output_path
          properties:
            l2_audio_path:
              type: string
            l1_reference_path:
              type: string
            output_path:
              type: string
              description: Relative to the configured output directory
            transcript:
              type: string
            l2_speaker:
              type: string
    responses:
      201:
        description: Converted audio and provenance sidecar written
      400:
        description: Invalid request data or an output_path outside the output directory
      404:
        description: Input audio not found
      422:
        description: Invalid branch wiring
    """
    data = request.get_json(silent=True)
    if not data or not isinstance(data, dict):
        return jsonify({'error': 'Invalid request', 'message': 'Request body must be a JSON object'}), 400

    required = ['l2_audio_path', 'l1_reference_path', 'output_path']
    missing = [name for name in required if not data.get(name)]
    if missing:
        return jsonify({'error': 'Missing required fields', 'message': ', '.join(missing)}), 400
    not_strings = [name for name in required if not isinstance(data[name], str)]
    if not_strings:
        return jsonify({'error': 'Invalid request data', 'message': 'must be strings: ' + ', '.join(not_strings)}), 400

    for name in ('l2_audio_path', 'l1_reference_path'):
        if not Path(data[name]).exists():
            return jsonify({'error': 'Not found', 'message': f'{name} does not exist: {data[name]}'}), 404

    config = current_app.config['PIPELINE_CONFIG']
    output_path = resolve_output_path(data['output_path'], config.output_dir)
    transcript = data.get('transcript', '')
    l2 = record_for_audio(data['l2_audio_path'], data.get('l2_speaker', 'L2'), transcript)
    l1 = record_for_audio(data['l1_reference_path'], config.corpus.l1_speaker, transcript)
    result = get_pipeline().convert(ConversionRequest(l2, l1, str(output_path)))

    return jsonify({
        'message': 'Conversion completed',
        'frames': result.mel.num_frames,
        'duration_seconds': result.waveform.duration,
        'truncated': result.truncated,
        'provenance': result.provenance.to_dict(),
        'artifacts': result.artifacts,
        'requested_by': g.api_role
    }), 201


@conversion_bp.route('/config', methods=['GET'])
@require_api_key
def get_config():
    """
    Get the effective pipeline configuration
    ---
    tags:
      - Conversion
    parameters:
      - in: header
        name: X-API-Key
        required: true
        schema:
          type: string
    responses:
      200:
        description: Pipeline configuration
    """
    return jsonify(current_app.config['PIPELINE_CONFIG'].to_dict()), 200
