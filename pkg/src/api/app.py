"""Flask application for the conversion and evaluation service"""

import logging
import os
import sys
from pathlib import Path

# Project root on sys.path so `python src/api/app.py` works
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from flask import Flask, jsonify
from flask_cors import CORS
from flasgger import Swagger
from werkzeug.exceptions import HTTPException
from src.api.routes.conversion import conversion_bp, PIPELINE_EXTENSION
from src.api.routes.evaluation import evaluation_bp
from src.config import PipelineConfig
from src.errors import (
    FacError,
    ReferenceNotFoundError,
    ValidationError,
    WiringError,
)

logger = logging.getLogger(__name__)

SERVICE_NAME = 'Foreign Accent Conversion API'
VERSION = '1.0.0'

ROUTES = {
    'health': '/health',
    'api_docs': '/apidocs',
    'convert': '/api/convert',
    'config': '/api/config',
    'evaluation': '/api/eval'
}

SWAGGER_CONFIG = {
    "headers": [],
    "specs": [{
        "endpoint": 'apispec',
        "route": '/apispec.json',
        "rule_filter": lambda rule: rule.rule.startswith(("/api", "/health")),
        "model_filter": lambda tag: True,
    }],
    "static_url_path": "/flasgger_static",
    "swagger_ui": True,
    "specs_route": ROUTES['api_docs']
}


def swagger_template(config: PipelineConfig) -> dict:
    """OpenAPI 2.0 template; the description names the geometry being served"""
    geometry = config.geometry
    return {
        "swagger": "2.0",
        "info": {
            "title": SERVICE_NAME,
            "version": VERSION,
            "description": (
                "Converts non-native speech toward a native accent and scores the result. "
                f"Serving {geometry.upstream_dim}-d upstream embeddings, {geometry.ppg_dim} senones "
                f"and {geometry.tv_dim} tract variables."
            )
        },
        "securityDefinitions": {
            "ApiKeyAuth": {"type": "apiKey", "name": "X-API-Key", "in": "header"}
        },
        "security": [{"ApiKeyAuth": []}]
    }


def error_status(error: FacError) -> int:
    """HTTP status for a pipeline error"""
    if isinstance(error, ReferenceNotFoundError):
        return 404
    if isinstance(error, WiringError):
        return 422
    if isinstance(error, ValidationError):
        return 400
    return 500


def error_body(title: str, message: str, status: int):
    return jsonify({'error': title, 'message': message}), status


def register_error_handlers(app: Flask):
    @app.errorhandler(FacError)
    def pipeline_error(error):
        status = error_status(error)
        if status == 500:
            logger.exception('request failed')
        return error_body(error.title, str(error), status)

    @app.errorhandler(HTTPException)
    def http_error(error):
        # "Not Found" -> "Not found"
        return error_body(error.name.capitalize(), error.description, error.code)

    @app.errorhandler(Exception)
    def unexpected_error(error):
        logger.exception('unhandled error')
        return error_body('Internal server error', 'An unexpected error occurred', 500)


def create_app(debug=False, config=None, pipeline=None):
    """Create and configure Flask application

    Args:
        debug: Enable debug mode (default: False for production)
        config: PipelineConfig; read from FAC_CONFIG when omitted
        pipeline: prebuilt ConversionPipeline, mainly for tests
    """
    if config is None:
        config_path = os.getenv('FAC_CONFIG')
        config = PipelineConfig.load(config_path) if config_path else PipelineConfig()

    app = Flask(__name__)
    app.config['DEBUG'] = debug
    app.config['PIPELINE_CONFIG'] = config
    if pipeline is not None:
        app.extensions[PIPELINE_EXTENSION] = pipeline

    CORS(app)
    app.register_blueprint(conversion_bp, url_prefix='/api')
    app.register_blueprint(evaluation_bp, url_prefix=ROUTES['evaluation'])
    Swagger(app, config=SWAGGER_CONFIG, template=swagger_template(config))
    register_error_handlers(app)

    @app.route(ROUTES['health'], methods=['GET'])
    def health_check():
        """Liveness plus whether a conversion pipeline is loaded"""
        return jsonify({
            'status': 'healthy',
            'service': SERVICE_NAME,
            'version': VERSION,
            'pipeline_loaded': PIPELINE_EXTENSION in app.extensions
        }), 200

    @app.route('/', methods=['GET'])
    def root():
        return jsonify({
            'message': f'Welcome to {SERVICE_NAME}',
            'version': VERSION,
            'endpoints': ROUTES,
            'authentication': 'All /api endpoints require X-API-Key header'
        }), 200

    return app


if __name__ == '__main__':
    port = int(os.getenv('PORT', '5000'))
    logging.basicConfig(level=logging.INFO)
    print(f"{SERVICE_NAME} (development server)")
    print(f"  docs:   http://localhost:{port}{ROUTES['api_docs']}")
    print(f"  health: http://localhost:{port}{ROUTES['health']}")
    print("  keys:   test-api-key-123 (admin), demo-api-key-456 (user); override with FAC_API_KEYS")
    create_app(debug=True).run(debug=True, host='0.0.0.0', port=port)
