"""X-API-Key authentication for the /api routes"""

import logging
import os
from functools import wraps
from typing import Dict

from flask import g, jsonify, request

logger = logging.getLogger(__name__)

# Development keys; FAC_API_KEYS="key:role,key:role" replaces them
DEFAULT_API_KEYS = {
    'test-api-key-123': 'admin',
    'demo-api-key-456': 'user'
}


def load_api_keys() -> Dict[str, str]:
    """Key -> role map, read per request so FAC_API_KEYS changes apply without restart"""
    raw = os.getenv('FAC_API_KEYS', '').strip()
    if not raw:
        return dict(DEFAULT_API_KEYS)
    keys = {}
    for entry in raw.split(','):
        key, _, role = entry.strip().partition(':')
        if key:
            keys[key] = role or 'user'
    return keys


def _unauthorized(error: str, message: str):
    logger.info('rejected %s %s: %s', request.method, request.path, error)
    return jsonify({'error': error, 'message': message}), 401


def require_api_key(f):
    """Reject requests without a known key; the caller's role is left on flask.g.api_role"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        api_key = request.headers.get('X-API-Key')
        if not api_key:
            return _unauthorized('API key is missing', 'Please provide an API key in the X-API-Key header')

        role = load_api_keys().get(api_key)
        if role is None:
            return _unauthorized('Invalid API key', 'The provided API key is not valid')

        g.api_role = role
        return f(*args, **kwargs)

    return decorated_function
