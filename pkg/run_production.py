"""Serve the conversion and evaluation API with Waitress

Environment:
    FAC_CONFIG     pipeline config JSON (checkpoints, providers); built-in defaults otherwise
    FAC_API_KEYS   "key:role,..." replacing the development keys
    PORT           listen port, 5000 by default
    THREADS        Waitress worker threads, 4 by default

Usage:
    python run_production.py
"""

import logging
import os
import sys
from pathlib import Path

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from waitress import serve
from src.api.app import create_app, SERVICE_NAME

if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    app = create_app(debug=False)
    port = int(os.getenv("PORT", "5000"))
    threads = int(os.getenv("THREADS", "4"))

    banner = [
        f"{SERVICE_NAME} - Production Server",
        f"Waitress on 0.0.0.0:{port} with {threads} threads",
        f"Pipeline config: {os.getenv('FAC_CONFIG', 'built-in defaults')}",
        "Docs: /apidocs   Health: /health",
    ]
    print("=" * 60)
    print("\n".join(banner))
    print("=" * 60)

    serve(app, host='0.0.0.0', port=port, threads=threads)
