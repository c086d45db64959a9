"""
toolverify
Verified tool calling for language models: synthetic tool-selection data,
contrastive verification of tool and parameter choices, call evaluation.

Usage:
    python app.py <command> [options]

Example:
    python app.py call "What's the air quality right now at latitude 48.85, longitude 2.35?" \
        --registry fixtures/toolbench_registry.json --script fixtures/demo_script.jsonl
"""

import sys

from toolverify.cli import main

if __name__ == "__main__":
    sys.exit(main())
