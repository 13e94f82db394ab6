"""Cost-effectiveness benchmarking of LLM pipelines."""

from pathlib import Path

__version__ = "0.1.0"

FIXTURES = Path(__file__).parent / "fixtures"
