"""Candidate generation: payloads, LLM backends, templates and parsing."""
from .candidates import (
    AGGRESSIVENESS, FORMS, METHODS, Candidate, CandidateError, dedup, make_candidate,
    parse_candidates, read_pool, write_pool,
)
from .llm import LiveBackend, LlmRequest, ReplayBackend, StubBackend, make_llm
from .payloads import (
    Payload, build_discovery_payload, build_stats_payload, model_text,
)
from .templates import synthesize_templates

__all__ = [
    "AGGRESSIVENESS", "FORMS", "METHODS", "Candidate", "CandidateError", "LiveBackend",
    "LlmRequest", "Payload", "ReplayBackend", "StubBackend", "build_discovery_payload",
    "build_stats_payload", "dedup", "make_candidate", "make_llm", "model_text",
    "parse_candidates", "read_pool", "synthesize_templates", "write_pool",
]
