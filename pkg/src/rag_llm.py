"""
Generator Client
================

Prompt construction for the three QA strategies, the generator backends that
turn a prompt into text, and answer extraction from the generated text.

Backends:
- ScriptedMockBackend: substring pattern -> canned generation, deterministic.
- OpenAICompletionsBackend: any OpenAI-compatible /completions endpoint.

Prompt templates are plain text files under prompts/ and are filled with
str.format, so their wording can change without touching this module.
"""

import json
import logging
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import openai
from openai import OpenAI

from .rag_corpus import Document, QueryRecord

logger = logging.getLogger(__name__)

ANSWER_CUE = "So the answer is:"
NO_DOCUMENTS_MARKER = "(no documents found)"

DEFAULT_PROMPT_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "prompts")

_CUE_IN_DOCUMENT = re.compile(r"(so the answer is)\s*:", re.IGNORECASE)


class GenerationError(RuntimeError):
    def __init__(self, message: str, retryable: bool = False):
        self.retryable = retryable
        super().__init__(message)


class MockScriptError(GenerationError):
    pass


class TemplateNotFoundError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_new_tokens: int = 128
    temperature: float = 0.0
    stop_sequences: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("GenerationRequest.prompt must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    latency: float
    backend_id: str


# --------------------------
# Prompt templates
# --------------------------

@dataclass(frozen=True)
class PromptTemplates:
    no_retrieval: str
    single_step: str
    multi_step: str


def load_templates(
    prompt_dir: str = DEFAULT_PROMPT_DIR,
    no_retrieval: str = "no_retrieval",
    single_step: str = "single_step",
    multi_step: str = "multi_step",
) -> PromptTemplates:
    def read(name: str) -> str:
        path = os.path.join(prompt_dir, name if name.endswith(".txt") else f"{name}.txt")
        if not os.path.isfile(path):
            raise TemplateNotFoundError(f"prompt template not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return f.read().rstrip("\n")

    return PromptTemplates(read(no_retrieval), read(single_step), read(multi_step))


_default_templates: Optional[PromptTemplates] = None


def default_templates() -> PromptTemplates:
    global _default_templates
    if _default_templates is None:
        _default_templates = load_templates()
    return _default_templates


def fence_document(rank: int, doc: Document) -> str:
    """
    Render one document for a prompt. The answer cue is neutralized inside the
    fence so a generation that copies document text cannot fake a final answer.
    """
    title = _CUE_IN_DOCUMENT.sub(r"\1 (quoted) -", doc.title)
    text = _CUE_IN_DOCUMENT.sub(r"\1 (quoted) -", doc.text)
    return f"<document rank={rank}>\nWikipedia Title: {title}\n{text}\n</document>"


def render_documents(docs: Sequence[Document]) -> str:
    if not docs:
        return NO_DOCUMENTS_MARKER
    return "\n\n".join(fence_document(rank, d) for rank, d in enumerate(docs, start=1))


def build_prompt_no_retrieval(q: QueryRecord, templates: Optional[PromptTemplates] = None) -> str:
    if not q.question.strip():
        raise ValueError(f"query '{q.query_id}' has an empty question")
    templates = templates or default_templates()
    return templates.no_retrieval.format(question=q.question)


def build_prompt_single(
    q: QueryRecord,
    docs: Sequence[Document],
    templates: Optional[PromptTemplates] = None,
    allow_empty: bool = False,
) -> str:
    """Documents in rank order, then the question. With allow_empty the documents slot holds the no-documents marker."""
    if not docs and not allow_empty:
        raise ValueError("build_prompt_single needs at least one document")
    templates = templates or default_templates()
    return templates.single_step.format(documents=render_documents(docs), question=q.question)


def build_prompt_multistep(
    q: QueryRecord,
    docs: Sequence[Document],
    chain: Sequence[str],
    templates: Optional[PromptTemplates] = None,
) -> str:
    templates = templates or default_templates()
    rendered_chain = "".join(" " + s.strip() for s in chain if s.strip())
    return templates.multi_step.format(
        documents=render_documents(docs),
        question=q.question,
        chain=rendered_chain,
    )


def extract_answer(generation: str) -> Optional[str]:
    pos = generation.rfind(ANSWER_CUE)
    if pos < 0:
        return None
    answer = generation[pos + len(ANSWER_CUE):].strip()
    if answer.endswith("."):
        answer = answer[:-1].rstrip()
    return answer


def truncate_at_stop(text: str, stop_sequences: Sequence[str]) -> str:
    cut = len(text)
    for stop in stop_sequences:
        if not stop:
            continue
        pos = text.find(stop)
        if 0 <= pos < cut:
            cut = pos
    return text[:cut]


# --------------------------
# Backends
# --------------------------

class GeneratorBackend(ABC):
    backend_id: str = "backend"
    max_in_flight: int = 1

    @abstractmethod
    def complete(self, request: GenerationRequest) -> str:
        """Raw generation for the request, before stop-sequence truncation."""


class ScriptedMockBackend(GeneratorBackend):
    """
    Returns the response of the first rule whose pattern occurs in the prompt.
    Rules are checked in order, so more specific patterns must come first.
    """

    backend_id = "mock"

    def __init__(self, rules: Sequence[Tuple[str, str]], default: Optional[str] = None, max_in_flight: int = 8,
                 record_prompts: bool = False):
        self.rules: List[Tuple[str, str]] = list(rules)
        self.default = default
        self.max_in_flight = max_in_flight
        self.record_prompts = record_prompts
        self.prompts: List[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_script(cls, path: str, default: Optional[str] = None, max_in_flight: int = 8) -> "ScriptedMockBackend":
        """Load {"pattern", "response"} lines; a {"default": ...} line sets the fallback."""
        rules: List[Tuple[str, str]] = []
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise MockScriptError(f"{path}:{line_no}: invalid JSON ({e.msg})") from e
                if not isinstance(obj, dict):
                    raise MockScriptError(f"{path}:{line_no}: expected a JSON object")
                if "default" in obj:
                    default = obj["default"]
                elif "pattern" in obj and "response" in obj:
                    rules.append((obj["pattern"], obj["response"]))
                else:
                    raise MockScriptError(f"{path}:{line_no}: expected 'pattern'/'response' or 'default'")
        logger.info("Loaded %d mock rules from %s", len(rules), path)
        return cls(rules, default=default, max_in_flight=max_in_flight)

    def complete(self, request: GenerationRequest) -> str:
        if self.record_prompts:
            with self._lock:
                self.prompts.append(request.prompt)
        for pattern, response in self.rules:
            if pattern in request.prompt:
                return response
        if self.default is not None:
            return self.default
        raise MockScriptError(f"no mock rule matches prompt starting {request.prompt[:60]!r} and no default is set")


_RETRYABLE = (openai.RateLimitError, openai.APITimeoutError, openai.APIConnectionError, openai.InternalServerError)


class OpenAICompletionsBackend(GeneratorBackend):
    """
    POST <base_url>/completions with {model, prompt, max_tokens, temperature, stop}
    and read choices[0].text. Retries rate limits, timeouts, connection errors
    and 5xx responses with exponential backoff, within a total budget of
    timeout x (max_retries + 1).
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str,
        timeout: float = 30.0,
        max_retries: int = 2,
        retry_backoff: float = 0.5,
        max_in_flight: int = 4,
        http_client: Any = None,
    ):
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self.max_in_flight = max_in_flight
        self.backend_id = f"openai-completions:{model}"
        self._slots = threading.BoundedSemaphore(max_in_flight)
        # Retries are handled here, not by the SDK, so the time budget holds.
        self.client = OpenAI(base_url=base_url, api_key=api_key, timeout=timeout,
                             max_retries=0, http_client=http_client)

    def complete(self, request: GenerationRequest) -> str:
        deadline = time.monotonic() + self.timeout * (self.max_retries + 1)
        last_error: Optional[Exception] = None

        for attempt in range(self.max_retries + 1):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                with self._slots:
                    response = self.client.with_options(timeout=min(self.timeout, remaining)).completions.create(
                        model=self.model,
                        prompt=request.prompt,
                        max_tokens=request.max_new_tokens,
                        temperature=request.temperature,
                        stop=list(request.stop_sequences) or None,
                    )
                if not response.choices:
                    raise GenerationError("completions response has no choices")
                return response.choices[0].text or ""
            except _RETRYABLE as e:
                last_error = e
                logger.warning("Generation attempt %d/%d failed: %s",
                               attempt + 1, self.max_retries + 1, type(e).__name__)
                if attempt < self.max_retries:
                    delay = min(self.retry_backoff * (2 ** attempt), max(0.0, deadline - time.monotonic()))
                    time.sleep(delay)
            except openai.APIStatusError as e:
                raise GenerationError(f"completions endpoint returned HTTP {e.status_code}") from e

        raise GenerationError(
            f"generation failed after {self.max_retries + 1} attempt(s): {type(last_error).__name__ if last_error else 'time budget exhausted'}",
            retryable=True,
        ) from last_error


def generate(backend: GeneratorBackend, request: GenerationRequest) -> GenerationResponse:
    start = time.perf_counter()
    raw = backend.complete(request)
    text = truncate_at_stop(raw, request.stop_sequences)
    return GenerationResponse(text=text, latency=time.perf_counter() - start, backend_id=backend.backend_id)
