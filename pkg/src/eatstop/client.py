"""Minimal client for OpenAI-compatible text-completion endpoints.

Only the legacy completions surface is used: streamed generation for
think-block lines, and single-token non-streaming calls with logprobs for
entropy probes.  Everything is synchronous; concurrency across sessions is
the caller's business.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import Iterator, Sequence

import httpx


class EndpointError(Exception):
    """The endpoint misbehaved in a way retries could not fix."""


@dataclass(frozen=True)
class EndpointConfig:
    """Connection and capability description for one endpoint.

    api_key_env names an environment variable holding the bearer token; an
    empty name sends no Authorization header.  vocab_size is required when
    the endpoint only exposes top-k logprobs, since interval entropy bounds
    need to know how many tokens the unseen residual can spread over.
    """

    base_url: str
    model_id: str
    api_key_env: str = ""
    max_top_logprobs: int = 20
    supports_full_distribution: bool = False
    vocab_size: int | None = None
    request_timeout: float = 60.0

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.max_top_logprobs < 1:
            raise ValueError("max_top_logprobs must be >= 1")
        if self.vocab_size is not None and self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")


@dataclass(frozen=True)
class StreamChunk:
    text: str
    finish_reason: str | None


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str | None
    # Top log-probabilities for the first generated position, when requested.
    top_logprobs: dict[str, float] | None
    completion_tokens: int | None


class CompletionsClient:
    """One endpoint, with bounded retries and exponential backoff."""

    def __init__(
        self,
        config: EndpointConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        retries: int = 3,
        backoff: float = 0.25,
        sleep=time.sleep,
    ):
        if retries < 1:
            raise ValueError("retries must be >= 1")
        self.config = config
        self._retries = retries
        self._backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=config.request_timeout)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "CompletionsClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- request plumbing ---------------------------------------------------

    @property
    def _url(self) -> str:
        return self.config.base_url.rstrip("/") + "/completions"

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if not key:
                raise EndpointError(
                    f"api key environment variable {self.config.api_key_env!r} is unset"
                )
            headers["authorization"] = f"Bearer {key}"
        return headers

    def _payload(
        self,
        prompt: str,
        *,
        max_tokens: int,
        temperature: float,
        top_p: float,
        stream: bool,
        logprobs: int | None,
        stop: Sequence[str] | None,
    ) -> dict:
        payload: dict = {
            "model": self.config.model_id,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": temperature,
            "top_p": top_p,
            "stream": stream,
        }
        if logprobs is not None:
            payload["logprobs"] = logprobs
        if stop:
            payload["stop"] = list(stop)
        return payload

    def _attempts(self) -> Iterator[int]:
        for attempt in range(self._retries):
            if attempt:
                self._sleep(self._backoff * (2 ** (attempt - 1)))
            yield attempt

    # -- calls ----------------------------------------------------------------

    def complete(
        self,
        prompt: str,
        *,
        max_tokens: int,
        temperature: float,
        top_p: float,
        logprobs: int | None = None,
        stop: Sequence[str] | None = None,
    ) -> CompletionResult:
        payload = self._payload(
            prompt,
            max_tokens=max_tokens,
            temperature=temperature,
            top_p=top_p,
            stream=False,
            logprobs=logprobs,
            stop=stop,
        )
        last_error: Exception | None = None
        for _ in self._attempts():
            try:
                resp = self._client.post(self._url, json=payload, headers=self._headers())
            except httpx.TransportError as e:
                last_error = e
                continue
            if resp.status_code >= 500:
                last_error = EndpointError(f"server error {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"request rejected {resp.status_code}: {resp.text[:200]}")
            return self._parse_completion(resp)
        raise EndpointError(
            f"completion failed after {self._retries} attempts: {last_error}"
        ) from last_error

    def _parse_completion(self, resp: httpx.Response) -> CompletionResult:
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice.get("text", "")
            finish = choice.get("finish_reason")
            top_logprobs = None
            lp = choice.get("logprobs")
            if lp and lp.get("top_logprobs"):
                top_logprobs = {str(k): float(v) for k, v in lp["top_logprobs"][0].items()}
            usage = data.get("usage") or {}
            completion_tokens = usage.get("completion_tokens")
            if completion_tokens is not None:
                completion_tokens = int(completion_tokens)
        except (KeyError, IndexError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise EndpointError(f"malformed completion payload: {e}") from e
        return CompletionResult(
            text=text,
            finish_reason=finish,
            top_logprobs=top_logprobs,
            completion_tokens=completion_tokens,
        )

    def stream_completion(
        self,
        prompt: str,
        *,
        max_tokens: int,
        temperature: float,
        top_p: float,
        stop: Sequence[str] | None = None,
    ) -> Iterator[StreamChunk]:
        """Yield text deltas. Retries only cover failures before first output."""
        payload = self._payload(
            prompt,
            max_tokens=max_tokens,
            temperature=temperature,
            top_p=top_p,
            stream=True,
            logprobs=None,
            stop=stop,
        )
        last_error: Exception | None = None
        for _ in self._attempts():
            yielded = False
            try:
                with self._client.stream(
                    "POST", self._url, json=payload, headers=self._headers()
                ) as resp:
                    if resp.status_code >= 500:
                        resp.read()
                        last_error = EndpointError(f"server error {resp.status_code}")
                        continue
                    if resp.status_code >= 400:
                        resp.read()
                        raise EndpointError(
                            f"request rejected {resp.status_code}: {resp.text[:200]}"
                        )
                    for chunk in self._iter_sse(resp):
                        yielded = True
                        yield chunk
                return
            except httpx.TransportError as e:
                if yielded:
                    raise EndpointError(f"stream broke mid-generation: {e}") from e
                last_error = e
                continue
        raise EndpointError(
            f"streaming failed after {self._retries} attempts: {last_error}"
        ) from last_error

    def _iter_sse(self, resp: httpx.Response) -> Iterator[StreamChunk]:
        for raw in resp.iter_lines():
            line = raw.strip()
            if not line or not line.startswith("data:"):
                continue
            body = line[len("data:") :].strip()
            if body == "[DONE]":
                return
            try:
                event = json.loads(body)
                choice = event["choices"][0]
            except (json.JSONDecodeError, KeyError, IndexError, TypeError) as e:
                raise EndpointError(f"malformed stream event: {e}") from e
            yield StreamChunk(
                text=choice.get("text", ""),
                finish_reason=choice.get("finish_reason"),
            )
