"""Judge backed by a chat-completions style HTTP endpoint.

The label distribution for one simulated annotator is read from the
per-token probabilities at the verdict position, renormalised over the
recognised verdict tokens. If the provider returns no probabilities, the
verdict is sampled several times and the vote frequencies are used instead.
"""

from __future__ import annotations

import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import httpx
import numpy as np

from ..confidence import AnnotatorSimulation, ShotPlan
from ..core import Label, PreferenceInstance
from ..errors import ConfigError, ResponseFormatError, TransportError
from .base import Backend, JudgeSpec
from .prompts import messages

logger = logging.getLogger(__name__)

API_KEY_ENV = "JUDGE_API_KEY"
_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}
_VERDICT_TEXT = re.compile(r"\[\[\s*(A|B|tie)\s*\]\]", re.IGNORECASE)


def _token_label(token: str) -> Optional[Label]:
    core = token.strip().strip("[]\"'`").strip().lower()
    return {"a": Label.FIRST, "b": Label.SECOND, "tie": Label.TIE}.get(core)


def distribution_from_logprobs(content: list, labels: Sequence[Label]) -> dict:
    """Probability per label at the first verdict position of ``content``.

    ``content`` is the chat-completions ``logprobs.content`` list. A position
    counts as the verdict when its token names a label and it either starts
    with ``[[`` or follows text ending in ``[[``; failing that, the first
    token that names a label is used.
    """
    text = ""
    fallback = None
    chosen = None
    for pos in content:
        tok = pos.get("token", "")
        lab = _token_label(tok)
        if lab is not None:
            if tok.lstrip().startswith("[[") or text.rstrip().endswith("[["):
                chosen = pos
                break
            if fallback is None:
                fallback = pos
        text += tok
    chosen = chosen or fallback
    if chosen is None:
        raise ResponseFormatError("no verdict token found in the response")
    candidates = chosen.get("top_logprobs") or [{"token": chosen["token"], "logprob": chosen["logprob"]}]
    mass = {lab: 0.0 for lab in labels}
    for cand in candidates:
        lab = _token_label(cand.get("token", ""))
        if lab in mass:
            mass[lab] += float(np.exp(float(cand["logprob"])))
    total = sum(mass.values())
    if not total > 0:
        raise ResponseFormatError("no probability mass on recognised verdict tokens")
    return {lab: m / total for lab, m in mass.items()}


def verdict_from_text(text: str) -> Optional[Label]:
    m = _VERDICT_TEXT.search(text or "")
    return None if m is None else Label.parse(m.group(1))


class RemoteJudge(Backend):
    deterministic = False

    def __init__(self, spec: JudgeSpec, client: Optional[httpx.Client] = None, sleep=time.sleep):
        self.spec = spec
        p = spec.params
        for key in ("endpoint", "model"):
            if key not in p:
                raise ConfigError(f"remote judge {spec.id!r} needs params.{key}")
        self.endpoint = p["endpoint"]
        self.model = p["model"]
        self.temperature = float(p.get("temperature", 0.0))
        self.max_in_flight = int(p.get("max_in_flight", 4))
        self.retries = int(p.get("retries", 3))
        self.backoff = float(p.get("backoff", 0.5))
        self.samples = int(p.get("samples", 5))
        self.top_logprobs = int(p.get("top_logprobs", 20))
        self.template = p.get("template", "chat")
        self.allow_tie = bool(p.get("allow_tie", False))
        self.labels = (Label.FIRST, Label.SECOND, Label.TIE) if self.allow_tie else (Label.FIRST, Label.SECOND)
        if self.max_in_flight < 1 or self.samples < 1 or self.retries < 0:
            raise ConfigError(f"remote judge {spec.id!r}: max_in_flight and samples must be >= 1, retries >= 0")
        headers = {}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = client or httpx.Client(timeout=float(p.get("timeout", 60.0)))
        self.headers = headers
        self._sleep = sleep

    def _body(self, instance, shots) -> dict:
        return {
            "model": self.model,
            "messages": messages(instance, shots, self.template, self.allow_tie),
            "temperature": self.temperature,
            "logprobs": True,
            "top_logprobs": self.top_logprobs,
            "max_tokens": 16,
        }

    def _post(self, body: dict) -> dict:
        status = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.endpoint, json=body, headers=self.headers)
            except httpx.HTTPError as exc:
                logger.warning("request to %s failed (%s), attempt %d", self.endpoint, exc, attempt + 1)
                status = type(exc).__name__
                continue
            status = resp.status_code
            if status == 200:
                try:
                    return resp.json()
                except ValueError:
                    raise ResponseFormatError("provider returned a non-JSON body") from None
            if status not in _RETRY_STATUS:
                break
        raise TransportError(f"judge {self.spec.id!r}: request failed after {attempt + 1} attempt(s)", status)

    @staticmethod
    def _choice(payload: dict) -> dict:
        try:
            return payload["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise ResponseFormatError("response has no choices") from None

    def row(self, instance: PreferenceInstance, shots) -> np.ndarray:
        body = self._body(instance, shots)
        choice = self._choice(self._post(body))
        content = (choice.get("logprobs") or {}).get("content")
        if content:
            dist = distribution_from_logprobs(content, self.labels)
            return np.array([dist[lab] for lab in self.labels])

        votes = {lab: 0 for lab in self.labels}
        replies = [choice]
        for _ in range(self.samples - 1):
            replies.append(self._choice(self._post(body)))
        for rep in replies:
            lab = verdict_from_text((rep.get("message") or {}).get("content", ""))
            if lab in votes:
                votes[lab] += 1
        total = sum(votes.values())
        if total == 0:
            raise ResponseFormatError(f"none of {len(replies)} sampled replies contained a verdict")
        return np.array([votes[lab] / total for lab in self.labels])

    def simulate_many(self, instances: Sequence[PreferenceInstance], plan: ShotPlan) -> list[AnnotatorSimulation]:
        jobs = [(inst, plan.shots[j]) for inst in instances for j in range(plan.N)]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            rows = list(pool.map(lambda job: self.row(*job), jobs))
        out = []
        for i, inst in enumerate(instances):
            block = np.vstack(rows[i * plan.N : (i + 1) * plan.N])
            out.append(AnnotatorSimulation(inst.id, self.spec.id, self.labels, block))
        return out

    def simulate(self, instance: PreferenceInstance, plan: ShotPlan) -> AnnotatorSimulation:
        return self.simulate_many([instance], plan)[0]
