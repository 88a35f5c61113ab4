"""Few-shot pairwise judge prompts (chat-assistant and summarization variants)."""

from __future__ import annotations

from typing import Sequence

from ..confidence import Shot
from ..core import Label, PreferenceInstance

SYSTEM_PROMPT = "You are a helpful assistant."

_CHAT_INTRO = (
    "Given a question and two assistant's answers to the question, an annotator chose which assistant's answer "
    "is preferred. Given examples of the annotator's decision, predict the annotator's verdict on the given example. "
    "If Assistant A's response is preferred to Assistant B's, the annotator chose \"[[A]]\". "
    "If Assistant B's response is preferred to Assistant A's, the annotator chose \"[[B]]\"."
)
_CHAT_BLOCK = (
    "[Question]\n{question}\n\n"
    "[Assistant A's response]\n{assistant_a}\n\n"
    "[Assistant B's response]\n{assistant_b}\n\n"
)

_SUMMARY_INTRO = (
    "Given a document and two summaries of the document, an annotator chose which summary is preferred. "
    "Given examples of the annotator's decision, predict the annotator's verdict on the given example. "
    "If Summary A is preferred to Summary B, the annotator chose \"[[A]]\". "
    "If Summary B is preferred to Summary A, the annotator chose \"[[B]]\"."
)
_SUMMARY_BLOCK = "[Document]\n{document}\n\n[Summary A]\n{summary_a}\n\n[Summary B]\n{summary_b}\n\n"

_TIE_SENTENCE = " If neither is preferred, the annotator chose \"[[tie]]\"."
_VERDICT = 'Verdict (either "[[A]]" or "[[B]]"):'
_VERDICT_TIE = 'Verdict (either "[[A]]", "[[B]]" or "[[tie]]"):'

TEMPLATES = {
    "chat": (_CHAT_INTRO, _CHAT_BLOCK, ("question", "assistant_a", "assistant_b")),
    "summarization": (_SUMMARY_INTRO, _SUMMARY_BLOCK, ("document", "summary_a", "summary_b")),
}


def verdict_token(label: Label) -> str:
    return f"[[{label.value}]]"


def _fill(block: str, names: tuple, inst: PreferenceInstance) -> str:
    return block.format(**dict(zip(names, (inst.query, inst.response_a, inst.response_b))))


def render_prompt(instance: PreferenceInstance, shots: Sequence[Shot], template: str = "chat", allow_tie: bool = False) -> str:
    """User-turn text: instructions, the shots in plan order, then the instance to judge."""
    try:
        intro, block, names = TEMPLATES[template]
    except KeyError:
        raise ValueError(f"unknown prompt template {template!r}") from None
    parts = [intro + (_TIE_SENTENCE if allow_tie else "") + "\n\n"]
    for shot in shots:
        parts.append(_fill(block, names, shot.instance))
        parts.append(f"[Verdict]:\n{verdict_token(shot.label)}\n\n")
    parts.append(_fill(block, names, instance))
    parts.append(_VERDICT_TIE if allow_tie else _VERDICT)
    return "".join(parts)


def messages(instance: PreferenceInstance, shots: Sequence[Shot], template: str = "chat", allow_tie: bool = False) -> list:
    return [
        {"role": "system", "content": SYSTEM_PROMPT},
        {"role": "user", "content": render_prompt(instance, shots, template, allow_tie)},
    ]
