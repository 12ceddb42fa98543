"""Minimal chat-completion client for caption generation.

Any failure (timeout, HTTP status, unparseable payload) is reported as a
typed error so the pipeline can fall back to template captions; the client
never raises anything else.
"""

from __future__ import annotations

import json
import logging
import re

import httpx

from .config import LlmConfig
from .errors import RiskforgeError

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are a driving-safety annotator. Given structured facts about a "
    "planned ego-vehicle motion, write exactly three sections delimited by "
    "the headers [SCENE], [MOTION], and [RISK]. [SCENE]: describe the "
    "driving scene (road layout, traffic participants). [MOTION]: analyze "
    "the planned motion and its risk points. [RISK]: one concluding "
    "sentence that names the primary risk category verbatim."
)

_SECTION_RE = re.compile(
    r"\[SCENE\](?P<scene>.*?)\[MOTION\](?P<motion>.*?)\[RISK\](?P<risk>.*)",
    re.DOTALL,
)


class LlmError(RiskforgeError):
    pass


class Timeout(LlmError):
    pass


class HttpStatus(LlmError):
    def __init__(self, code: int):
        super().__init__(f"endpoint returned HTTP {code}")
        self.code = code


class MalformedResponse(LlmError):
    pass


def build_user_prompt(facts: dict) -> str:
    """Serialize label, kinematics, and scenario metadata for the model.
    Image files are referenced by path; binary upload is out of scope."""
    return json.dumps(facts, sort_keys=True)


def parse_sections(text: str) -> tuple[str, str, str]:
    m = _SECTION_RE.search(text)
    if not m:
        raise MalformedResponse("response does not contain [SCENE]/[MOTION]/[RISK] sections")
    scene, motion, risk = (m.group(g).strip() for g in ("scene", "motion", "risk"))
    if not scene or not motion or not risk:
        raise MalformedResponse("one or more sections are empty")
    return scene, motion, risk


def request_caption(cfg: LlmConfig, facts: dict) -> tuple[str, str, str]:
    """POST a chat completion and parse the three caption sections.

    Raises Timeout / HttpStatus / MalformedResponse; the caller decides how
    to fall back.
    """
    if not cfg.endpoint:
        raise MalformedResponse("no endpoint configured")
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    payload = {
        "model": cfg.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": build_user_prompt(facts)},
        ],
    }
    try:
        response = httpx.post(cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout_s)
    except httpx.TimeoutException as exc:
        raise Timeout(f"no response within {cfg.timeout_s}s") from exc
    except httpx.HTTPError as exc:
        raise HttpStatus(0) from exc
    if response.status_code != 200:
        raise HttpStatus(response.status_code)
    try:
        content = response.json()["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"unexpected completion payload: {exc}") from exc
    if not isinstance(content, str):
        raise MalformedResponse("completion content is not text")
    return parse_sections(content)
