"""Chat-completions client used by the LLM candidate generator.

Speaks the common JSON wire protocol: POST {model, messages, temperature} to
a configurable URL, read the first choice's message content.  Credentials
come from an environment variable.  Record mode persists each raw response
to a directory; replay mode reads those files back instead of issuing HTTP,
which is how search fixtures run offline.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import requests

_RETRYABLE = {429, 500, 502, 503, 504}
_CODE_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


class GeneratorUnreachable(RuntimeError):
    """The endpoint kept failing after bounded retries."""


@dataclass(frozen=True)
class LlmConfig:
    url: str
    model: str
    temperature: float = 1.0
    api_key_env: str = "EVOCACHE_API_KEY"
    max_retries: int = 3
    timeout_s: float = 120.0
    record_dir: Optional[str] = None
    replay_dir: Optional[str] = None


def extract_code_block(text: str) -> Optional[str]:
    """First fenced code block, or None when the reply has no fence."""
    m = _CODE_BLOCK.search(text)
    if m is None:
        return None
    return m.group(1).strip()


class ChatClient:
    def __init__(self, config: LlmConfig):
        self.config = config
        self._calls = 0
        if config.record_dir:
            Path(config.record_dir).mkdir(parents=True, exist_ok=True)

    def complete(self, prompt: str) -> str:
        """One chat completion; returns the reply content."""
        call_index = self._calls
        self._calls += 1
        if self.config.replay_dir:
            path = Path(self.config.replay_dir) / f"{call_index:05d}.json"
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            return payload["choices"][0]["message"]["content"]
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error = None
        for attempt in range(self.config.max_retries):
            try:
                resp = requests.post(self.config.url, json=body, headers=headers,
                                     timeout=self.config.timeout_s)
                if resp.status_code in _RETRYABLE:
                    last_error = f"HTTP {resp.status_code}"
                    time.sleep(2 ** attempt)
                    continue
                resp.raise_for_status()
                payload = resp.json()
                if self.config.record_dir:
                    path = Path(self.config.record_dir) / f"{call_index:05d}.json"
                    with open(path, "w", encoding="utf-8") as fh:
                        json.dump(payload, fh, indent=2)
                return payload["choices"][0]["message"]["content"]
            except requests.RequestException as err:
                last_error = str(err)
                time.sleep(2 ** attempt)
        raise GeneratorUnreachable(f"giving up after {self.config.max_retries} attempts: {last_error}")
