"""Tokenizer-free token counting.

The budget enforced downstream is tokenizer-specific in reality; this
counter is a documented stand-in: non-ASCII runs count ceil(bytes/3)
(one token per CJK character), ASCII runs count whitespace-delimited
words. A real tokenizer can be plugged anywhere a counter is accepted.
"""

from __future__ import annotations

import math
from typing import Callable

TokenCounter = Callable[[str], int]


def count_tokens(text: str) -> int:
    total = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i].isascii():
            j = i
            while j < n and text[j].isascii():
                j += 1
            total += len(text[i:j].split())
        else:
            j = i
            while j < n and not text[j].isascii():
                j += 1
            total += math.ceil(len(text[i:j].encode("utf-8")) / 3)
        i = j
    return total
