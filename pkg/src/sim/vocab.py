"""
封闭词表与指令编码

词表固定, 全部 id < 64; id 0 为填充符。
"""

from typing import List, Sequence

from src.core.errors import VocabularyError

PAD_ID = 0
VOCAB_SIZE = 64

VOCAB: List[str] = [
    "<pad>",
    "go", "to", "the", "then", "pick", "it", "place", "in", "goal",
    "and", "open", "carry", "disc", "latch",
    "red", "blue", "green", "yellow",
]

_WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}

assert len(VOCAB) <= VOCAB_SIZE


def encode_instruction(text: str, length: int = 8) -> List[int]:
    """
    指令文本 -> 定长 id 序列(截断或右侧填充)

    Raises:
        VocabularyError: 出现词表外的词
    """
    ids = []
    for word in text.lower().split():
        if word not in _WORD_TO_ID:
            raise VocabularyError(f"词表外的词: {word!r}")
        ids.append(_WORD_TO_ID[word])
    ids = ids[:length]
    return ids + [PAD_ID] * (length - len(ids))


def decode_instruction(ids: Sequence[int]) -> str:
    words = []
    for i in ids:
        if not 0 <= i < len(VOCAB):
            raise VocabularyError(f"id 越界: {i}")
        if i != PAD_ID:
            words.append(VOCAB[i])
    return " ".join(words)
