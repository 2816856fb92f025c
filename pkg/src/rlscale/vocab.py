"""The fixed token vocabulary shared by task generators and policies."""

DIGITS = tuple(range(10))
PLUS = 10
MINUS = 11
TIMES = 12
EQUALS = 13
REVERSE = 14
ANSWER = 15  # answer delimiter, the analogue of a boxed final answer
EOS = 16

VOCAB_SIZE = 17

SYMBOLS = ("0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "=", "R", "#", "$")


def render(tokens) -> str:
    """Human-readable form of a token sequence (``#`` is the answer delimiter, ``$`` is EOS)."""
    return "".join(SYMBOLS[t] if 0 <= t < VOCAB_SIZE else "?" for t in tokens)
