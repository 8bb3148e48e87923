"""Per-step event flag bits recorded in run traces."""

CONTROLLABILITY_LOSS = 0x1
OBSERVABILITY_LOSS = 0x2
WEIGHT_COLLAPSE = 0x4
DIVERGED = 0x8

NAMES = {
    CONTROLLABILITY_LOSS: "controllability_loss",
    OBSERVABILITY_LOSS: "observability_loss",
    WEIGHT_COLLAPSE: "weight_collapse",
    DIVERGED: "diverged",
}


def describe(bits: int) -> str:
    """Comma-separated names of the set bits, or 'none'."""
    names = [name for bit, name in NAMES.items() if bits & bit]
    return ",".join(names) if names else "none"
