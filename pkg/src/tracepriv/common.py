"""Small enums shared across modules."""

import enum


class ReportKind(enum.Enum):
    """Which database a diagnosis lands in: clinically confirmed or self-declared."""

    CONFIRMED = "CONFIRMED"
    SELF_REPORTED = "SELF_REPORTED"


class ReportMode(enum.Enum):
    """What a diagnosed user uploads: their own broadcast tokens or the tokens they heard."""

    OWN_TOKENS = "OWN_TOKENS"
    CONTACT_TOKENS = "CONTACT_TOKENS"
