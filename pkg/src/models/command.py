"""CLI command result model"""

from dataclasses import dataclass, asdict, field
from typing import List


@dataclass
class CommandResult:
    exit_code: int
    artifacts_written: List[str] = field(default_factory=list)
    summary: str = ''

    def to_dict(self) -> dict:
        return asdict(self)
