"""
Exception hierarchy for the toolkit.

Every error carries the process exit code the CLI maps it to: 1 for
validation problems (bad inputs, bad configuration, bad usage) and 2 for
I/O failures.
"""

from __future__ import annotations

from typing import Optional


class UqFairError(Exception):
    exit_code = 1


class ValidationError(UqFairError):
    """
    An input violates a documented rule. `instance_id` names the offending
    manifest instance when there is one.
    """

    def __init__(self, rule: str, instance_id: Optional[str] = None):
        self.rule = rule
        self.instance_id = instance_id
        prefix = f"instance {instance_id!r}: " if instance_id is not None else ""
        super().__init__(prefix + rule)


class ParseError(ValidationError):
    pass


class MissingGroup(ValidationError):
    def __init__(self, group: int):
        self.group = group
        super().__init__(f"group label {group} is absent; both subgroups are required")


class TensorFormatError(ValidationError):
    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")


class BadMagic(TensorFormatError):
    pass


class TruncatedPayload(TensorFormatError):
    pass


class UnknownDtype(TensorFormatError):
    pass


class DomainError(ValidationError):
    pass


class NegativeVariance(ValidationError):
    pass


class BadBound(ValidationError):
    pass


class BadStep(ValidationError):
    pass


class ScopeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class EmptyCell(ValidationError):
    def __init__(self, class_index: int, group: int, class_name: Optional[str] = None, kind: str = "class"):
        self.class_index = class_index
        self.group = group
        name = class_name if class_name is not None else str(class_index)
        super().__init__(f"{kind} {name} has no instances in group {group}; cannot balance")


class NonFiniteLoss(ValidationError):
    pass


class DivergedLoss(ValidationError):
    def __init__(self, epoch: int, batch: int, member: int = 0):
        self.epoch = epoch
        self.batch = batch
        self.member = member
        super().__init__(
            f"training loss became non-finite (member {member}, epoch {epoch}, batch {batch})"
        )


class BadConfig(ValidationError):
    pass


class UsageError(ValidationError):
    pass


class IoFailure(UqFairError):
    exit_code = 2
