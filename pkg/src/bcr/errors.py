"""Exception types shared across the bcr package."""


class BcrError(Exception):
    """Base class for all domain errors raised by bcr."""


class MalformedRecord(BcrError):
    def __init__(self, line_number, reason):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class DuplicateId(BcrError):
    def __init__(self, problem_id):
        self.problem_id = problem_id
        super().__init__(f"duplicate problem id {problem_id!r}")


class EmptyCorpus(BcrError):
    pass


class ProbeFailure(BcrError):
    def __init__(self, problem_id, cause):
        self.problem_id = problem_id
        self.cause = cause
        super().__init__(f"probe failed for {problem_id!r}: {cause}")


class MissingDifficulty(BcrError):
    def __init__(self, problem_id):
        self.problem_id = problem_id
        super().__init__(f"problem {problem_id!r} has no difficulty estimate")


class CorpusTooSmall(BcrError):
    pass


class EmptyProbeSet(BcrError):
    pass


class NonFiniteReward(BcrError):
    pass


class BadMix(BcrError):
    pass


class EndpointUnavailable(BcrError):
    pass


class MalformedResponse(BcrError):
    pass


class IoFailure(BcrError):
    pass
