class VolbenchError(ValueError):
    """Data problem that turns a sample into a skipped record.

    ``reason`` is the machine-readable code written to the record.
    """

    reason = "invalid-input"
