"""Exception hierarchy shared by every module of the package."""


class AgdError(Exception):
    """Base class for all errors raised by agd."""


class InvalidInputError(AgdError, ValueError):
    """Arguments with the wrong shape, range or content."""


class ParseError(InvalidInputError):
    """Malformed dataset file. ``row`` and ``column`` are 1-based when known."""

    def __init__(self, message, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        full = f"{': '.join([', '.join(loc), message]) if loc else message}"
        super().__init__(full)
        self.path = path
        self.row = row
        self.column = column


class DegenerateError(AgdError, ValueError):
    """Zero-variance target, single-class labels, identical score vectors."""


class NotSplittableError(AgdError):
    """Attempt to split a parcel made of a single feature."""


class NoChildrenError(AgdError):
    """Children requested for a leaf of the dendrogram."""


class FoldError(AgdError):
    """A cross-validation fold failed; ``fold`` is its 0-based index."""

    def __init__(self, fold, cause):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold
        self.cause = cause


class IncomparableRunsError(AgdError):
    """Run reports that were not produced on the same folds."""
