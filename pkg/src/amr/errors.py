"""Exception types raised across the toolkit."""


class AMRError(Exception):
    """Base class for all toolkit errors."""


class DataError(AMRError, ValueError):
    """Input data is malformed or violates an invariant."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
            if column is not None:
                loc += f":{column}"
        super().__init__(f"{loc}: {message}" if loc else message)


class NodataPresent(DataError):
    def __init__(self, count, path=None):
        self.count = count
        where = f" in {path}" if path is not None else ""
        super().__init__(f"{count} NODATA cell(s){where}; fill or crop the raster before loading")


class DuplicateId(DataError):
    pass


class BadBinary(DataError):
    pass


class AllRingsEmpty(DataError):
    def __init__(self, distance):
        self.distance = distance
        super().__init__(f"no raster cell lies on the ring at d={distance!r} for any intervention point")


class TooLarge(AMRError, ValueError):
    pass


class NumericError(AMRError, ArithmeticError):
    """The requested quantity is not estimable on this instance."""


class NoUsableRows(NumericError):
    pass


class DegenerateArm(NumericError):
    pass


class SingularDesign(NumericError):
    pass


class SingularFit(NumericError):
    pass
