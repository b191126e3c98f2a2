class SiteAddressError(Exception):
    """Base class for numerical and planning failures."""


class ValidityViolation(SiteAddressError):
    pass


class IntegrationFailure(SiteAddressError):
    pass


class FitFailure(SiteAddressError):
    pass


class DegenerateFit(FitFailure):
    pass


class Infeasible(SiteAddressError):
    pass


class ZeroGradient(SiteAddressError):
    pass
