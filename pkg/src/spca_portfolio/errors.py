class SpcaPortfolioError(Exception):
    pass


class PanelError(SpcaPortfolioError):
    pass


class NumericsError(SpcaPortfolioError):
    pass


class ConvergenceError(NumericsError):
    def __init__(self, message: str, offDiagonalNorm: float):
        super().__init__(f"{message} (off-diagonal norm {offDiagonalNorm:.3e})")
        self.offDiagonalNorm = offDiagonalNorm


class PotentialFitError(SpcaPortfolioError):
    pass


class AllocationError(SpcaPortfolioError):
    pass


class BacktestError(SpcaPortfolioError):
    pass


class ConfigError(SpcaPortfolioError):
    pass


class BasisError(SpcaPortfolioError):
    pass
