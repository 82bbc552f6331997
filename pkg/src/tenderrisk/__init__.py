"""Multi-class tender outcome prediction with class-imbalance weight search
and rolling-window temporal backtesting."""

__version__ = "0.1.0"
