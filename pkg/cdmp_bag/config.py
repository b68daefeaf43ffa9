from dotenv import load_dotenv
from os import environ

load_dotenv()


def _env(key: str, default=None):
    """``CDMP_BAG_<KEY>`` (the CLI's envvar prefix) or the bare key"""
    return environ.get(f"CDMP_BAG_{key.upper()}", environ.get(key, default))


loglevel: int = int(_env("loglevel", 30))
logfile: str = _env("logfile", "")
seed: int = int(_env("seed", 0))
dt: float = float(_env("dt", 0.001))
database: str = _env("database", "")

assert loglevel in (
    0,
    10,
    20,
    30,
    40,
    50,
), f"Log level '{loglevel}' is not one of 0, 10, 20, 30, 40, 50"

assert dt > 0, f"Integration step must be positive, got {dt}"
