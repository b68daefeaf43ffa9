import logging
import os
from pathlib import Path

from cdmp_bag.config import database as database_str

app_dir = Path(os.environ.get("CDMP_BAG_HOME", Path.home() / ".cdmp-bag"))
path_to_default_db = app_dir / "episodes.db"

log_params = dict(
    format="%(asctime)s : %(levelname)s - %(message)s",
    datefmt="%d-%b-%Y %H:%M:%S",
)


def configure_logging(level: int = 30, logfile: str = None) -> None:
    """Configure the root logger once per process

    Args:
        level (int): Logging level. Defaults to 30.
        logfile (str): Path to log file. Defaults to stderr.
    """
    params = dict(log_params, level=int(level), force=True)
    if logfile:
        params["filename"] = logfile
    logging.basicConfig(**params)


def database_url(url: str = None) -> str:
    """Explicit URL, then the environment, then the sqlite file in ``app_dir``"""
    url = url or database_str
    if not url:
        os.makedirs(app_dir, exist_ok=True)
        url = f"sqlite:///{path_to_default_db.as_posix()}"
    return url


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_atomic(path, text: str) -> None:
    """Write through a sibling temporary file so readers never see partial output"""
    path = Path(path)
    temporary = path.with_name(f".{path.name}.tmp")
    temporary.write_text(text, encoding="utf-8", newline="")
    os.replace(temporary, path)
