from importlib import metadata

try:
    __version__ = metadata.version("cdmp-bag")
except metadata.PackageNotFoundError:
    __version__ = "0.0.0"
