version_info = (0, 1, 0, "dev")
__version__ = ".".join(map(str, version_info))
