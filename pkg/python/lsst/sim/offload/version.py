__all__ = ["__version__", "__repo_version__", "__fingerprint__", "__dependency_versions__"]
__version__ = "1.0.0"
__repo_version__ = "1.0.0"
__fingerprint__ = "unknown"
__dependency_versions__ = {}
