"""Access to the bundled default configuration files."""

from importlib import resources


def _read(name: str) -> str:
    return resources.files(__package__).joinpath(name).read_text()


def read_text(name: str) -> str:
    """Read any bundled data file by relative name."""
    return _read(name)


def default_model_text() -> str:
    return _read("model.json")


def default_scene_text() -> str:
    return _read("scene.json")


def default_controller_text() -> str:
    return _read("controller.json")


def default_library_text() -> str:
    return _read("library.json")


def default_vocabulary_text() -> str:
    return _read("vocabulary.json")
