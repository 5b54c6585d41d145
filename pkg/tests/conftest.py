from pathlib import Path
from typing import Callable

import pytest

from stochsym.config import Settings
from stochsym.expr import Expression, VariableSpace
from stochsym.fixtures import load_packaged
from stochsym.modelfile import ModelFile
from stochsym.parsing import parse


@pytest.fixture
def settings() -> Settings:
    """The default settings."""
    return Settings()


@pytest.fixture
def scalar_space() -> VariableSpace:
    """One state variable and one Wiener process."""
    return VariableSpace(1, 1)


@pytest.fixture
def expr(scalar_space: VariableSpace) -> Callable[[str], Expression]:
    """Parse text over the scalar space."""

    def build(text: str) -> Expression:
        return parse(text, scalar_space)

    return build


@pytest.fixture
def packaged() -> Callable[[str], ModelFile]:
    """Load a model shipped with the package by file name."""
    return load_packaged


@pytest.fixture
def ex1(packaged) -> ModelFile:
    """dy = (e^-y - e^-2y / 2) dt + e^-y dw, with symmetry e^-y d/dy."""
    return packaged("ex1.sde")


@pytest.fixture
def ex3(packaged) -> ModelFile:
    """A two-dimensional system with a symmetry straightened by a named map."""
    return packaged("ex3.sde")


@pytest.fixture
def ex4(packaged) -> ModelFile:
    """A linear system with two commuting symmetries."""
    return packaged("ex4.sde")


@pytest.fixture
def ex6(packaged) -> ModelFile:
    """An equation with a genuinely random symmetry."""
    return packaged("ex6.sde")


@pytest.fixture
def ex7(packaged) -> ModelFile:
    """dy = y dt + y dw with a random symmetry and a kernel function."""
    return packaged("ex7.sde")


@pytest.fixture
def ex8(packaged) -> ModelFile:
    """dy = dt + y dw, whose random symmetry fails the compatibility condition."""
    return packaged("ex8.sde")


@pytest.fixture
def model_dir(tmp_path: Path) -> Path:
    """An empty directory for model files written by a test."""
    folder = tmp_path / "models"
    folder.mkdir()
    return folder
