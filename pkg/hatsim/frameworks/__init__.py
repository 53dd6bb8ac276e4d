from .base import BaseFramework, ChunkContext
from .variants import (FixedChunkFramework, HatFramework, HatNoPdFramework, PcOnlyFramework,
                       SdOnlyFramework, SdPdFramework, UShapeFramework)
from .factory import FrameworkFactory

FRAMEWORK_NAMES = frozenset(FrameworkFactory().get_supported_frameworks())

__all__ = ['BaseFramework', 'ChunkContext', 'HatFramework', 'HatNoPdFramework', 'UShapeFramework',
           'FixedChunkFramework', 'PcOnlyFramework', 'SdOnlyFramework', 'SdPdFramework',
           'FrameworkFactory', 'FRAMEWORK_NAMES']
