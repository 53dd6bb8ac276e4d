from typing import Dict, List

from .base import BaseFramework
from .variants import (FixedChunkFramework, HatFramework, HatNoPdFramework, PcOnlyFramework,
                       SdOnlyFramework, SdPdFramework, UShapeFramework)


class FrameworkFactory:
    """Factory for the framework variants a scenario can select."""

    def __init__(self):
        self.frameworks: List[BaseFramework] = [
            HatFramework(),
            HatNoPdFramework(),
            UShapeFramework(),
            FixedChunkFramework(),
            PcOnlyFramework(),     # ablations of the three key strategies
            SdOnlyFramework(),
            SdPdFramework(),
        ]
        self._by_name: Dict[str, BaseFramework] = {fw.get_name(): fw for fw in self.frameworks}

    def get_framework(self, name: str) -> BaseFramework:
        try:
            return self._by_name[name]
        except KeyError:
            raise ValueError(f"unknown framework {name!r}, expected one of {self.get_supported_frameworks()}") from None

    def get_supported_frameworks(self) -> List[str]:
        return [fw.get_name() for fw in self.frameworks]
