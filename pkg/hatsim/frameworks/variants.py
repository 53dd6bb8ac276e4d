from ..chunking import ChunkPlan, split_prompt
from .base import BaseFramework, ChunkContext, SolvedChunkMixin, WholePromptMixin


class HatFramework(SolvedChunkMixin, BaseFramework):
    """Prompt chunking, speculative decoding and parallel drafting."""
    speculative = True
    parallel_drafting = True

    def get_name(self) -> str:
        return 'hat'


class HatNoPdFramework(SolvedChunkMixin, BaseFramework):
    speculative = True

    def get_name(self) -> str:
        return 'hat-no-pd'


class UShapeFramework(WholePromptMixin, BaseFramework):
    """Plain U-shaped inference: whole-prompt prefill, one token per round trip."""

    def get_name(self) -> str:
        return 'ushape'


class FixedChunkFramework(BaseFramework):
    """Static chunk size; the cloud sees chunks only after the whole prompt is uploaded."""
    overlap_prefill = False

    def plan_chunks(self, ctx: ChunkContext) -> ChunkPlan:
        return split_prompt(ctx.prompt_len, min(ctx.fixed_chunk_size, ctx.prompt_len))

    def get_name(self) -> str:
        return 'fixed-chunk'


class PcOnlyFramework(SolvedChunkMixin, BaseFramework):
    def get_name(self) -> str:
        return 'pc-only'


class SdOnlyFramework(WholePromptMixin, BaseFramework):
    speculative = True

    def get_name(self) -> str:
        return 'sd-only'


class SdPdFramework(WholePromptMixin, BaseFramework):
    speculative = True
    parallel_drafting = True

    def get_name(self) -> str:
        return 'sd-pd'
