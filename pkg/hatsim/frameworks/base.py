from abc import ABC, abstractmethod
from dataclasses import dataclass

from ..chunking import ChunkPlan, solve_chunk_size, split_prompt
from ..monitor import CloudStateEstimate, DelayModel


@dataclass(frozen=True)
class ChunkContext:
    """What a framework sees when a request arrives."""
    prompt_len: int
    predictor: DelayModel
    estimate: CloudStateEstimate
    beta_up: float
    A: float
    P: int
    fixed_chunk_size: int


class BaseFramework(ABC):
    """Base class for device-cloud inference variants inside the U-shaped split."""

    speculative: bool = False
    parallel_drafting: bool = False
    # chunk uploads proceed while earlier chunks are in the cloud
    overlap_prefill: bool = True

    @abstractmethod
    def plan_chunks(self, ctx: ChunkContext) -> ChunkPlan:
        """Split the prompt of an arriving request."""
        pass

    @abstractmethod
    def get_name(self) -> str:
        """Return the scenario name of this variant."""
        pass


class WholePromptMixin:
    """Prefill uploads the whole prompt as one chunk."""

    def plan_chunks(self, ctx: ChunkContext) -> ChunkPlan:
        return split_prompt(ctx.prompt_len, ctx.prompt_len)


class SolvedChunkMixin:
    """Chunk size solved against the monitored cloud state at arrival."""

    def plan_chunks(self, ctx: ChunkContext) -> ChunkPlan:
        size = solve_chunk_size(ctx.predictor, ctx.estimate, ctx.beta_up, ctx.A, ctx.P, ctx.prompt_len)
        return split_prompt(ctx.prompt_len, size)
