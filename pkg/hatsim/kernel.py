"""
Discrete-event simulation kernel.

Events are processed in strict (time_ns, seq) order from a heap; seq is a
global counter assigned at scheduling time. Each device owns three FIFO
resources (compute, uplink, downlink) and the cloud owns one work queue and a
P-stage pipeline. Token content comes from the toy models and never depends
on timing.
"""

import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .chunking import ChunkPlan
from .cloud import (DECODE_ONE, PREFILL_CHUNK, VERIFY, Batch, BatchPolicy, PipelineState, WorkItem, WorkQueue,
                    advance_pipeline, form_batch, true_delay)
from .frameworks import BaseFramework, ChunkContext, FrameworkFactory
from .hashing import derive_seed, digest_lines
from .metrics import RequestRecord, make_record
from .monitor import CloudStateEstimate, DelayPredictor, DeviceState, device_observe
from .network import FifoResource, to_ns, tx_delay
from .ngram import NGramModel, Vocabulary, build_ngram_model, greedy_decode, synthetic_corpus
from .schema import DeviceMode, DeviceSpec, Scenario
from .specdec import (Continuation, DraftSequence, ParallelDraftPlan, RoundStats, draft, emitted_tokens,
                      generate_candidates, plan_parallel_draft, resolve_candidates, verify)
from .workload import Arrival, generate_workload, prompt_tokens

logger = logging.getLogger(__name__)

PREFILL = 'prefill'
DECODE = 'decode'
DONE = 'done'

EVENT_KINDS = (
    'arrival', 'local-compute-done', 'upload-done', 'batch-formed', 'stage-done',
    'download-done', 'draft-step-done', 'request-complete',
)


class SimulationError(RuntimeError):
    """Raised on an unknown or out-of-order event, or when the queue drains with requests unfinished."""


@dataclass(frozen=True)
class LoggedEvent:
    time_ns: int
    seq: int
    kind: str
    request: Optional[int]
    detail: Dict[str, Any]

    def to_line(self) -> str:
        return json.dumps({'time_ns': self.time_ns, 'seq': self.seq, 'kind': self.kind,
                           'request': self.request, 'detail': self.detail},
                          sort_keys=True, separators=(',', ':'))


class EventLog:
    """Ordered trace of processed events."""

    def __init__(self, entries: Optional[List[LoggedEvent]] = None):
        self.entries: List[LoggedEvent] = entries or []

    def append(self, entry: LoggedEvent):
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def lines(self) -> Iterator[str]:
        return (entry.to_line() for entry in self.entries)

    def digest(self) -> str:
        return digest_lines(self.lines())

    def write(self, path: Path):
        with open(path, 'w', encoding='utf-8') as f:
            for line in self.lines():
                f.write(line + '\n')

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> 'EventLog':
        entries = []
        for line in lines:
            if not line.strip():
                continue
            raw = json.loads(line)
            entries.append(LoggedEvent(raw['time_ns'], raw['seq'], raw['kind'], raw['request'], raw['detail']))
        return cls(entries)


@dataclass
class Request:
    id: int
    device: int
    arrival_ns: int
    prompt: List[int]
    phase: str = PREFILL
    plan: Optional[ChunkPlan] = None
    output: List[int] = field(default_factory=list)
    emission_ns: List[int] = field(default_factory=list)
    rounds: List[RoundStats] = field(default_factory=list)
    # prefill breakdown of TTFT
    local_ns: int = 0
    comm_ns: int = 0
    cloud_ns: int = 0
    # current decode round
    draft_seq: Optional[DraftSequence] = None
    draft_end_ns: int = 0
    reused_steps: int = 0
    pd_plan: Optional[ParallelDraftPlan] = None
    prefix: Optional[Continuation] = None

    @property
    def context(self) -> List[int]:
        return self.prompt + self.output


@dataclass
class DeviceRuntime:
    """Actual capabilities of one device plus its monitored estimate."""
    index: int
    spec: DeviceSpec
    state: DeviceState
    mode_rng: np.random.Generator
    compute: FifoResource = field(init=False)
    uplink: FifoResource = field(init=False)
    downlink: FifoResource = field(init=False)
    mode: DeviceMode = field(default_factory=DeviceMode)
    period: int = -1

    def __post_init__(self):
        self.compute = FifoResource(f"device{self.index}.compute")
        self.uplink = FifoResource(f"device{self.index}.uplink")
        self.downlink = FifoResource(f"device{self.index}.downlink")

    def switch_mode(self, index_on_device: int):
        spec = self.spec
        period = index_on_device // spec.switch_every
        if period == self.period or not spec.modes:
            return
        self.period = period
        if spec.random_modes:
            self.mode = spec.modes[int(self.mode_rng.integers(len(spec.modes)))]
        elif spec.mode_schedule:
            self.mode = spec.modes[spec.mode_schedule[period % len(spec.mode_schedule)]]
        else:
            self.mode = spec.modes[period % len(spec.modes)]
        logger.debug(f"device {self.index} switched to mode {self.mode} at period {period}")

    @property
    def gamma(self) -> float:
        return self.spec.draft_step_s * self.mode.compute_scale

    @property
    def up_bps(self) -> float:
        return self.spec.uplink_bps * self.mode.bandwidth_scale

    @property
    def down_bps(self) -> float:
        return self.spec.downlink_bps * self.mode.bandwidth_scale

    def shallow_ns(self, n_tokens: int) -> int:
        return to_ns(n_tokens * self.spec.shallow_per_token_s * self.mode.compute_scale)

    def head_ns(self) -> int:
        return max(1, to_ns(self.spec.head_s * self.mode.compute_scale))


@dataclass(frozen=True)
class ModelBundle:
    vocab: Vocabulary
    corpus: List[int]
    target: NGramModel
    draft: NGramModel


@dataclass(frozen=True)
class TtftBreakdown:
    local_ns: int
    comm_ns: int
    cloud_ns: int


@dataclass
class SimulationResult:
    framework: str
    log: EventLog
    records: List[RequestRecord]
    outputs: Dict[int, List[int]]
    rounds: Dict[int, List[RoundStats]]
    breakdown: Dict[int, TtftBreakdown]
    predictor: DelayPredictor

    def __iter__(self):
        # unpacks as (log, records)
        return iter((self.log, self.records))


def build_models(scenario: Scenario) -> ModelBundle:
    """Corpus from the scenario text or the synthetic source, plus target and draft models."""
    wl, mc = scenario.workload, scenario.model
    if wl.corpus_text:
        words = wl.corpus_text.split()
        vocab = Vocabulary.from_words(words)
        corpus = vocab.encode(words)
    else:
        vocab, corpus = synthetic_corpus(wl.vocab_size, wl.corpus_tokens, wl.corpus_seed)
    target = build_ngram_model(corpus, mc.target_order, mc.smoothing, vocab.size, vocab.eos_id)
    draft_model = build_ngram_model(corpus, mc.draft_order, mc.smoothing, vocab.size, vocab.eos_id)
    return ModelBundle(vocab, corpus, target, draft_model)


class Simulation:
    """One scenario run under one framework variant."""

    def __init__(self, scenario: Scenario, models: Optional[ModelBundle] = None):
        self.scenario = scenario
        self.framework: BaseFramework = FrameworkFactory().get_framework(scenario.framework)
        self.models = models or build_models(scenario)
        self.profile = scenario.cloud
        self.cfg = scenario.specdec

        self.heap: List[Tuple[int, int, str, Optional[int], Dict[str, Any], Callable]] = []
        self.seq = 0
        self.now = 0
        self.log = EventLog()

        self.devices = [
            DeviceRuntime(i, spec, DeviceState(spec.draft_step_s, spec.uplink_bps, spec.downlink_bps),
                          np.random.default_rng(derive_seed(scenario.seed, 'device', i, 'modes')))
            for i, spec in enumerate(scenario.expanded_devices())
        ]
        self.requests: Dict[int, Request] = {}

        mon = scenario.monitor
        self.estimate = CloudStateEstimate(alpha=mon.alpha)
        self.predictor = DelayPredictor(bin_width=mon.bin_width, alpha=mon.alpha, default_delay=mon.default_delay)
        self.queue = WorkQueue()
        self.pipeline = PipelineState.idle(self.profile.P)
        self.policy = BatchPolicy(self.profile.max_batch_tokens)
        self.item_seq = 0
        self.batch_seq = 0
        self.dispatch_pending = False
        self.batches: Dict[int, Batch] = {}

    # event plumbing

    def schedule(self, time_ns: int, kind: str, request: Optional[int], detail: Dict[str, Any],
                 handler: Callable[[int, Optional[int], Dict[str, Any]], None]):
        if kind not in EVENT_KINDS:
            raise SimulationError(f"unknown event kind {kind!r}")
        if time_ns < self.now:
            raise SimulationError(f"{kind} scheduled at {time_ns} before current time {self.now}")
        heapq.heappush(self.heap, (time_ns, self.seq, kind, request, detail, handler))
        self.seq += 1

    def run(self) -> SimulationResult:
        arrivals = generate_workload(self.scenario, len(self.models.corpus))
        for rid, arrival in enumerate(arrivals):
            self.schedule(to_ns(arrival.time), 'arrival', rid,
                          {'device': arrival.device, 'prompt_len': arrival.prompt_len},
                          self._arrival_handler(arrival))
        logger.info(f"Simulating {len(arrivals)} requests on {len(self.devices)} devices "
                    f"with framework {self.framework.get_name()}")

        while self.heap:
            time_ns, seq, kind, request, detail, handler = heapq.heappop(self.heap)
            self.now = time_ns
            handler(time_ns, request, detail)
            self.log.append(LoggedEvent(time_ns, seq, kind, request, detail))

        unfinished = [r.id for r in self.requests.values() if r.phase != DONE]
        if unfinished or len(self.requests) != len(arrivals):
            raise SimulationError(f"event queue drained with unfinished requests {unfinished[:10]}")
        return self._result()

    def _result(self) -> SimulationResult:
        slas = self.scenario.slas
        records = [
            make_record(r.id, r.device, len(r.prompt), r.plan.chunk_size, r.arrival_ns, r.emission_ns, slas)
            for r in sorted(self.requests.values(), key=lambda r: r.id)
        ]
        logger.info(f"Finished {len(records)} requests, {len(self.log)} events, "
                    f"{self.batch_seq} cloud batches")
        return SimulationResult(
            framework=self.framework.get_name(),
            log=self.log,
            records=records,
            outputs={r.id: list(r.output) for r in self.requests.values()},
            rounds={r.id: list(r.rounds) for r in self.requests.values()},
            breakdown={r.id: TtftBreakdown(r.local_ns, r.comm_ns, r.cloud_ns) for r in self.requests.values()},
            predictor=self.predictor,
        )

    # prefill

    def _arrival_handler(self, arrival: Arrival):
        def handle(now: int, rid: int, detail: Dict[str, Any]):
            dev = self.devices[arrival.device]
            dev.switch_mode(arrival.index_on_device)
            req = Request(rid, arrival.device, now,
                          prompt_tokens(self.models.corpus, arrival.prompt_offset, arrival.prompt_len))
            req.plan = self.framework.plan_chunks(ChunkContext(
                prompt_len=arrival.prompt_len,
                predictor=self.predictor,
                estimate=self.estimate,
                beta_up=dev.state.beta_up,
                A=self.profile.A,
                P=self.profile.P,
                fixed_chunk_size=self.scenario.fixed_chunk_size,
            ))
            self.requests[rid] = req
            detail['chunk_size'] = req.plan.chunk_size
            detail['chunks'] = len(req.plan)
            self._start_chunk(req, 0, now)
        return handle

    def _start_chunk(self, req: Request, index: int, now: int):
        dev = self.devices[req.device]
        dur = dev.shallow_ns(req.plan.sizes[index])
        _, end = dev.compute.reserve(now, dur)
        req.local_ns += dur
        self.schedule(end, 'local-compute-done', req.id, {'stage': 'shallow', 'chunk': index},
                      self._on_chunk_computed)

    def _on_chunk_computed(self, now: int, rid: int, detail: Dict[str, Any]):
        req = self.requests[rid]
        dev = self.devices[req.device]
        index = detail['chunk']
        tokens = req.plan.sizes[index]
        dur = to_ns(tx_delay(tokens, self.profile.A, dev.up_bps))
        _, end = dev.uplink.reserve(now, dur)
        req.comm_ns += dur
        self.schedule(end, 'upload-done', rid, {'item': PREFILL_CHUNK, 'chunk': index, 'tokens': tokens},
                      self._on_upload)
        if index + 1 < len(req.plan):
            self._start_chunk(req, index + 1, now)

    def _on_upload(self, now: int, rid: int, detail: Dict[str, Any]):
        req = self.requests[rid]
        kind = detail['item']
        if kind != PREFILL_CHUNK:
            self._enqueue(WorkItem(rid, kind, detail['tokens'], now, self.item_seq))
        elif self.framework.overlap_prefill:
            index = detail['chunk']
            self._enqueue(WorkItem(rid, kind, detail['tokens'], now, self.item_seq, index,
                                   index == len(req.plan) - 1))
        elif detail['chunk'] == len(req.plan) - 1:
            # whole prompt uploaded: chunks enter the cloud one per batch
            for index, size in enumerate(req.plan.sizes):
                self._enqueue(WorkItem(rid, kind, size, now, self.item_seq, index, index == len(req.plan) - 1))
        self._try_dispatch(now)

    # cloud

    def _enqueue(self, item: WorkItem):
        self.queue.push(item)
        self.item_seq += 1

    def _try_dispatch(self, now: int):
        if self.dispatch_pending or not self.queue.items or self.pipeline.stage_free_at[0] > now:
            return
        self.dispatch_pending = True
        self.schedule(now, 'batch-formed', None, {}, self._on_dispatch)

    def _on_dispatch(self, now: int, _rid: Optional[int], detail: Dict[str, Any]):
        self.dispatch_pending = False
        batch = form_batch(self.queue, self.policy)
        if batch is None:
            return
        batch_id = self.batch_seq
        self.batch_seq += 1
        self.batches[batch_id] = batch
        completion, self.pipeline = advance_pipeline(self.pipeline, batch, self.profile, now)
        detail.update({'batch': batch_id, 'tokens': batch.total_tokens, 'items': len(batch.items),
                       'requests': [item.request_id for item in batch.items]})
        logger.debug(f"batch {batch_id}: {batch.total_tokens} tokens, completes at {completion}")
        self.schedule(completion, 'stage-done', None, {'batch': batch_id, 'stage': self.profile.P},
                      self._on_batch_complete)
        if self.profile.P > 1:
            self.schedule(self.pipeline.stage_free_at[0], 'stage-done', None, {'batch': batch_id, 'stage': 1},
                          lambda t, _r, _d: self._try_dispatch(t))

    def _on_batch_complete(self, now: int, _rid: Optional[int], detail: Dict[str, Any]):
        batch = self.batches.pop(detail['batch'])
        delay = true_delay(self.profile, batch.total_tokens)
        self.estimate = self.estimate.observe(batch.total_tokens, delay)
        self.predictor = self.predictor.observe(batch.total_tokens, delay)

        for item in batch.items:
            req = self.requests[item.request_id]
            if item.kind == PREFILL_CHUNK:
                req.cloud_ns += now - item.ready_ns
                if item.last_chunk:
                    self._download(req, 1, PREFILL, now)
            elif item.kind == VERIFY:
                self._download(req, item.token_count, VERIFY, now)
            else:
                self._download(req, 1, DECODE_ONE, now)
        self._try_dispatch(now)

    def _download(self, req: Request, tokens: int, purpose: str, now: int):
        dev = self.devices[req.device]
        dur = to_ns(tx_delay(tokens, self.profile.A, dev.down_bps))
        _, end = dev.downlink.reserve(now, dur)
        if purpose == PREFILL:
            req.comm_ns += dur
        self.schedule(end, 'download-done', req.id, {'for': purpose, 'tokens': tokens}, self._on_download)

    # head and decode rounds

    def _on_download(self, now: int, rid: int, detail: Dict[str, Any]):
        req = self.requests[rid]
        dev = self.devices[req.device]
        if req.pd_plan is not None:
            gamma_ns = max(1, to_ns(dev.gamma))
            steps = min(req.pd_plan.lambda_steps, (now - req.draft_end_ns) // gamma_ns)
            req.pd_plan = req.pd_plan.truncated(steps)
        dur = dev.head_ns()
        _, end = dev.compute.reserve(now, dur)
        if detail['for'] == PREFILL:
            req.local_ns += dur
        self.schedule(end, 'local-compute-done', rid, {'stage': 'head'}, self._on_head)

    def _on_head(self, now: int, rid: int, detail: Dict[str, Any]):
        req = self.requests[rid]
        dev = self.devices[req.device]
        target = self.models.target
        budget = self.scenario.workload.max_new - len(req.output)
        context = req.context

        if req.phase == PREFILL:
            new = [target.greedy_next(context)[0]]
            req.phase = DECODE
        elif req.draft_seq is not None:
            seq = req.draft_seq
            result = verify(target, context, seq.tokens)
            new = emitted_tokens(seq.tokens, result, target.eos_id, budget)
            req.rounds.append(RoundStats(len(seq), result.accepted_count, len(new), req.reused_steps))
            req.prefix = None
            if req.pd_plan is not None and result.accepted_count == len(seq) - 1:
                req.prefix = resolve_candidates(req.pd_plan, result.correction, len(context) + result.accepted_count)
            req.draft_seq = None
            req.pd_plan = None
        else:
            new = [target.greedy_next(context)[0]]
            req.rounds.append(RoundStats(0, 0, 1))

        req.output.extend(new)
        req.emission_ns.extend(now + j for j in range(len(new)))
        detail['emitted'] = len(new)
        dev.state = device_observe(dev.state, dev.gamma, dev.up_bps, dev.down_bps, self.scenario.monitor.alpha)

        last = req.emission_ns[-1]
        if len(req.output) >= self.scenario.workload.max_new or new[-1] == target.eos_id:
            req.phase = DONE
            self.schedule(last, 'request-complete', rid, {'output_len': len(req.output)},
                          lambda _t, _r, _d: None)
        else:
            self._start_round(req, last)

    def _start_round(self, req: Request, now: int):
        dev = self.devices[req.device]
        if not self.framework.speculative:
            dur = dev.shallow_ns(1)
            _, end = dev.compute.reserve(now, dur)
            self.schedule(end, 'local-compute-done', req.id, {'stage': 'shallow-decode'}, self._on_decode_computed)
            return
        prefix = req.prefix if req.prefix is not None and req.prefix.tokens else None
        seq = draft(self.models.draft, req.context, self.cfg, prefix)
        reused = len(prefix.tokens) if prefix else 0
        steps = len(seq) - reused
        _, end = dev.compute.reserve(now, to_ns(steps * dev.gamma))
        req.draft_seq = seq
        req.reused_steps = reused
        self.schedule(end, 'draft-step-done', req.id, {'steps': steps, 'reused': reused, 'draft_len': len(seq)},
                      self._on_drafted)

    def _on_decode_computed(self, now: int, rid: int, detail: Dict[str, Any]):
        req = self.requests[rid]
        dev = self.devices[req.device]
        _, end = dev.uplink.reserve(now, to_ns(tx_delay(1, self.profile.A, dev.up_bps)))
        self.schedule(end, 'upload-done', rid, {'item': DECODE_ONE, 'tokens': 1}, self._on_upload)

    def _on_drafted(self, now: int, rid: int, detail: Dict[str, Any]):
        req = self.requests[rid]
        dev = self.devices[req.device]
        seq = req.draft_seq
        _, end = dev.uplink.reserve(now, to_ns(tx_delay(len(seq), self.profile.A, dev.up_bps)))
        self.schedule(end, 'upload-done', rid, {'item': VERIFY, 'tokens': len(seq)}, self._on_upload)
        if self.framework.parallel_drafting:
            lam = plan_parallel_draft(dev.state, self.predictor, self.estimate, len(seq), self.profile.A)
            req.pd_plan = generate_candidates(self.models.draft, req.context, seq, self.cfg, lam)
            req.draft_end_ns = now
            detail['lambda'] = lam


def run(scenario: Scenario, models: Optional[ModelBundle] = None) -> SimulationResult:
    """Simulate the scenario; the result unpacks as (event log, request records)."""
    return Simulation(scenario, models).run()


def reference_outputs(scenario: Scenario, models: Optional[ModelBundle] = None) -> Dict[int, List[int]]:
    """Plain greedy target decoding of every generated prompt."""
    models = models or build_models(scenario)
    arrivals = generate_workload(scenario, len(models.corpus))
    return {
        rid: greedy_decode(models.target, prompt_tokens(models.corpus, a.prompt_offset, a.prompt_len),
                           scenario.workload.max_new)
        for rid, a in enumerate(arrivals)
    }
