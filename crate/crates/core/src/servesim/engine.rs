use std::collections::VecDeque;

use super::{RequestRecord, StepKind, StepModel, StepRecord};
use crate::costmodel::kv_cache_bytes;
use crate::error::Result;
use crate::kvsim::{CacheStats, CacheTracker, KvCapacity};
use crate::workload::Request;

/// A request that holds a KV reservation.
#[derive(Debug, Clone)]
struct Seq {
    idx: usize,
    /// Prompt tokens already processed.
    prefilled: u64,
    generated: u64,
    start_s: f64,
    first_token_s: f64,
}

pub(super) struct Engine<'a> {
    trace: &'a [Request],
    reserve: &'a [u64],
    model: &'a StepModel,
    capacity: KvCapacity,
    token_bytes: u64,
    clock: f64,
    next_arrival: usize,
    queue: VecDeque<usize>,
    cache: CacheTracker,
    records: Vec<RequestRecord>,
    steps: Vec<StepRecord>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        trace: &'a [Request],
        reserve: &'a [u64],
        model: &'a StepModel,
        capacity: KvCapacity,
    ) -> Self {
        Engine {
            trace,
            reserve,
            model,
            capacity,
            token_bytes: kv_cache_bytes(&model.cfg, 1, 1).expect("validated config"),
            clock: 0.0,
            next_arrival: 0,
            queue: VecDeque::new(),
            cache: CacheTracker::default(),
            records: Vec::with_capacity(trace.len()),
            steps: Vec::new(),
        }
    }

    pub(super) fn finish(self) -> (Vec<RequestRecord>, Vec<StepRecord>, CacheStats) {
        (self.records, self.steps, self.cache.stats())
    }

    fn enqueue_arrivals(&mut self) {
        while let Some(r) = self.trace.get(self.next_arrival) {
            if r.arrival_time_s > self.clock {
                break;
            }
            self.queue.push_back(self.next_arrival);
            self.next_arrival += 1;
        }
    }

    fn arrivals_pending(&self) -> bool {
        self.next_arrival < self.trace.len()
    }

    /// Idles until the next arrival. Returns false when none remain.
    fn wait_for_arrival(&mut self) -> bool {
        match self.trace.get(self.next_arrival) {
            Some(r) => {
                self.clock = self.clock.max(r.arrival_time_s);
                self.enqueue_arrivals();
                true
            }
            None => false,
        }
    }

    fn fits(&self, idx: usize) -> bool {
        let allocated = self.cache.stats().allocated_bytes;
        allocated
            .checked_add(self.reserve[idx])
            .is_some_and(|total| total <= self.capacity.capacity_bytes)
    }

    fn admit(&mut self, idx: usize) -> Seq {
        self.cache.allocate(self.reserve[idx], 0);
        Seq {
            idx,
            prefilled: 0,
            generated: 0,
            start_s: self.clock,
            first_token_s: f64::NAN,
        }
    }

    fn step(&mut self, kind: StepKind, duration_s: f64, batch: u64, tokens: u64, generated: u64) {
        self.steps.push(StepRecord {
            kind,
            start_s: self.clock,
            duration_s,
            batch,
            tokens,
            generated,
            kv_allocated_bytes: self.cache.stats().allocated_bytes,
        });
        self.clock += duration_s;
    }

    /// Marks prompt tokens as cached.
    fn prefill_tokens(&mut self, seq: &mut Seq, tokens: u64) {
        seq.prefilled += tokens;
        self.cache.grow_live(tokens * self.token_bytes);
    }

    /// Records one generated token; the previous token enters the cache.
    fn emit_token(&mut self, seq: &mut Seq) {
        if seq.generated == 0 {
            seq.first_token_s = self.clock;
        } else {
            self.cache.grow_live(self.token_bytes);
        }
        seq.generated += 1;
    }

    fn is_done(&self, seq: &Seq) -> bool {
        seq.generated >= self.trace[seq.idx].output_len
    }

    fn complete(&mut self, seq: Seq) {
        let r = &self.trace[seq.idx];
        let live = (seq.prefilled + seq.generated - 1) * self.token_bytes;
        self.cache.release(self.reserve[seq.idx], live);
        self.records.push(RequestRecord {
            id: r.id,
            input_len: r.input_len,
            output_len: r.output_len,
            arrival_s: r.arrival_time_s,
            start_s: seq.start_s,
            first_token_s: seq.first_token_s,
            completion_s: self.clock,
        });
    }

    fn cached_len(&self, seq: &Seq) -> u64 {
        seq.prefilled + seq.generated - 1
    }

    pub(super) fn run_static(&mut self, batch_size: usize) -> Result<()> {
        loop {
            self.enqueue_arrivals();
            while self.queue.len() < batch_size && self.arrivals_pending() {
                self.wait_for_arrival();
            }
            if self.queue.is_empty() {
                return Ok(());
            }

            let mut batch: Vec<Seq> = Vec::with_capacity(batch_size);
            while batch.len() < batch_size {
                match self.queue.front() {
                    Some(&idx) if batch.is_empty() || self.fits(idx) => {
                        self.queue.pop_front();
                        batch.push(self.admit(idx));
                    }
                    _ => break,
                }
            }

            let b = batch.len() as u64;
            let padded = batch
                .iter()
                .map(|s| self.trace[s.idx].input_len)
                .max()
                .unwrap_or(1);
            let prompt_tokens: u64 = batch.iter().map(|s| self.trace[s.idx].input_len).sum();
            let duration = self.model.prefill_s(b, padded)?;
            self.step(StepKind::Prefill, duration, b, prompt_tokens, b);
            for seq in &mut batch {
                let input = self.trace[seq.idx].input_len;
                self.prefill_tokens(seq, input);
                self.emit_token(seq);
            }

            let mut s_past = padded;
            let mut pending: Vec<Seq> = Vec::new();
            for seq in batch {
                if self.is_done(&seq) {
                    self.complete(seq);
                } else {
                    pending.push(seq);
                }
            }
            while !pending.is_empty() {
                let duration = self.model.decode_s(b, s_past)?;
                let live = pending.len() as u64;
                self.step(StepKind::Decode, duration, b, live, live);
                s_past += 1;
                let mut still = Vec::with_capacity(pending.len());
                for mut seq in pending {
                    self.emit_token(&mut seq);
                    if self.is_done(&seq) {
                        self.complete(seq);
                    } else {
                        still.push(seq);
                    }
                }
                pending = still;
            }
        }
    }

    pub(super) fn run_continuous(&mut self, max_seqs: usize, max_batch_tokens: u64) -> Result<()> {
        let seq_limit = (max_seqs as u64).min(max_batch_tokens) as usize;
        let mut running: Vec<Seq> = Vec::new();
        loop {
            self.enqueue_arrivals();

            let mut admitted: Vec<Seq> = Vec::new();
            let mut prompt_tokens = 0u64;
            while running.len() + admitted.len() < seq_limit {
                let Some(&idx) = self.queue.front() else {
                    break;
                };
                let input = self.trace[idx].input_len;
                if prompt_tokens + input > max_batch_tokens || !self.fits(idx) {
                    break;
                }
                self.queue.pop_front();
                prompt_tokens += input;
                admitted.push(self.admit(idx));
            }

            if !admitted.is_empty() {
                let b = admitted.len() as u64;
                let padded = admitted
                    .iter()
                    .map(|s| self.trace[s.idx].input_len)
                    .max()
                    .unwrap_or(1);
                let duration = self.model.prefill_s(b, padded)?;
                self.step(StepKind::Prefill, duration, b, prompt_tokens, b);
                for mut seq in admitted {
                    let input = self.trace[seq.idx].input_len;
                    self.prefill_tokens(&mut seq, input);
                    self.emit_token(&mut seq);
                    if self.is_done(&seq) {
                        self.complete(seq);
                    } else {
                        running.push(seq);
                    }
                }
            } else if !running.is_empty() {
                let b = running.len() as u64;
                let s_past = running
                    .iter()
                    .map(|s| self.cached_len(s))
                    .max()
                    .unwrap_or(1);
                let duration = self.model.decode_s(b, s_past)?;
                self.step(StepKind::Decode, duration, b, b, b);
                let mut still = Vec::with_capacity(running.len());
                for mut seq in running {
                    self.emit_token(&mut seq);
                    if self.is_done(&seq) {
                        self.complete(seq);
                    } else {
                        still.push(seq);
                    }
                }
                running = still;
            } else if !self.wait_for_arrival() {
                return Ok(());
            }
        }
    }

    pub(super) fn run_splitfuse(&mut self, token_budget: u64) -> Result<()> {
        let mut active: Vec<Seq> = Vec::new();
        loop {
            self.enqueue_arrivals();
            while (active.len() as u64) < token_budget {
                match self.queue.front() {
                    Some(&idx) if self.fits(idx) => {
                        self.queue.pop_front();
                        let seq = self.admit(idx);
                        active.push(seq);
                    }
                    _ => break,
                }
            }

            // one decode token per sequence past its prompt, then prompt chunks
            let decoding = active
                .iter()
                .filter(|s| s.prefilled == self.trace[s.idx].input_len)
                .count() as u64;
            let mut remaining = token_budget - decoding;
            let mut chunks = vec![0u64; active.len()];
            for (i, seq) in active.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                let left = self.trace[seq.idx].input_len - seq.prefilled;
                if left > 0 {
                    chunks[i] = left.min(remaining);
                    remaining -= chunks[i];
                }
            }
            let prompt_tokens: u64 = chunks.iter().sum();
            let tokens = decoding + prompt_tokens;

            if tokens == 0 {
                if self.wait_for_arrival() {
                    continue;
                }
                return Ok(());
            }

            let finishing_prompts = active
                .iter()
                .zip(&chunks)
                .filter(|(s, &c)| c > 0 && s.prefilled + c == self.trace[s.idx].input_len)
                .count() as u64;
            let batch = decoding + chunks.iter().filter(|&&c| c > 0).count() as u64;
            let (kind, duration) = if prompt_tokens > 0 {
                (StepKind::Fused, self.model.prefill_s(1, tokens)?)
            } else {
                let s_past = active
                    .iter()
                    .filter(|s| s.generated > 0)
                    .map(|s| self.cached_len(s))
                    .max()
                    .unwrap_or(1);
                (StepKind::Decode, self.model.decode_s(decoding, s_past)?)
            };
            self.step(kind, duration, batch, tokens, decoding + finishing_prompts);

            let mut still = Vec::with_capacity(active.len());
            for (mut seq, chunk) in active.into_iter().zip(chunks) {
                let input = self.trace[seq.idx].input_len;
                if seq.prefilled == input {
                    self.emit_token(&mut seq);
                } else if chunk > 0 {
                    self.prefill_tokens(&mut seq, chunk);
                    if seq.prefilled == input {
                        self.emit_token(&mut seq);
                    }
                }
                if seq.generated > 0 && self.is_done(&seq) {
                    self.complete(seq);
                } else {
                    still.push(seq);
                }
            }
            active = still;
        }
    }
}
