//! Packing documents into fixed-length training rows. Documents are
//! tokenized, joined with the separator id, and the running token buffer is
//! sliced into context-length rows; a batch is a fixed number of rows.

use crate::error::{Error, Result};

use super::mix::DocStream;
use super::tokenizer::Tokenizer;

/// One training batch of `rows` rows by `context` columns, row-major.
/// Target rows are their input rows shifted left by one, with the separator
/// id filling the vacated final slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rows: usize,
    pub context: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub separator_id: usize,
}

impl Batch {
    pub fn input_row(&self, r: usize) -> &[usize] {
        &self.inputs[r * self.context..(r + 1) * self.context]
    }

    pub fn target_row(&self, r: usize) -> &[usize] {
        &self.targets[r * self.context..(r + 1) * self.context]
    }
}

/// Infinite batch iterator over a document stream.
pub struct BatchIter<S> {
    stream: S,
    tokenizer: Box<dyn Tokenizer>,
    context: usize,
    rows_per_batch: usize,
    buffer: Vec<usize>,
}

pub fn pack_batches(
    stream: DocStream,
    tokenizer: Box<dyn Tokenizer>,
    context_length: usize,
    tokens_per_batch: usize,
) -> Result<BatchIter<DocStream>> {
    pack_batches_from(stream, tokenizer, context_length, tokens_per_batch)
}

/// Generic entry point so tests can feed a plain document iterator.
pub fn pack_batches_from<S: Iterator<Item = String>>(
    stream: S,
    tokenizer: Box<dyn Tokenizer>,
    context_length: usize,
    tokens_per_batch: usize,
) -> Result<BatchIter<S>> {
    if context_length == 0 {
        return Err(Error::Config("context_length must be positive".into()));
    }
    if tokens_per_batch < context_length {
        return Err(Error::Config(format!(
            "tokens_per_batch {tokens_per_batch} is below one context of {context_length}"
        )));
    }
    Ok(BatchIter {
        stream,
        tokenizer,
        context: context_length,
        rows_per_batch: tokens_per_batch / context_length,
        buffer: Vec::new(),
    })
}

impl<S: Iterator<Item = String>> BatchIter<S> {
    fn next_row(&mut self) -> Option<Vec<usize>> {
        while self.buffer.len() < self.context {
            let doc = self.stream.next()?;
            self.buffer.extend(self.tokenizer.encode(&doc));
            self.buffer.push(self.tokenizer.separator_id());
        }
        let rest = self.buffer.split_off(self.context);
        Some(std::mem::replace(&mut self.buffer, rest))
    }
}

impl<S: Iterator<Item = String>> Iterator for BatchIter<S> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let sep = self.tokenizer.separator_id();
        let mut inputs = Vec::with_capacity(self.rows_per_batch * self.context);
        let mut targets = Vec::with_capacity(self.rows_per_batch * self.context);
        for _ in 0..self.rows_per_batch {
            let row = self.next_row()?;
            targets.extend_from_slice(&row[1..]);
            targets.push(sep);
            inputs.extend(row);
        }
        Some(Batch {
            rows: self.rows_per_batch,
            context: self.context,
            inputs,
            targets,
            separator_id: sep,
        })
    }
}
