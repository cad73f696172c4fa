//! Data pipeline: tokenization, length filtering, weighted source mixing,
//! and packing into fixed-shape training batches.

pub mod filter;
pub mod mix;
pub mod pack;
pub mod tokenizer;

pub use filter::{filter_sequence, FilterDecision, FilterPolicy, SkipReason};
pub use mix::{filter_stats, load_sources, mix_stream, DocStream, SourceSpec, SourceStats};
pub use pack::{pack_batches, pack_batches_from, Batch, BatchIter};
pub use tokenizer::{ByteTokenizer, Tokenizer, BYTE_VOCAB, PAD_ID, SEPARATOR_ID};
