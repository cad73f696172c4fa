//! Tokenization interface plus the built-in byte-level tokenizer.

/// Text to token ids and back. Implementations must keep every id below
/// `vocab_size`; the final id is reserved as the document separator.
pub trait Tokenizer {
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<usize>;
    fn decode(&self, ids: &[usize]) -> String;

    fn separator_id(&self) -> usize {
        self.vocab_size() - 1
    }
}

/// Byte-level tokenizer: ids 0..=255 are raw bytes, 256 is padding, 257 the
/// document separator. Needs no vocabulary file, and decode(encode(s)) = s.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

pub const BYTE_VOCAB: usize = 258;
pub const PAD_ID: usize = 256;
pub const SEPARATOR_ID: usize = 257;

impl Tokenizer for ByteTokenizer {
    fn vocab_size(&self) -> usize {
        BYTE_VOCAB
    }

    fn encode(&self, text: &str) -> Vec<usize> {
        text.bytes().map(usize::from).collect()
    }

    /// Non-byte ids (pad, separator) are dropped; invalid UTF-8 byte runs
    /// decode lossily.
    fn decode(&self, ids: &[usize]) -> String {
        let bytes: Vec<u8> = ids.iter().filter(|&&id| id < 256).map(|&id| id as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}
