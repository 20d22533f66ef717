//! Byte-level tokenizer with three special tokens.

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

pub fn encode(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

/// `BOS`, the bytes of `text`, `EOS`.
pub fn encode_document(text: &str) -> Vec<u32> {
    let mut ids = Vec::with_capacity(text.len() + 2);
    ids.push(BOS);
    ids.extend(text.bytes().map(u32::from));
    ids.push(EOS);
    ids
}

/// Decodes byte tokens, dropping specials; invalid UTF-8 is replaced.
pub fn decode(ids: &[u32]) -> String {
    let bytes: Vec<u8> = ids
        .iter()
        .filter_map(|&i| u8::try_from(i).ok())
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}
