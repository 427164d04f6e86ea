#![no_main]

use libfuzzer_sys::fuzz_target;
use mtembed::data::tokenizer::{words, Vocab};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vocab = Vocab::build([text], &[], 64);
    let ids = vocab.tokenize(text);
    assert!(ids.iter().all(|&i| i < vocab.len()));
    let back = vocab.detokenize(&ids);
    if words(text).all(|w| vocab.id(&w).is_some()) {
        assert_eq!(back, words(text).collect::<Vec<_>>().join(" "));
    }
});
