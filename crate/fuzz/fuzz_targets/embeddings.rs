#![no_main]

use libfuzzer_sys::fuzz_target;
use mtembed::pipeline::{read_embeddings_binary, write_embeddings_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_embeddings_binary(data) {
        let bytes = write_embeddings_binary(&rows);
        let again = read_embeddings_binary(&bytes).expect("re-encoded embeddings parse");
        assert_eq!(write_embeddings_binary(&again), bytes);
    }
});
