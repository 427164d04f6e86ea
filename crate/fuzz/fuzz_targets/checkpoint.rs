#![no_main]

use libfuzzer_sys::fuzz_target;
use mtembed::trainer::{read_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = read_checkpoint(data) {
        // anything accepted must re-encode to a stable byte form
        let bytes = write_checkpoint(&ck);
        let again = read_checkpoint(&bytes).expect("re-encoded checkpoint parses");
        assert_eq!(write_checkpoint(&again), bytes);
    }
});
