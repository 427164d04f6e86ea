#![no_main]

use libfuzzer_sys::fuzz_target;
use mtembed::data::{
    read_jsonl, FailureRecord, LabeledRecord, PairRecord, QrelRecord, QualityThread, ScoredPairRecord, TextRecord,
    TupleRecord,
};

// The first byte picks the record type; the rest is the JSONL body.
fuzz_target!(|data: &[u8]| {
    let Some((&kind, body)) = data.split_first() else { return };
    match kind % 8 {
        0 => drop(read_jsonl::<TextRecord>(body)),
        1 => drop(read_jsonl::<PairRecord>(body)),
        2 => drop(read_jsonl::<TupleRecord>(body)),
        3 => drop(read_jsonl::<ScoredPairRecord>(body)),
        4 => drop(read_jsonl::<LabeledRecord>(body)),
        5 => drop(read_jsonl::<QualityThread>(body)),
        6 => drop(read_jsonl::<QrelRecord>(body)),
        _ => drop(read_jsonl::<FailureRecord>(body)),
    }
});
