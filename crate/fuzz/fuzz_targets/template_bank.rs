#![no_main]

use libfuzzer_sys::fuzz_target;
use mtembed::data::{gen_failure_case, FailureKind, TemplateBank};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(bank) = TemplateBank::from_json(text) {
        // a bank that validates must generate without panicking
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [FailureKind::F1, FailureKind::F2, FailureKind::F3] {
            let _ = gen_failure_case(kind, 2, &bank, &mut rng);
        }
    }
});
