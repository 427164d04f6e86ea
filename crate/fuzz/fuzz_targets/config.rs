#![no_main]

use libfuzzer_sys::fuzz_target;
use mtembed::encoder::{EncoderModel, ModelConfig};
use mtembed::pipeline::RunConfig;
use mtembed::trainer::StagePlan;

// The first byte picks the document type; the rest is JSON.
fuzz_target!(|data: &[u8]| {
    let Some((&kind, body)) = data.split_first() else { return };
    match kind % 3 {
        0 => {
            if let Ok(cfg) = serde_json::from_slice::<ModelConfig>(body) {
                // a config that validates must be small enough to build here
                if cfg.validate().is_ok() && cfg.vocab_size * cfg.d_model < 1 << 16 && cfg.n_layers < 4 {
                    EncoderModel::new(cfg).expect("validated config builds");
                }
            }
        }
        1 => {
            if let Ok(plan) = serde_json::from_slice::<StagePlan>(body) {
                let _ = plan.validate(&ModelConfig::default());
            }
        }
        _ => {
            if let Ok(text) = std::str::from_utf8(body) {
                let _ = RunConfig::from_json(text);
            }
        }
    }
});
