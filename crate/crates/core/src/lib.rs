pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod evaluation;
pub mod objectives;
pub mod pipeline;
pub mod task;
pub mod trainer;
