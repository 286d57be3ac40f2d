pub mod ablate;
pub mod adt;
pub mod eval;
pub mod infer;
pub mod overlay;
pub mod synth;
pub mod train;
