pub mod ablate;
pub mod label;
pub mod predict;
pub mod search;
pub mod simulate;
pub mod train_eval;
