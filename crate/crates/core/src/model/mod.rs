//! Dual-branch interaction model with confidence head and SMILES autoencoder.

pub mod checkpoint;
pub mod config;
pub mod state;
pub mod tokenizer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ContrastiveVariant, Mode, ModelConfig};
pub use state::{
    reconstruction_nll, unfamiliarity_from_nll, BatchInput, BatchOutput, ForwardNodes, Layout, ModelState,
};
pub use tokenizer::{detokenize, tokenize, TokenSeq, Vocab};
