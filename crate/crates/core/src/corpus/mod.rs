//! Tokenization, encoder inputs, state frames and pointer sequences, SGD
//! dialogue files and the synthetic corpus generator.

pub mod encoder_input;
pub mod sgd;
pub mod state;
pub mod synth;
pub mod tokenize;
pub mod vocab;

pub use encoder_input::{align_value_span, build_encoder_input, EncoderInput, TokenOrigin};
pub use sgd::{
    domain_of, load_split, parse_dialogues, prepare_examples, write_split, Dialogue, DialogueExample,
    PrepareConfig, Prepared, Speaker, Split, Turn, UnalignableMode,
};
pub use state::{
    candidate_count, delinearize, is_well_formed, linearize_state, Marker, Pointer, PointerSequence,
    SlotValue, StateFrame, Unalignable,
};
pub use synth::{synth_corpus, SynthCorpus, SynthSpec};
pub use tokenize::{normalize_value, tokenize};
pub use vocab::Vocab;
