//! Character-lattice decoding: CTC best path, prefix beam search fused with
//! a word n-gram model, and n-best rescoring.

mod beam;
mod ctc;
mod lattice;
mod nbest;

pub use beam::{fused_beam_search, FusionConfig};
pub use ctc::{ctc_greedy, ctc_logprob};
pub use lattice::{standard_alphabet, FrameLattice};
pub use nbest::{rescore, to_jsonl, NBestHyp, NBestList, NBestRecord};
