//! Map a vulnerability advisory onto the commits that fix it.
//!
//! The pipeline has three phases: distill the advisory into a structured
//! record ([`advisory`]), reduce the repository's commit list to a candidate
//! set ([`filter`]), and rank the candidates by a learned probability of
//! being the fix ([`features`], [`ranker`]). Supporting modules mine git
//! repositories ([`repominer`]), cache mined commits ([`store`]), score
//! ranked output ([`evaluator`]), and generate synthetic evaluation corpora
//! ([`synth`]).

pub mod advisory;
pub mod evaluator;
pub mod features;
pub mod filter;
pub mod pipeline;
pub mod ranker;
pub mod repominer;
pub mod store;
pub mod synth;
pub mod textprep;
