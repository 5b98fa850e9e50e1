//! Explanations for any [`Predictor`](crate::models::Predictor): Shapley
//! attributions over tokens, the SLALOM value/importance surrogate, and
//! completeness-aware concept discovery in a latent space.

mod concepts;
mod shap;
mod slalom;

pub use concepts::{
    completeness_score, concept_card, discover_concepts, salient_examples, ConceptConfig, ConceptInit, ConceptSet, SalientSnippet,
    SalientList,
};
pub use shap::{
    coalition_values, exact_shap, exact_shap_tokens, shap_sample, shap_sample_tokens, Coalition, ShapOptions,
    ShapReport, EXACT_SHAP_MAX_TOKENS,
};
pub use slalom::{fit_slalom, slalom_predict, SlalomConfig, SlalomModel};
