//! Predictors backed by something outside this process: a chat-completions
//! API, or a model server speaking the newline-delimited JSON bridge
//! protocol.
//!
//! Bridge servers first write a handshake line
//! `{"protocol":"trace-bridge/1","latent_dim":768}` (`latent_dim` may be
//! `null`), then answer one response line per request line:
//!
//! ```text
//! -> {"id":0,"kind":"predict","texts":["a","b"]}
//! <- {"id":0,"log_odds":[0.3,-1.2]}
//! -> {"id":1,"kind":"latent","texts":["a"]}
//! <- {"id":1,"vectors":[[0.1,0.2]]}
//! ```
//!
//! A failed request is answered with `{"id":n,"error":"message"}`.

mod api;
mod bridge;
mod cache;
mod prompt;

pub use api::{
    log_odds_from_top, parse_completion_response, ApiPredictor, ApiPredictorConfig, FALLBACK_LOG_ODDS, TEMPERATURE,
};
pub use bridge::{BridgeEndpoint, BridgeKind, BridgeOutput, BridgePredictor, BridgeSession, Transport, BRIDGE_PROTOCOL};
pub use cache::{cache_key, ResponseCache};
pub use prompt::{render_prompt, PromptTemplate, ANSWER_INSTRUCTION, DEFAULT_DOMAIN_SLOT, DEFAULT_SYSTEM_TEXT};
