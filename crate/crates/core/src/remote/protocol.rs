//! JSON wire format shared by [`super::RemoteBackend`] and [`super::LoopbackServer`].
//!
//! ```text
//! GET  {endpoint}/descriptor   -> {"v":1,"backend_id":..,"tokenizer_name":..,"vocabulary_size":..}
//! POST {endpoint}/token-stats  <- {"v":1,"samples":[["tok",..],..]}
//!                              -> {"v":1,"backend_id":..,"results":[[{"actual_prob":..,"top_prob":..,"rank":..,"entropy":..},..],..]}
//! ```

use serde::{Deserialize, Serialize};

use crate::lm::NextTokenStats;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DESCRIPTOR_PATH: &str = "descriptor";
pub const TOKEN_STATS_PATH: &str = "token-stats";

/// Handshake document. Fields are optional on the wire so that a missing
/// field surfaces as a protocol error naming it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorWire {
    #[serde(default)]
    pub v: Option<u32>,
    #[serde(default)]
    pub backend_id: Option<String>,
    #[serde(default)]
    pub tokenizer_name: Option<String>,
    #[serde(default)]
    pub vocabulary_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRequest {
    pub v: u32,
    pub samples: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    #[serde(default)]
    pub v: Option<u32>,
    #[serde(default)]
    pub backend_id: Option<String>,
    pub results: Vec<Vec<NextTokenStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
