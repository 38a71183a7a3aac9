use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::{Deserialize, Serialize};

use super::protocol::{
    DescriptorWire, StatsRequest, StatsResponse, DESCRIPTOR_PATH, PROTOCOL_VERSION,
    TOKEN_STATS_PATH,
};
use super::RemoteError;
use crate::lm::{Backend, BackendError, NextTokenStats};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteBackendConfig {
    /// Base URL, e.g. `http://127.0.0.1:7878`.
    pub endpoint_url: String,
    pub timeout: Duration,
    /// Extra attempts after a connection failure or timeout.
    pub max_retries: usize,
    /// Samples per request.
    pub batch_size: usize,
    /// Requests allowed in flight at once.
    pub max_in_flight: usize,
}

impl RemoteBackendConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            batch_size: 32,
            max_in_flight: 1,
        }
    }

    fn validate(&self) -> Result<(), RemoteError> {
        if self.timeout.is_zero() {
            return Err(RemoteError::Config("timeout must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(RemoteError::Config("batch size must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(RemoteError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

/// What the server reported during the handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub tokenizer_name: String,
    pub vocabulary_size: usize,
}

/// [`Backend`] served over HTTP by an external token-probability service.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteBackendConfig,
    client: Client,
    descriptor: BackendDescriptor,
}

impl RemoteBackend {
    /// Build a client and perform the handshake.
    pub fn connect(config: RemoteBackendConfig) -> Result<Self, RemoteError> {
        config.validate()?;
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| RemoteError::Config(e.to_string()))?;
        let descriptor = fetch_descriptor(&client, &config)?;
        Ok(Self {
            config,
            client,
            descriptor,
        })
    }

    pub fn config(&self) -> &RemoteBackendConfig {
        &self.config
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    /// Fetch the descriptor again without replacing the cached one.
    pub fn handshake(&self) -> Result<BackendDescriptor, RemoteError> {
        fetch_descriptor(&self.client, &self.config)
    }

    /// Statistics for every sample, in request order. Either every sample is
    /// scored or an error is returned.
    pub fn fetch_token_stats(
        &self,
        samples: &[Vec<String>],
    ) -> Result<Vec<Vec<NextTokenStats>>, RemoteError> {
        let batches: Vec<&[Vec<String>]> = samples.chunks(self.config.batch_size).collect();
        let mut results = Vec::with_capacity(samples.len());
        for wave in batches.chunks(self.config.max_in_flight) {
            let outcomes: Vec<Result<Vec<Vec<NextTokenStats>>, RemoteError>> = if wave.len() == 1 {
                vec![self.post_batch(wave[0])]
            } else {
                thread::scope(|scope| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|batch| scope.spawn(move || self.post_batch(batch)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("batch worker panicked"))
                        .collect()
                })
            };
            for outcome in outcomes {
                results.extend(outcome?);
            }
        }
        Ok(results)
    }

    fn post_batch(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<NextTokenStats>>, RemoteError> {
        let url = endpoint(&self.config.endpoint_url, TOKEN_STATS_PATH);
        let request = StatsRequest {
            v: PROTOCOL_VERSION,
            samples: batch.to_vec(),
        };
        let body = send_with_retries(&url, self.config.max_retries, || {
            self.client.post(&url).json(&request)
        })?;
        let response: StatsResponse = serde_json::from_str(&body)
            .map_err(|e| RemoteError::Protocol(format!("malformed token-stats response: {e}")))?;
        validate_response(&response, batch, &self.descriptor.backend_id)?;
        Ok(response.results)
    }
}

impl Backend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.descriptor.backend_id
    }

    fn tokenizer_name(&self) -> Option<&str> {
        Some(&self.descriptor.tokenizer_name)
    }

    fn batch_token_stats(
        &self,
        samples: &[Vec<String>],
    ) -> Result<Vec<Vec<NextTokenStats>>, BackendError> {
        if let Some(index) = samples.iter().position(Vec::is_empty) {
            return Err(BackendError::EmptySample { index });
        }
        Ok(self.fetch_token_stats(samples)?)
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn fetch_descriptor(
    client: &Client,
    config: &RemoteBackendConfig,
) -> Result<BackendDescriptor, RemoteError> {
    let url = endpoint(&config.endpoint_url, DESCRIPTOR_PATH);
    let body = send_with_retries(&url, config.max_retries, || client.get(&url))?;
    let wire: DescriptorWire = serde_json::from_str(&body)
        .map_err(|e| RemoteError::Protocol(format!("malformed descriptor: {e}")))?;
    check_version(wire.v)?;
    let backend_id = wire
        .backend_id
        .filter(|id| !id.is_empty())
        .ok_or_else(|| RemoteError::Protocol("descriptor is missing backend_id".into()))?;
    let tokenizer_name = wire
        .tokenizer_name
        .ok_or_else(|| RemoteError::Protocol("descriptor is missing tokenizer_name".into()))?;
    let vocabulary_size = wire
        .vocabulary_size
        .ok_or_else(|| RemoteError::Protocol("descriptor is missing vocabulary_size".into()))?;
    Ok(BackendDescriptor {
        backend_id,
        tokenizer_name,
        vocabulary_size,
    })
}

fn check_version(v: Option<u32>) -> Result<(), RemoteError> {
    match v {
        Some(PROTOCOL_VERSION) => Ok(()),
        Some(other) => Err(RemoteError::Protocol(format!(
            "unsupported protocol version {other}"
        ))),
        None => Err(RemoteError::Protocol("response is missing \"v\"".into())),
    }
}

/// Connection failures and timeouts are retried; HTTP status and payload
/// problems are not.
fn send_with_retries(
    url: &str,
    max_retries: usize,
    build: impl Fn() -> RequestBuilder,
) -> Result<String, RemoteError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let failure = match build().send().and_then(|resp| {
            let status = resp.status();
            resp.text().map(|body| (status, body))
        }) {
            Ok((status, body)) if status.is_success() => return Ok(body),
            Ok((status, body)) => {
                return Err(RemoteError::Status {
                    status: status.as_u16(),
                    body,
                })
            }
            Err(e) if e.is_connect() => RemoteError::Connection {
                url: url.to_string(),
                attempts: attempt,
                message: e.to_string(),
            },
            Err(e) if e.is_timeout() => RemoteError::Transport {
                url: url.to_string(),
                attempts: attempt,
                message: e.to_string(),
            },
            Err(e) => {
                return Err(RemoteError::Transport {
                    url: url.to_string(),
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        };
        if attempt > max_retries {
            return Err(failure);
        }
        log::warn!("{failure}; retrying");
        thread::sleep(Duration::from_millis(50 * attempt as u64));
    }
}

fn validate_response(
    response: &StatsResponse,
    batch: &[Vec<String>],
    expected_backend: &str,
) -> Result<(), RemoteError> {
    check_version(response.v)?;
    match response.backend_id.as_deref() {
        None | Some("") => {
            return Err(RemoteError::Protocol(
                "response is missing backend_id".into(),
            ))
        }
        Some(id) if id != expected_backend => {
            return Err(RemoteError::Protocol(format!(
                "response backend_id {id:?} differs from handshake {expected_backend:?}"
            )))
        }
        Some(_) => {}
    }
    if response.results.len() != batch.len() {
        return Err(RemoteError::Protocol(format!(
            "expected results for {} samples, got {}",
            batch.len(),
            response.results.len()
        )));
    }
    for (i, (stats, tokens)) in response.results.iter().zip(batch).enumerate() {
        if stats.len() != tokens.len() {
            return Err(RemoteError::Protocol(format!(
                "sample {i} has {} tokens but {} positions were returned",
                tokens.len(),
                stats.len()
            )));
        }
        for (pos, s) in stats.iter().enumerate() {
            let probs_ok =
                (0.0..=1.0).contains(&s.actual_prob) && (0.0..=1.0).contains(&s.top_prob);
            if !probs_ok || s.rank == 0 || !(s.entropy.is_finite() && s.entropy >= 0.0) {
                return Err(RemoteError::Protocol(format!(
                    "sample {i} position {pos} carries invalid statistics {s:?}"
                )));
            }
        }
    }
    Ok(())
}
