use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::protocol::{
    DescriptorWire, ErrorResponse, StatsRequest, StatsResponse, DESCRIPTOR_PATH, PROTOCOL_VERSION,
    TOKEN_STATS_PATH,
};
use super::RemoteError;
use crate::lm::{Backend, LanguageModel};

/// Reference server exposing a local [`LanguageModel`] over the wire protocol.
/// Requests are handled one at a time.
pub struct LoopbackServer {
    server: Arc<Server>,
    addr: SocketAddr,
    model: Arc<dyn LanguageModel>,
    tokenizer_name: String,
}

impl LoopbackServer {
    /// Bind to `addr`; use port 0 for an ephemeral port.
    pub fn bind(
        addr: &str,
        model: Arc<dyn LanguageModel>,
        tokenizer_name: impl Into<String>,
    ) -> Result<Self, RemoteError> {
        let server = Server::http(addr).map_err(|e| RemoteError::Server(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| RemoteError::Server("server is not bound to an IP socket".into()))?;
        Ok(Self {
            server: Arc::new(server),
            addr,
            model,
            tokenizer_name: tokenizer_name.into(),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serve until the process exits.
    pub fn serve(&self) {
        for request in self.server.incoming_requests() {
            self.handle(request);
        }
    }

    /// Serve on a background thread until the handle is dropped.
    pub fn spawn(self) -> ServerHandle {
        let url = self.url();
        let server = Arc::clone(&self.server);
        let thread = std::thread::spawn(move || self.serve());
        ServerHandle {
            url,
            server,
            thread: Some(thread),
        }
    }

    fn handle(&self, mut request: Request) {
        let path = request.url().split('?').next().unwrap_or("").to_string();
        let method = request.method().clone();
        let (status, body) = if method == Method::Get && path.ends_with(DESCRIPTOR_PATH) {
            (200, self.descriptor())
        } else if method == Method::Post && path.ends_with(TOKEN_STATS_PATH) {
            let mut raw = String::new();
            match request.as_reader().read_to_string(&mut raw) {
                Ok(_) => self.token_stats(&raw),
                Err(e) => (400, error_body(&format!("unreadable body: {e}"))),
            }
        } else {
            (404, error_body(&format!("no route for {method} {path}")))
        };
        let header =
            Header::from_bytes("Content-Type", "application/json").expect("static header is valid");
        let response = Response::from_string(body)
            .with_status_code(status)
            .with_header(header);
        if let Err(e) = request.respond(response) {
            log::warn!("failed to send response: {e}");
        }
    }

    fn descriptor(&self) -> String {
        let wire = DescriptorWire {
            v: Some(PROTOCOL_VERSION),
            backend_id: Some(LanguageModel::backend_id(self.model.as_ref()).to_string()),
            tokenizer_name: Some(self.tokenizer_name.clone()),
            vocabulary_size: Some(self.model.vocabulary().len()),
        };
        serde_json::to_string(&wire).expect("descriptor serializes")
    }

    fn token_stats(&self, raw: &str) -> (u16, String) {
        let request: StatsRequest = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => return (400, error_body(&format!("malformed request: {e}"))),
        };
        if request.v != PROTOCOL_VERSION {
            return (
                400,
                error_body(&format!("unsupported version {}", request.v)),
            );
        }
        match self.model.batch_token_stats(&request.samples) {
            Ok(results) => {
                let response = StatsResponse {
                    v: Some(PROTOCOL_VERSION),
                    backend_id: Some(LanguageModel::backend_id(self.model.as_ref()).to_string()),
                    results,
                };
                (
                    200,
                    serde_json::to_string(&response).expect("response serializes"),
                )
            }
            Err(e) => (400, error_body(&e.to_string())),
        }
    }
}

fn error_body(message: &str) -> String {
    serde_json::to_string(&ErrorResponse {
        error: message.to_string(),
    })
    .expect("error serializes")
}

/// Running background server; stops when dropped.
pub struct ServerHandle {
    url: String,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}
