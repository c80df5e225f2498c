use std::time::Duration;

/// Raw HTTP exchange result; non-2xx statuses are responses, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    Io(String),
}

impl std::fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportFailure::Timeout => f.write_str("request timed out"),
            TransportFailure::Io(msg) => f.write_str(msg),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpRequest<'a> {
    pub url: &'a str,
    pub body: &'a str,
    pub api_key: Option<&'a str>,
    pub timeout: Duration,
}

/// Sends one JSON POST. Implementations must be callable from many threads.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest<'_>) -> Result<HttpResponse, TransportFailure>;
}

/// HTTPS transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest<'_>) -> Result<HttpResponse, TransportFailure> {
        let mut builder = self
            .agent
            .post(request.url)
            .config()
            .timeout_global(Some(request.timeout))
            .build()
            .header("Content-Type", "application/json")
            .header("Accept", "application/json");
        if let Some(key) = request.api_key {
            builder = builder.header("X-Api-Key", key);
        }
        let mut response = builder.send(request.body).map_err(|err| match err {
            ureq::Error::Timeout(_) => TransportFailure::Timeout,
            other => TransportFailure::Io(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Io(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}
