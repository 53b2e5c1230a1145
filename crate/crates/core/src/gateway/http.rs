use std::time::Duration;

use super::{Backend, BackendFailure, WireRequest};

/// OpenAI-compatible `POST <base_url>/chat/completions` client.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// The bearer token is read once from `api_key_env`; an unset variable
    /// means no Authorization header.
    pub fn new(base_url: &str, api_key_env: &str, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            agent,
        }
    }
}

impl Backend for HttpBackend {
    fn send(&self, request: &WireRequest, _timeout: Duration) -> Result<String, BackendFailure> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(t) => BackendFailure::Timeout(t.to_string()),
            other => BackendFailure::Connect(other.to_string()),
        })?;
        let code = resp.status().as_u16();
        let body =
            resp.into_body().read_to_string().map_err(|e| BackendFailure::Connect(format!("reading body: {e}")))?;
        if code == 200 {
            Ok(body)
        } else {
            Err(BackendFailure::Status { code, body })
        }
    }
}
