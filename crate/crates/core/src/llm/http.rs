//! Chat-completion transport over HTTP (OpenAI-compatible request shape).

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Transport, TransportError};

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpTransport {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Fatal(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
        })
    }
}

/// 408, 429 and 5xx are worth retrying; other statuses are not.
pub fn status_is_transient(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl Transport for HttpTransport {
    fn send(&self, prompt: &str, temperature: f64, max_tokens: u32) -> Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
            "stream": false,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                TransportError::Transient(e.to_string())
            } else {
                TransportError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", text.chars().take(300).collect::<String>());
            return Err(if status_is_transient(status) {
                TransportError::Transient(msg)
            } else {
                TransportError::Fatal(msg)
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| TransportError::Fatal(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Fatal("response has no message content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transient_statuses() {
        assert!(status_is_transient(429));
        assert!(status_is_transient(503));
        assert!(!status_is_transient(400));
        assert!(!status_is_transient(401));
    }

    #[test]
    fn unreachable_endpoint_is_transient() {
        // Port 9 on localhost: nothing listens, connection is refused.
        let t = HttpTransport::new("http://127.0.0.1:9/v1/chat/completions", "m", None, Duration::from_secs(2))
            .unwrap();
        assert!(matches!(t.send("hi", 1.0, 8), Err(TransportError::Transient(_))));
    }
}
