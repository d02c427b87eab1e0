//! Chat-completion style HTTP provider.
//!
//! Request and response mapping for one vendor-neutral shape:
//!
//! * `POST {endpoint}/chat/completions` with
//!   `{"model", "messages": [{"role": "user", "content"}], "temperature"}`,
//!   reading `choices[0].message.content`.
//! * `POST {endpoint}/embeddings` with `{"model", "input": [..]}`, reading
//!   `data[i].embedding`.
//!
//! The API key is read from the configured environment variable on every
//! call and sent as a bearer token. It is never logged or stored.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Provider, ProviderError};
use crate::config::ProviderConfig;

#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    api_key_env: String,
    model: String,
    embed_model: String,
}

impl HttpProvider {
    pub fn from_config(config: &ProviderConfig) -> Self {
        HttpProvider {
            endpoint: config
                .endpoint
                .clone()
                .unwrap_or_default()
                .trim_end_matches('/')
                .to_string(),
            api_key_env: config.api_key_env.clone().unwrap_or_default(),
            model: config.model_name.clone().unwrap_or_else(|| "default".into()),
            embed_model: config
                .embed_model_name
                .clone()
                .unwrap_or_else(|| "default-embedding".into()),
        }
    }

    fn post(&self, path: &str, body: Value, timeout: Duration) -> Result<Value, ProviderError> {
        let key = std::env::var(&self.api_key_env).map_err(|_| ProviderError::MissingKey(self.api_key_env.clone()))?;
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let response = agent
            .post(&format!("{}{path}", self.endpoint))
            .set("Authorization", &format!("Bearer {key}"))
            .send_json(body);
        match response {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| classify_io(&e).unwrap_or_else(|| ProviderError::Malformed(e.to_string()))),
            Err(ureq::Error::Status(429, _)) => Err(ProviderError::RateLimited),
            Err(ureq::Error::Status(code, _)) => Err(ProviderError::Status(code)),
            Err(ureq::Error::Transport(t)) => Err(classify_transport(&t)),
        }
    }
}

fn classify_io(e: &std::io::Error) -> Option<ProviderError> {
    matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock).then_some(ProviderError::Timeout)
}

fn classify_transport(t: &ureq::Transport) -> ProviderError {
    let text = t.to_string();
    if text.contains("timed out") || text.contains("Timeout") || text.contains("timeout") {
        ProviderError::Timeout
    } else {
        // ureq messages may echo the URL; never the headers.
        ProviderError::Transport(text)
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn generate(&self, prompt: &str, temperature: f64, timeout: Duration) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        });
        let value = self.post("/chat/completions", body, timeout)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
    }

    fn embed(&self, texts: &[String], timeout: Duration) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": self.embed_model, "input": texts });
        let value = self.post("/embeddings", body, timeout)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("missing data array".into()))?;
        data.iter()
            .map(|item| {
                item["embedding"]
                    .as_array()
                    .ok_or_else(|| ProviderError::Malformed("missing embedding".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| ProviderError::Malformed("non-numeric embedding".into()))
                    })
                    .collect()
            })
            .collect()
    }
}
