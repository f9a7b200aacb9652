//! Blocking chat-completions client.
//!
//! Sends `{"model", "messages": [{"role": "user", "content": prompt}],
//! "temperature"}` and reads `choices[0].message.content`. Token usage comes
//! from the response's `usage` object when present, otherwise from word
//! counts. The API key is read from an environment variable, never a flag.

use std::time::Duration;

use eventmem_core::gateway::{Completion, Provider, ProviderError, StructuredRequest, TokenUsage};
use eventmem_core::text::word_count;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f32,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            timeout_secs: 120,
        }
    }
}

pub struct HttpProvider {
    config: ProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("has_key", &self.api_key.is_some())
            .finish()
    }
}

impl HttpProvider {
    /// Reads the key from `config.api_key_env`; a missing key is allowed for
    /// local endpoints that need none.
    pub fn new(config: ProviderConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { config, api_key, agent }
    }

    pub fn with_model(mut self, model: &str) -> Self {
        self.config.model = model.to_string();
        self
    }
}

fn parse_reply(body: &Value, prompt: &str) -> Result<Completion, ProviderError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::BadResponse("no choices[0].message.content".into()))?
        .to_string();
    let reported = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64);
    let usage = match (reported("prompt_tokens"), reported("completion_tokens")) {
        (Some(p), Some(c)) => TokenUsage::new(p, c),
        _ => TokenUsage::new(word_count(prompt), word_count(&text)),
    };
    Ok(Completion { text, usage })
}

impl Provider for HttpProvider {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &StructuredRequest) -> Result<Completion, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": self.config.temperature,
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let value: Value = resp.body_mut().read_json().map_err(|e| ProviderError::BadResponse(format!("status {status}: {e}")))?;
        if !(200..300).contains(&status) {
            let msg = value.pointer("/error/message").and_then(Value::as_str).unwrap_or("no error message");
            return Err(ProviderError::BadResponse(format!("status {status}: {msg}")));
        }
        parse_reply(&value, &request.rendered_prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use eventmem_core::gateway::{Gateway, KeywordsOutput, Payload};

    /// Serves one canned HTTP response and returns the raw request.
    fn serve_once(status: &str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let status = status.to_string();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            let mut chunked = false;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line.to_ascii_lowercase().starts_with("transfer-encoding: chunked") {
                    chunked = true;
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0u8; len];
            reader.read_exact(&mut body_in).unwrap();
            while chunked {
                let mut size = String::new();
                reader.read_line(&mut size).unwrap();
                let n = usize::from_str_radix(size.trim(), 16).unwrap();
                let mut chunk = vec![0u8; n + 2];
                reader.read_exact(&mut chunk).unwrap();
                body_in.extend_from_slice(&chunk[..n]);
                chunked = n > 0;
            }
            let reply = format!(
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body_in).unwrap()
        });
        (url, handle)
    }

    fn provider(url: String, env: &str) -> HttpProvider {
        HttpProvider::new(ProviderConfig { endpoint: url, api_key_env: env.into(), timeout_secs: 10, ..ProviderConfig::default() })
    }

    #[test]
    fn round_trip_through_gateway() {
        let (url, server) = serve_once(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"{\"keywords\":[\"prius\"]}"}}],"usage":{"prompt_tokens":42,"completion_tokens":7}}"#,
        );
        std::env::set_var("EVENTMEM_TEST_KEY_A", "sk-test");
        let g = Gateway::new(std::sync::Arc::new(provider(url, "EVENTMEM_TEST_KEY_A")));
        let out: KeywordsOutput = g.call(Payload::QueryKeywords { question: "What car?".into() }).unwrap();
        assert_eq!(out.keywords, ["prius"]);
        let u = g.usage().retrieval;
        assert_eq!((u.prompt_tokens, u.completion_tokens), (42, 7));
        let request = server.join().unwrap();
        assert!(request.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let sent: Value = serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(sent["model"], "gpt-4o-mini");
        assert!(sent["messages"][0]["content"].as_str().unwrap().contains("What car?"));
    }

    #[test]
    fn http_error_is_bad_response() {
        let (url, server) = serve_once("429 Too Many Requests", r#"{"error":{"message":"slow down"}}"#);
        let p = provider(url, "EVENTMEM_TEST_KEY_UNSET");
        let g = Gateway::new(std::sync::Arc::new(p));
        let err = g.call::<KeywordsOutput>(Payload::QueryKeywords { question: "q".into() }).unwrap_err();
        assert!(err.to_string().contains("slow down"), "{err}");
        assert!(!server.join().unwrap().to_ascii_lowercase().contains("authorization"));
    }

    #[test]
    fn missing_usage_falls_back_to_word_counts() {
        let body = json!({"choices": [{"message": {"content": "two words"}}]});
        let c = parse_reply(&body, "one two three").unwrap();
        assert_eq!((c.usage.prompt_tokens, c.usage.completion_tokens), (3, 2));
        assert!(parse_reply(&json!({"choices": []}), "x").is_err());
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let p = provider(url, "EVENTMEM_TEST_KEY_UNSET");
        let g = Gateway::new(std::sync::Arc::new(p));
        let err = g.call::<KeywordsOutput>(Payload::QueryKeywords { question: "q".into() }).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
    }
}
