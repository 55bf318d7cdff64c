//! HTTP backends: the native `{text, mode, mask_index}` protocol and an adapter
//! for completions endpoints that echo prompt log-probabilities.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendDescriptor, EndpointConfig, Mode, ScoreRequest, ScoreResponse, ScoringBackend, ScoringError, WireProtocol, WireToken};

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    endpoint: EndpointConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

#[derive(Deserialize)]
struct EchoResponse {
    choices: Vec<EchoChoice>,
}

#[derive(Deserialize)]
struct EchoChoice {
    logprobs: EchoLogprobs,
}

#[derive(Deserialize)]
struct EchoLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

impl RemoteBackend {
    /// The bearer token is read from `endpoint.auth_token_env` when set.
    pub fn new(name: &str, endpoint: EndpointConfig) -> Result<Self, ScoringError> {
        let unavailable = |m: String| ScoringError::BackendUnavailable { backend: name.to_string(), message: m };
        let token = match &endpoint.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| unavailable(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| unavailable(e.to_string()))?;
        let descriptor = BackendDescriptor {
            name: name.to_string(),
            supports_clm: true,
            supports_mlm: endpoint.protocol == WireProtocol::Native,
            endpoint: Some(endpoint.clone()),
            fingerprint: format!(
                "{}|{:?}|{}",
                endpoint.base_url,
                endpoint.protocol,
                endpoint.model.as_deref().unwrap_or("")
            ),
        };
        Ok(RemoteBackend { descriptor, endpoint, client, token })
    }

    fn body(&self, req: &ScoreRequest) -> Result<serde_json::Value, ScoringError> {
        match self.endpoint.protocol {
            WireProtocol::Native => Ok(serde_json::to_value(req).expect("request serializes")),
            WireProtocol::EchoCompletions => {
                if req.mode == Mode::Mlm {
                    return Err(ScoringError::MaskUnsupported(self.descriptor.name.clone()));
                }
                let mut body = json!({"prompt": req.text, "max_tokens": 0, "echo": true, "logprobs": 1});
                if let Some(m) = &self.endpoint.model {
                    body["model"] = json!(m);
                }
                Ok(body)
            }
        }
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        let mut rb = self.client.post(&self.endpoint.base_url).json(body);
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        let resp = rb.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else {
            let retriable = status.is_server_error() || status.as_u16() == 429;
            Err((retriable, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())))
        }
    }

    fn decode(&self, req: &ScoreRequest, raw: &str) -> Result<ScoreResponse, ScoringError> {
        let invalid = |e: serde_json::Error| ScoringError::InvalidResponse(e.to_string());
        match self.endpoint.protocol {
            WireProtocol::Native => serde_json::from_str(raw).map_err(invalid),
            WireProtocol::EchoCompletions => {
                let r: EchoResponse = serde_json::from_str(raw).map_err(invalid)?;
                let lp = r
                    .choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| ScoringError::InvalidResponse("no choices in completion".into()))?
                    .logprobs;
                echo_tokens(&req.text, lp.tokens, lp.token_logprobs, lp.text_offset)
            }
        }
    }
}

/// Converts echoed prompt tokens to wire tokens with character spans.
fn echo_tokens(
    prompt: &str,
    tokens: Vec<String>,
    logprobs: Vec<Option<f64>>,
    offsets: Vec<usize>,
) -> Result<ScoreResponse, ScoringError> {
    if tokens.len() != logprobs.len() || tokens.len() != offsets.len() {
        return Err(ScoringError::InvalidResponse("echo logprobs arrays differ in length".into()));
    }
    let total = prompt.chars().count();
    let mut out = Vec::new();
    for ((text, logprob), start) in tokens.into_iter().zip(logprobs).zip(offsets) {
        if start >= total {
            // Generated (non-prompt) tokens.
            break;
        }
        let end = start + text.chars().count();
        out.push(WireToken { text, start, end, logprob });
    }
    Ok(ScoreResponse { tokens: out })
}

impl ScoringBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ScoringError> {
        let body = self.body(req)?;
        let mut last = String::new();
        for attempt in 0..=self.endpoint.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            match self.post_once(&body) {
                Ok(raw) => return self.decode(req, &raw),
                Err((retriable, msg)) => {
                    last = msg;
                    if !retriable {
                        break;
                    }
                }
            }
        }
        Err(ScoringError::BackendUnavailable { backend: self.descriptor.name.clone(), message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_offsets_become_spans() {
        let r = echo_tokens(
            "She added",
            vec!["She".into(), " added".into(), "\n".into()],
            vec![None, Some(-2.4), Some(-0.1)],
            vec![0, 3, 9],
        )
        .unwrap();
        assert_eq!(r.tokens.len(), 2);
        assert_eq!((r.tokens[1].start, r.tokens[1].end), (3, 9));
        assert!(echo_tokens("x", vec!["x".into()], vec![], vec![0]).is_err());
    }

    #[test]
    fn echo_protocol_has_no_mlm() {
        let mut ep = EndpointConfig::new("http://127.0.0.1:9/v1/completions");
        ep.protocol = WireProtocol::EchoCompletions;
        ep.model = Some("m".into());
        let b = RemoteBackend::new("echo", ep).unwrap();
        assert!(!b.descriptor().supports_mlm);
        let req = ScoreRequest { text: "a".into(), mode: Mode::Mlm, mask_index: Some(0) };
        assert!(matches!(b.score(&req), Err(ScoringError::MaskUnsupported(_))));
        let body = b.body(&ScoreRequest { text: "a b".into(), mode: Mode::Clm, mask_index: None }).unwrap();
        assert_eq!(body, json!({"prompt": "a b", "max_tokens": 0, "echo": true, "logprobs": 1, "model": "m"}));
    }

    #[test]
    fn missing_token_variable_is_unavailable() {
        let mut ep = EndpointConfig::new("http://127.0.0.1:9/score");
        ep.auth_token_env = Some("CAUSALREAD_TEST_DEFINITELY_UNSET".into());
        assert!(matches!(RemoteBackend::new("r", ep), Err(ScoringError::BackendUnavailable { .. })));
    }
}
