use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    BackendError, CompleteRequest, CompleteResponse, ErrorResponse, GenerationBackend, QaBackend,
    QaQuery, VqaRequest, VqaResponse,
};

/// Images larger than this are never inlined.
pub const MAX_INLINE_IMAGE_BYTES: u64 = 8 * 1024 * 1024;

fn client(timeout: Duration) -> Result<Client, BackendError> {
    Client::builder()
        .timeout(timeout)
        .connect_timeout(timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

fn post<Req: Serialize, Resp: DeserializeOwned>(
    client: &Client,
    url: &str,
    token: Option<&str>,
    body: &Req,
) -> Result<Resp, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().map_err(map_transport)?;
    let status = resp.status();
    let bytes = resp.bytes().map_err(map_transport)?;
    if !status.is_success() {
        let message = serde_json::from_slice::<ErrorResponse>(&bytes)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
        return Err(BackendError::HttpStatus {
            status: status.as_u16(),
            message,
        });
    }
    serde_json::from_slice(&bytes).map_err(|e| BackendError::MalformedResponse(e.to_string()))
}

fn map_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        return BackendError::Timeout;
    }
    // Connection failures surface as timeouts to the caller: the endpoint did
    // not answer within the configured window.
    if e.is_connect() {
        return BackendError::Timeout;
    }
    BackendError::Transport(e.to_string())
}

/// Generation client for `POST /v1/complete`.
pub struct HttpGenerator {
    name: String,
    url: String,
    token: Option<String>,
    client: Client,
}

impl HttpGenerator {
    pub fn new(base_url: &str, timeout: Duration, token: Option<String>) -> Result<Self, BackendError> {
        Ok(HttpGenerator {
            name: base_url.to_string(),
            url: endpoint(base_url, "/v1/complete"),
            token,
            client: client(timeout)?,
        })
    }
}

impl GenerationBackend for HttpGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, preamble: &str, input: &str) -> Result<String, BackendError> {
        let body = CompleteRequest {
            preamble: preamble.to_string(),
            input: input.to_string(),
        };
        let resp: CompleteResponse = post(&self.client, &self.url, self.token.as_deref(), &body)?;
        Ok(resp.text)
    }
}

/// QA client for `POST /v1/vqa`.
///
/// By default images travel by reference. With `inline_images` set, refs that
/// resolve to local files are sent base64-encoded instead.
pub struct HttpQa {
    name: String,
    url: String,
    token: Option<String>,
    inline_images: bool,
    client: Client,
}

impl HttpQa {
    pub fn new(base_url: &str, timeout: Duration, token: Option<String>) -> Result<Self, BackendError> {
        Ok(HttpQa {
            name: base_url.to_string(),
            url: endpoint(base_url, "/v1/vqa"),
            token,
            inline_images: false,
            client: client(timeout)?,
        })
    }

    pub fn with_inline_images(mut self, inline: bool) -> Self {
        self.inline_images = inline;
        self
    }

    fn request(&self, query: &QaQuery<'_>) -> Result<VqaRequest, BackendError> {
        let path = Path::new(query.image_ref);
        if self.inline_images && path.is_file() {
            let len = path
                .metadata()
                .map_err(|e| BackendError::Unavailable(format!("{}: {e}", query.image_ref)))?
                .len();
            if len > MAX_INLINE_IMAGE_BYTES {
                return Err(BackendError::Unavailable(format!(
                    "{}: {len} bytes exceeds the inline image cap",
                    query.image_ref
                )));
            }
            let bytes = std::fs::read(path)
                .map_err(|e| BackendError::Unavailable(format!("{}: {e}", query.image_ref)))?;
            return Ok(VqaRequest {
                question: query.question.to_string(),
                image_ref: None,
                image_b64: Some(base64::engine::general_purpose::STANDARD.encode(bytes)),
            });
        }
        Ok(VqaRequest {
            question: query.question.to_string(),
            image_ref: Some(query.image_ref.to_string()),
            image_b64: None,
        })
    }
}

impl QaBackend for HttpQa {
    fn name(&self) -> &str {
        &self.name
    }

    fn ask(&self, query: &QaQuery<'_>) -> Result<String, BackendError> {
        let body = self.request(query)?;
        let resp: VqaResponse = post(&self.client, &self.url, self.token.as_deref(), &body)?;
        Ok(resp.answer)
    }
}
